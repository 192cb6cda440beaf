#pragma once

#include "neurotopo/synthgen.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace neurotopo {

// Header line
//   fs=1000,channels=Fp1,Fp2,...,label=<0|1>,subject=<n>,trial=<n>
// followed by one CSV row per sample with one column per channel. Values use
// the shortest decimal form that round-trips the double exactly.
std::string encode_trial(const EegTrial& trial);
EegTrial decode_trial(const std::string& text);

void write_trial(const std::filesystem::path& path, const EegTrial& trial);
EegTrial read_trial(const std::filesystem::path& path);

// Trial files of a directory in lexicographic file-name order.
std::vector<std::filesystem::path> list_trial_files(const std::filesystem::path& dir);

} // namespace neurotopo
