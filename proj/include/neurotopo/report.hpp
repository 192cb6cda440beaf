#pragma once

#include "neurotopo/aae.hpp"
#include "neurotopo/cnn.hpp"
#include "neurotopo/image.hpp"
#include "neurotopo/metrics.hpp"

#include <filesystem>
#include <string>

namespace neurotopo {

// A finished evaluation: a JSON document plus the confusion matrix it describes.
struct Report {
  std::string json;  // serialized, deterministic key order
  Confusion confusion;
};

Report cnn_report(const TrainReport& train, const CnnConfig& cfg);
Report cnn_eval_report(const Evaluation& eval);
Report aae_train_report(const AaeHistory& history, const AaeConfig& cfg, double threshold);
Report aae_eval_report(const AaeEvaluation& eval, double threshold);

// 2x2 grid of `cell`-pixel squares, intensity proportional to the cell count
// (the largest count maps to 255).
GrayImage confusion_heatmap(const Confusion& c, int cell = 32);

// Paths of the companion files written next to a report.
std::filesystem::path confusion_csv_path(const std::filesystem::path& report);
std::filesystem::path confusion_pgm_path(const std::filesystem::path& report);

// Writes the JSON report, the confusion CSV and the heatmap PGM.
void emit_report(const Report& report, const std::filesystem::path& path);

} // namespace neurotopo
