#include "neurotopo/trial_io.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/fileio.hpp"
#include "neurotopo/montage.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace neurotopo {

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

double parse_number(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw IoError("trial", "malformed number '" + std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw IoError("trial", "malformed integer '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (;;) {
    const std::size_t at = s.find(sep, start);
    if (at == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, at - start));
    start = at + 1;
  }
}

} // namespace

std::string encode_trial(const EegTrial& trial) {
  std::string out = "fs=";
  append_number(out, trial.fs);
  out += ",channels=";
  const auto names = builtin_montage32().names();
  if (trial.channels() != names.size()) throw DomainError("trial", "trial must have 32 channels");
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (c) out += ',';
    out += names[c];
  }
  out += ",label=" + std::to_string(label_of(trial.label));
  out += ",subject=" + std::to_string(trial.subject_id);
  out += ",trial=" + std::to_string(trial.trial_id);
  out += '\n';
  out.reserve(out.size() + trial.length() * trial.channels() * 20);
  for (std::size_t i = 0; i < trial.length(); ++i) {
    for (std::size_t c = 0; c < trial.channels(); ++c) {
      if (c) out += ',';
      append_number(out, trial.samples[c][i]);
    }
    out += '\n';
  }
  return out;
}

EegTrial decode_trial(const std::string& text) {
  const std::size_t eol = text.find('\n');
  if (eol == std::string::npos) throw IoError("trial", "missing header line");
  const std::string_view header(text.data(), eol);

  EegTrial trial;
  std::vector<std::string> channels;
  bool have_fs = false, have_label = false, have_subject = false, have_trial = false;
  std::string_view key;
  for (std::string_view tok : split(header, ',')) {
    const std::size_t eq = tok.find('=');
    std::string_view value = tok;
    if (eq != std::string_view::npos) {
      key = tok.substr(0, eq);
      value = tok.substr(eq + 1);
    } else if (key != "channels") {
      throw IoError("trial", "malformed header token '" + std::string(tok) + "'");
    }
    if (key == "fs") {
      trial.fs = parse_number(value);
      have_fs = true;
    } else if (key == "channels") {
      channels.emplace_back(value);
    } else if (key == "label") {
      const int label = parse_int(value);
      if (label != 0 && label != 1) throw IoError("trial", "label must be 0 or 1");
      trial.label = static_cast<Hand>(label);
      have_label = true;
    } else if (key == "subject") {
      trial.subject_id = parse_int(value);
      have_subject = true;
    } else if (key == "trial") {
      trial.trial_id = parse_int(value);
      have_trial = true;
    } else {
      throw IoError("trial", "unknown header key '" + std::string(key) + "'");
    }
  }
  if (!(have_fs && have_label && have_subject && have_trial)) throw IoError("trial", "incomplete header");
  if (channels != builtin_montage32().names()) throw IoError("trial", "channel list does not match the montage");

  trial.samples.assign(channels.size(), {});
  std::size_t pos = eol + 1;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != channels.size()) throw IoError("trial", "row has wrong column count");
    for (std::size_t c = 0; c < cols.size(); ++c) trial.samples[c].push_back(parse_number(cols[c]));
  }
  for (const auto& row : trial.samples) {
    if (!std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
      throw IoError("trial", "non-finite sample");
    }
  }
  return trial;
}

void write_trial(const std::filesystem::path& path, const EegTrial& trial) {
  write_file(path, encode_trial(trial));
}

EegTrial read_trial(const std::filesystem::path& path) {
  try {
    return decode_trial(read_file_text(path));
  } catch (const IoError& e) {
    throw IoError(e.stage(), path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> list_trial_files(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("trial", "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

} // namespace neurotopo
