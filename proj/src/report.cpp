#include "neurotopo/report.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/fileio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace neurotopo {

namespace {

using Json = nlohmann::ordered_json;

// Rows are true labels, columns predictions, keyed for readability.
Json confusion_json(const Confusion& c) {
  Json j;
  j["true0"] = {{"pred0", c.counts[0][0]}, {"pred1", c.counts[0][1]}};
  j["true1"] = {{"pred0", c.counts[1][0]}, {"pred1", c.counts[1][1]}};
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

} // namespace

Report cnn_report(const TrainReport& train, const CnnConfig& cfg) {
  if (train.per_epoch.empty()) throw DomainError("report", "training report has no epochs");
  Json j;
  j["kind"] = "cnn-train";
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  Json epochs = Json::array();
  for (std::size_t e = 0; e < train.per_epoch.size(); ++e) {
    const auto& s = train.per_epoch[e];
    epochs.push_back({{"epoch", e + 1}, {"trainLoss", s.train_loss}, {"trainAcc", s.train_acc}, {"testAcc", s.test_acc}});
  }
  j["perEpoch"] = epochs;
  j["testAccuracy"] = train.per_epoch.back().test_acc;
  j["finalConfusion"] = confusion_json(train.final_confusion);
  return {dump(j), train.final_confusion};
}

Report cnn_eval_report(const Evaluation& eval) {
  Json j;
  j["kind"] = "cnn-eval";
  j["accuracy"] = eval.accuracy;
  j["confusion"] = confusion_json(eval.confusion);
  return {dump(j), eval.confusion};
}

Report aae_train_report(const AaeHistory& history, const AaeConfig& cfg, double threshold) {
  if (history.epochs.empty()) throw DomainError("report", "training history is empty");
  Json j;
  j["kind"] = "aae-train";
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["normalClass"] = cfg.normal_class;
  j["labeledFraction"] = cfg.labeled_fraction;
  j["threshold"] = threshold;
  Json epochs = Json::array();
  for (std::size_t e = 0; e < history.epochs.size(); ++e) {
    const auto& s = history.epochs[e];
    epochs.push_back({{"epoch", e + 1}, {"lossD", s.loss_d}, {"lossG", s.loss_g}, {"realReconstruction", s.real_reconstruction}});
  }
  j["history"] = epochs;
  return {dump(j), Confusion{}};
}

Report aae_eval_report(const AaeEvaluation& eval, double threshold) {
  Json j;
  j["kind"] = "aae-eval";
  j["threshold"] = threshold;
  j["accuracy"] = eval.accuracy;
  j["balancedAccuracy"] = eval.balanced_accuracy;
  j["auc"] = eval.auc;
  j["confusion"] = confusion_json(eval.confusion);
  return {dump(j), eval.confusion};
}

GrayImage confusion_heatmap(const Confusion& c, int cell) {
  if (cell < 1) throw DomainError("report", "heatmap cell size must be positive");
  std::size_t peak = 0;
  for (const auto& row : c.counts) peak = std::max({peak, row[0], row[1]});
  GrayImage img(2 * cell, 2 * cell);
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 2; ++p) {
      const double level = peak ? 255.0 * static_cast<double>(c.counts[t][p]) / static_cast<double>(peak) : 0.0;
      const auto v = static_cast<std::uint8_t>(std::lround(level));
      for (int y = t * cell; y < (t + 1) * cell; ++y)
        for (int x = p * cell; x < (p + 1) * cell; ++x) img.at(x, y) = v;
    }
  return img;
}

std::filesystem::path confusion_csv_path(const std::filesystem::path& report) {
  auto p = report;
  return p.replace_extension(".confusion.csv");
}

std::filesystem::path confusion_pgm_path(const std::filesystem::path& report) {
  auto p = report;
  return p.replace_extension(".confusion.pgm");
}

void emit_report(const Report& report, const std::filesystem::path& path) {
  if (report.json.empty() || report.confusion.total() == 0) throw DomainError("report", "report is empty");
  write_file(path, report.json);
  write_file(confusion_csv_path(path), confusion_csv(report.confusion));
  write_pgm(confusion_pgm_path(path), confusion_heatmap(report.confusion));
}

} // namespace neurotopo
