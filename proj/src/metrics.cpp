#include "neurotopo/metrics.hpp"

#include "neurotopo/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <vector>

namespace neurotopo {

void Confusion::add(int truth, int predicted) {
  if (truth < 0 || truth > 1 || predicted < 0 || predicted > 1) throw DomainError("metrics", "labels must be 0 or 1");
  ++counts[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::size_t Confusion::total() const {
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

double Confusion::accuracy() const {
  const std::size_t n = total();
  if (n == 0) throw DomainError("metrics", "empty confusion matrix");
  return static_cast<double>(counts[0][0] + counts[1][1]) / static_cast<double>(n);
}

double Confusion::recall(int label) const {
  const auto& row = counts.at(static_cast<std::size_t>(label));
  const std::size_t n = row[0] + row[1];
  if (n == 0) return 0.0;
  return static_cast<double>(row[static_cast<std::size_t>(label)]) / static_cast<double>(n);
}

double Confusion::balanced_accuracy() const {
  double total = 0.0;
  int present = 0;
  for (int label = 0; label < 2; ++label) {
    if (counts[static_cast<std::size_t>(label)][0] + counts[static_cast<std::size_t>(label)][1] == 0) continue;
    total += recall(label);
    ++present;
  }
  return present ? total / present : 0.0;
}

std::string confusion_csv(const Confusion& c) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "true,pred0,pred1\n0,%zu,%zu\n1,%zu,%zu\n", c.counts[0][0], c.counts[0][1],
                c.counts[1][0], c.counts[1][1]);
  return buf;
}

Confusion parse_confusion_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "true,pred0,pred1") throw IoError("metrics", "bad confusion CSV header");
  Confusion c;
  for (int row = 0; row < 2; ++row) {
    if (!std::getline(in, line)) throw IoError("metrics", "confusion CSV truncated");
    unsigned long long a = 0, b = 0;
    int label = -1;
    if (std::sscanf(line.c_str(), "%d,%llu,%llu", &label, &a, &b) != 3 || label != row) {
      throw IoError("metrics", "bad confusion CSV row: " + line);
    }
    c.counts[static_cast<std::size_t>(row)] = {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
  }
  return c;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels, int positive_label) {
  if (scores.size() != labels.size()) throw DomainError("metrics", "scores and labels differ in length");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == positive_label) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw DomainError("metrics", "AUC needs both classes");
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(negatives));
}

ThresholdChoice choose_threshold(std::span<const double> scores, std::span<const int> labels, int normal_label) {
  if (scores.size() != labels.size()) throw DomainError("metrics", "scores and labels differ in length");
  std::size_t normals = 0;
  for (int l : labels) normals += l == normal_label ? 1 : 0;
  const std::size_t anomalies = labels.size() - normals;
  if (normals == 0 || anomalies == 0) throw DomainError("metrics", "threshold calibration needs both classes");

  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  const double spread = sorted.back() - sorted.front();
  const double below = spread > 0 ? spread / 2 : (sorted.front() != 0 ? std::abs(sorted.front()) / 2 : 1.0);
  std::vector<double> candidates{sorted.front() - below};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back((sorted[i] + sorted[i + 1]) / 2);

  ThresholdChoice best{candidates.front(), -1.0};
  for (double t : candidates) {
    std::size_t normal_ok = 0, anomaly_ok = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool flagged = scores[i] > t;
      if (labels[i] == normal_label) {
        normal_ok += flagged ? 0 : 1;
      } else {
        anomaly_ok += flagged ? 1 : 0;
      }
    }
    const double ba = 0.5 * (static_cast<double>(normal_ok) / normals + static_cast<double>(anomaly_ok) / anomalies);
    if (ba > best.balanced_accuracy + 1e-12) best = {t, ba};
  }
  return best;
}

} // namespace neurotopo
