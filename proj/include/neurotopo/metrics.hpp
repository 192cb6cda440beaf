#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>

namespace neurotopo {

// counts[true_label][predicted_label]; label 1 = left hand, 0 = right hand.
struct Confusion {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  void add(int truth, int predicted);
  std::size_t total() const;
  double accuracy() const;
  double recall(int label) const;
  // Mean recall over the classes that occur.
  double balanced_accuracy() const;

  bool operator==(const Confusion&) const = default;
};

// "true,pred0,pred1" header then one row per true label.
std::string confusion_csv(const Confusion& c);
Confusion parse_confusion_csv(const std::string& text);

// Probability that a random positive scores above a random negative (ties
// count one half).
double roc_auc(std::span<const double> scores, std::span<const int> labels, int positive_label);

struct ThresholdChoice {
  double threshold{0.0};
  double balanced_accuracy{0.0};
};

// Predicts the anomalous class when score > threshold. Candidates are the
// midpoints between consecutive distinct scores plus one below the minimum;
// the smallest threshold reaching the best balanced accuracy wins.
ThresholdChoice choose_threshold(std::span<const double> scores, std::span<const int> labels, int normal_label);

} // namespace neurotopo
