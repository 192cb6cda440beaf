#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace neurotopo {

enum class Hand : int { Right = 0, Left = 1 };

inline int label_of(Hand h) { return static_cast<int>(h); }

struct TrialTimeline {
  double fixation_start{0.0};
  double arrow_at{2.0};
  double movement_start{3.5};
  double trial_len{10.0};
  double analysis_start{5.5};
  double analysis_end{8.5};
  // ERD is released this long before the end of the trial.
  double movement_tail{1.5};
  double ramp{0.25};

  void validate() const;
};

struct EegTrial {
  int subject_id{0};
  int trial_id{0};
  Hand label{Hand::Right};
  double fs{1000.0};
  // samples[channel][sample], microvolts, channels in montage order.
  std::vector<std::vector<double>> samples;

  std::size_t channels() const { return samples.size(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration() const { return static_cast<double>(length()) / fs; }
};

struct SynthConfig {
  int n_subjects{6};
  int trials_per_hand{20};
  double fs{1000.0};
  double mu_freq{10.0};
  double mu_amp{10.0};
  double erd_depth{0.5};
  double noise_amp{1.0};       // white sensor noise std-dev, truncated at 6 sigma
  double pink_amp{3.0};        // 1/f background RMS, clipped at 5x
  double line_noise_amp{5.0};  // 50 Hz, common phase across channels
  std::uint64_t seed{1};
  TrialTimeline timeline;

  void validate() const;
};

// Per-sample ERD gain envelope for the movement period: 1 outside, (1 - depth)
// inside, with raised-cosine transitions of timeline.ramp seconds.
double erd_envelope(const TrialTimeline& tl, double t, double depth);

EegTrial generate_trial(const SynthConfig& cfg, int subject_id, int trial_id, Hand label);

// Order: subject, then hand (Right before Left), then trial index.
std::vector<EegTrial> generate_cohort(const SynthConfig& cfg);

// File name used for a trial inside a cohort directory.
std::string trial_file_name(const EegTrial& trial);

} // namespace neurotopo
