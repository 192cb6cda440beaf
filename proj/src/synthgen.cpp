#include "neurotopo/synthgen.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/montage.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace neurotopo {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLineHz = 50.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6E6575726F746F70ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

double truncated_normal(std::mt19937_64& rng, double sigma, double limit) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double z = n(rng);
    if (std::abs(z) <= limit) return sigma * z;
  }
}

// Three-pole pink shaping filter (about -10 dB/decade over the EEG band).
struct PinkShaper {
  double s0{0.0}, s1{0.0}, s2{0.0};

  double step(double w) {
    s0 = 0.99765 * s0 + w * 0.0990460;
    s1 = 0.96300 * s1 + w * 0.2965164;
    s2 = 0.57000 * s2 + w * 1.0526913;
    return s0 + s1 + s2 + w * 0.1848;
  }
};

// Output RMS of the shaper for unit-variance white input.
double pink_gain() {
  static const double gain = [] {
    PinkShaper impulse;
    double energy = 0.0;
    double h = impulse.step(1.0);
    energy += h * h;
    for (int i = 0; i < 20000; ++i) {
      h = impulse.step(0.0);
      energy += h * h;
    }
    return std::sqrt(energy);
  }();
  return gain;
}

double raised_cosine(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return 0.5 - 0.5 * std::cos(std::numbers::pi * u);
}

constexpr double kMuSpread = 0.3;   // spatial std-dev of the mu generators (disc units)
constexpr double kErdSpread = 0.2;  // spatial std-dev of the desynchronized patch

} // namespace

void TrialTimeline::validate() const {
  if (!(0.0 <= fixation_start && fixation_start < arrow_at && arrow_at < movement_start &&
        movement_start < trial_len)) {
    throw DomainError("synth", "timeline must satisfy 0 <= fixation < arrow < movement < trial length");
  }
  if (!(movement_start + 2 * ramp <= trial_len - movement_tail)) {
    throw DomainError("synth", "movement period too short for its ramps");
  }
}

void SynthConfig::validate() const {
  timeline.validate();
  if (n_subjects < 1) throw DomainError("synth", "n_subjects must be >= 1");
  if (trials_per_hand < 1) throw DomainError("synth", "trials_per_hand must be >= 1");
  if (!(erd_depth > 0.0 && erd_depth <= 1.0)) throw DomainError("synth", "erd_depth must lie in (0, 1]");
  if (mu_amp < 0 || noise_amp < 0 || pink_amp < 0 || line_noise_amp < 0) {
    throw DomainError("synth", "amplitudes must be non-negative");
  }
  if (!(fs > 2 * kLineHz) || !(mu_freq > 0.0 && mu_freq < fs / 2)) {
    throw DomainError("synth", "sampling rate or mu frequency out of range");
  }
}

double erd_envelope(const TrialTimeline& tl, double t, double depth) {
  const double on = tl.movement_start;
  const double off = tl.trial_len - tl.movement_tail;
  if (t <= on || t >= off) return 1.0;
  const double rise = raised_cosine((t - on) / tl.ramp);
  const double fall = raised_cosine((off - t) / tl.ramp);
  return 1.0 - depth * std::min(rise, fall);
}

EegTrial generate_trial(const SynthConfig& cfg, int subject_id, int trial_id, Hand label) {
  cfg.validate();
  const Montage& montage = builtin_montage32();
  const auto n = static_cast<std::size_t>(std::llround(cfg.timeline.trial_len * cfg.fs));

  // Subject-level traits: individual mu frequency and per-channel gain/phase.
  std::mt19937_64 subject_rng(mix_seed({cfg.seed, 0x5375626AULL, static_cast<std::uint64_t>(subject_id)}));
  std::normal_distribution<double> unit(0.0, 1.0);
  const double mu_freq = cfg.mu_freq + std::clamp(0.3 * unit(subject_rng), -0.8, 0.8);
  std::array<double, kChannelCount> gain_jitter{};
  std::array<double, kChannelCount> phase_offset{};
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    gain_jitter[c] = std::clamp(1.0 + 0.1 * unit(subject_rng), 0.7, 1.3);
    phase_offset[c] = 0.3 * unit(subject_rng);
  }

  std::mt19937_64 rng(mix_seed({cfg.seed, static_cast<std::uint64_t>(subject_id),
                                static_cast<std::uint64_t>(trial_id),
                                static_cast<std::uint64_t>(label_of(label))}));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double trial_amp = 0.75 + 0.25 * uniform(rng);
  const double mu_phase = kTwoPi * uniform(rng);
  const double line_phase = kTwoPi * uniform(rng);

  const Vec2 c3 = montage.find("C3").pos2d;
  const Vec2 c4 = montage.find("C4").pos2d;
  const Vec2 cz = montage.find("Cz").pos2d;
  const Vec2 contra = label == Hand::Left ? c4 : c3;

  EegTrial trial;
  trial.subject_id = subject_id;
  trial.trial_id = trial_id;
  trial.label = label;
  trial.fs = cfg.fs;
  trial.samples.assign(kChannelCount, std::vector<double>(n, 0.0));

  std::vector<double> envelope(n);
  for (std::size_t i = 0; i < n; ++i) {
    envelope[i] = erd_envelope(cfg.timeline, static_cast<double>(i) / cfg.fs, 1.0);
  }
  const double pink_scale = cfg.pink_amp / pink_gain();

  for (std::size_t c = 0; c < kChannelCount; ++c) {
    const Vec2 p = montage[c].pos2d;
    double peak = 0.0;
    for (const Vec2& m : {c3, c4, cz}) {
      const double d = distance(p, m);
      peak = std::max(peak, std::exp(-d * d / (2 * kMuSpread * kMuSpread)));
    }
    const double spatial = std::min(1.0, (0.25 + 0.75 * peak) * gain_jitter[c]);
    const double amp = cfg.mu_amp * spatial * trial_amp;
    const double d_contra = distance(p, contra);
    const double erd_weight = std::exp(-d_contra * d_contra / (2 * kErdSpread * kErdSpread));
    // envelope holds 1 - ramp(t); rescale the suppression by depth and locality.
    const double depth = cfg.erd_depth * erd_weight;

    PinkShaper shaper;
    for (int i = 0; i < 2000; ++i) shaper.step(truncated_normal(rng, 1.0, 6.0));

    auto& row = trial.samples[c];
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / cfg.fs;
      const double erd = 1.0 - depth * (1.0 - envelope[i]);
      const double mu = amp * erd * std::sin(kTwoPi * mu_freq * t + mu_phase + phase_offset[c]);
      const double pink = std::clamp(pink_scale * shaper.step(truncated_normal(rng, 1.0, 6.0)),
                                     -5.0 * cfg.pink_amp, 5.0 * cfg.pink_amp);
      const double white = cfg.noise_amp > 0 ? truncated_normal(rng, cfg.noise_amp, 6.0) : 0.0;
      const double line = cfg.line_noise_amp * std::sin(kTwoPi * kLineHz * t + line_phase);
      row[i] = mu + pink + white + line;
    }
  }
  return trial;
}

std::vector<EegTrial> generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<EegTrial> trials;
  trials.reserve(static_cast<std::size_t>(cfg.n_subjects) * 2 * cfg.trials_per_hand);
  for (int s = 0; s < cfg.n_subjects; ++s) {
    for (Hand h : {Hand::Right, Hand::Left}) {
      for (int k = 0; k < cfg.trials_per_hand; ++k) {
        const int trial_id = (h == Hand::Right ? 0 : cfg.trials_per_hand) + k;
        trials.push_back(generate_trial(cfg, s, trial_id, h));
      }
    }
  }
  return trials;
}

std::string trial_file_name(const EegTrial& trial) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "s%03d_t%03d.csv", trial.subject_id, trial.trial_id);
  return buf;
}

} // namespace neurotopo
