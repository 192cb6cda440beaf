#include "neurotopo/dsp.hpp"
#include "neurotopo/error.hpp"
#include "neurotopo/montage.hpp"
#include "neurotopo/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace neurotopo;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.n_subjects = 1;
  cfg.trials_per_hand = 1;
  cfg.seed = 11;
  return cfg;
}

double mu_ratio(const EegTrial& t, const char* channel) {
  const auto ch = *builtin_montage32().index_of(channel);
  const BandPowerSpec band;
  const double move = morlet_band_power(t.samples[ch], t.fs, band, {5.5, 8.5});
  const double base = morlet_band_power(t.samples[ch], t.fs, band, {1.0, 4.5});
  return move / base;
}

} // namespace

TEST(Synthgen, TrialShapeAndMetadata) {
  const auto t = generate_trial(small_config(), 3, 7, Hand::Left);
  EXPECT_EQ(t.channels(), 32u);
  EXPECT_EQ(t.length(), 10000u);
  EXPECT_EQ(t.subject_id, 3);
  EXPECT_EQ(t.trial_id, 7);
  EXPECT_EQ(label_of(t.label), 1);
  EXPECT_EQ(label_of(Hand::Right), 0);
  for (const auto& ch : t.samples)
    for (double v : ch) ASSERT_TRUE(std::isfinite(v));
}

TEST(Synthgen, Deterministic) {
  const auto cfg = small_config();
  const auto a = generate_trial(cfg, 0, 0, Hand::Right);
  const auto b = generate_trial(cfg, 0, 0, Hand::Right);
  EXPECT_EQ(a.samples, b.samples);
  const auto c = generate_trial(cfg, 0, 1, Hand::Right);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Synthgen, AmplitudeBound) {
  const auto cfg = small_config();
  const double bound = cfg.mu_amp + 6 * cfg.noise_amp + cfg.line_noise_amp + 5 * cfg.pink_amp;
  for (Hand h : {Hand::Left, Hand::Right}) {
    const auto t = generate_trial(cfg, 0, 0, h);
    for (const auto& ch : t.samples)
      for (double v : ch) ASSERT_LE(std::abs(v), bound);
  }
}

TEST(Synthgen, ContralateralDesynchronization) {
  // Averaged over a few trials so the per-trial noise does not dominate.
  SynthConfig cfg = small_config();
  double c4 = 0, c3 = 0;
  const int n = 6;
  for (int k = 0; k < n; ++k) {
    const auto t = preprocess_trial(generate_trial(cfg, 0, k, Hand::Left));
    c4 += mu_ratio(t, "C4") / n;
    c3 += mu_ratio(t, "C3") / n;
  }
  EXPECT_LT(c4, 0.7);
  EXPECT_GE(c3, 0.8);
  EXPECT_LE(c3, 1.25);
}

TEST(Synthgen, SingleTrialErdExample) {
  const auto t = generate_trial(small_config(), 0, 0, Hand::Left);
  EXPECT_LT(mu_ratio(t, "C4"), 0.7);
  const double ipsi = mu_ratio(t, "C3");
  EXPECT_GE(ipsi, 0.8);
  EXPECT_LE(ipsi, 1.25);
}

TEST(Synthgen, RightHandMirrors) {
  const auto t = preprocess_trial(generate_trial(small_config(), 0, 0, Hand::Right));
  EXPECT_LT(mu_ratio(t, "C3"), 0.7);
  EXPECT_GE(mu_ratio(t, "C4"), 0.8);
}

TEST(Synthgen, CohortShapeAndOrder) {
  SynthConfig cfg;
  cfg.n_subjects = 2;
  cfg.trials_per_hand = 2;
  const auto trials = generate_cohort(cfg);
  ASSERT_EQ(trials.size(), 8u);
  int left = 0;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    EXPECT_EQ(trials[i].subject_id, static_cast<int>(i / 4));
    EXPECT_EQ(trials[i].label, (i % 4) < 2 ? Hand::Right : Hand::Left);
    left += label_of(trials[i].label);
  }
  EXPECT_EQ(left, 4);
  cfg.n_subjects = 1;
  cfg.trials_per_hand = 1;
  const auto two = generate_cohort(cfg);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_NE(two[0].label, two[1].label);
}

TEST(Synthgen, CohortSizeAndBalance) {
  SynthConfig cfg;
  cfg.n_subjects = 3;
  cfg.trials_per_hand = 2;
  const auto cohort = generate_cohort(cfg);
  ASSERT_EQ(cohort.size(), 12u);
  std::set<std::pair<int, int>> ids;
  int left = 0;
  for (const auto& t : cohort) {
    ids.insert({t.subject_id, t.trial_id});
    left += t.label == Hand::Left ? 1 : 0;
  }
  EXPECT_EQ(ids.size(), 12u);
  EXPECT_EQ(left, 6);
}

TEST(Synthgen, ErdEnvelopeShape) {
  const TrialTimeline tl;
  EXPECT_DOUBLE_EQ(erd_envelope(tl, 1.0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(erd_envelope(tl, 6.0, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(erd_envelope(tl, 9.5, 0.5), 1.0);
  double prev = 1.0;
  for (double t = 3.5; t <= 3.75; t += 0.01) {
    const double e = erd_envelope(tl, t, 0.5);
    EXPECT_LE(e, prev + 1e-12);
    prev = e;
  }
}

TEST(Synthgen, ConfigValidation) {
  SynthConfig cfg;
  cfg.erd_depth = 0.0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg.erd_depth = 1.5;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = SynthConfig{};
  cfg.noise_amp = -1;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = SynthConfig{};
  cfg.n_subjects = 0;
  EXPECT_THROW(generate_cohort(cfg), DomainError);
}

TEST(Synthgen, FileName) {
  EegTrial t;
  t.subject_id = 2;
  t.trial_id = 31;
  EXPECT_EQ(trial_file_name(t), "s002_t031.csv");
}
