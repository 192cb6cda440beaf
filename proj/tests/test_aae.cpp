#include "neurotopo/aae.hpp"
#include "neurotopo/error.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace neurotopo;

namespace {

AaeConfig small_config(std::uint64_t seed = 1) {
  AaeConfig cfg;
  cfg.input_width = 16;
  cfg.input_height = 8;
  cfg.channels = {4, 8, 8};
  cfg.epochs = 3;
  cfg.batch = 4;
  cfg.labeled_fraction = 0.5;
  cfg.seed = seed;
  return cfg;
}

// Zero weights everywhere, output bias c: the autoencoder emits c at every pixel.
template <typename T>
void make_constant(const ConvAutoencoder<T>& ae, double c) {
  for (const auto& p : ae.params()) p->value.fill(T{0});
  ae.params().back()->value.fill(static_cast<T>(c));
}

double l1(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

LabeledImages random_images(std::size_t n, int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  LabeledImages out;
  for (std::size_t i = 0; i < n; ++i) {
    GrayImage img(w, h);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(d(rng));
    out.images.push_back(img);
    out.labels.push_back(static_cast<int>(i % 2));
  }
  return out;
}

std::vector<std::vector<float>> snapshot(const ConvAutoencoder<float>& ae) {
  std::vector<std::vector<float>> out;
  for (const auto& p : ae.params()) out.emplace_back(p->value.values().begin(), p->value.values().end());
  return out;
}

} // namespace

TEST(AaeConfig, Validation) {
  AaeConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.labeled_fraction = 0.0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg.labeled_fraction = 1.0;
  EXPECT_NO_THROW(cfg.validate());
  cfg.labeled_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = AaeConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = AaeConfig{};
  cfg.input_width = 60;
  EXPECT_THROW(cfg.validate(), DomainError);
  cfg = AaeConfig{};
  cfg.normal_class = 2;
  EXPECT_THROW(cfg.validate(), DomainError);
  EXPECT_THROW(AaeModel<float>{cfg}, DomainError);
}

TEST(Autoencoder, FullyConvolutionalLayout) {
  AaeModel<float> m(AaeConfig{});
  for (const auto& name : m.generator.param_names()) EXPECT_EQ(name.rfind("G.", 0), 0u);
  for (const auto& name : m.discriminator.param_names()) EXPECT_EQ(name.rfind("D.", 0), 0u);
  for (const auto& p : m.generator.params()) EXPECT_TRUE(p->value.rank() == 4 || p->value.rank() == 1);
  EXPECT_EQ(m.generator.params().size(), 14u);
  EXPECT_EQ(m.generator.params()[0]->value.shape(), (Shape{16, 1, 4, 4}));
  EXPECT_EQ(m.generator.params()[12]->value.shape(), (Shape{1, 16, 3, 3}));
  EXPECT_NE(m.generator.params()[0]->value, m.discriminator.params()[0]->value);
}

TEST(Autoencoder, OutputMatchesInputSizeIncludingDoubled) {
  AaeModel<float> m(AaeConfig{});
  std::mt19937_64 rng(1);
  const auto x = constant(Tensor<float>::uniform({2, 1, 48, 64}, 0.0f, 1.0f, rng));
  EXPECT_EQ(m.generator(x)->value.shape(), (Shape{2, 1, 48, 64}));
  const auto big = constant(Tensor<float>::uniform({1, 1, 96, 128}, 0.0f, 1.0f, rng));
  const auto y = m.discriminator(big)->value;
  EXPECT_EQ(y.shape(), (Shape{1, 1, 96, 128}));
  EXPECT_TRUE(y.all_finite());
  EXPECT_THROW(m.generator(constant(Tensor<float>({1, 1, 50, 64}))), DomainError);
  EXPECT_THROW(m.generator(constant(Tensor<float>({1, 2, 48, 64}))), DomainError);
}

TEST(AaeLoss, PerfectReconstructionGivesZero) {
  AaeModel<double> m(small_config());
  make_constant(m.generator, 0.25);
  make_constant(m.discriminator, 0.25);
  const auto x = constant(Tensor<double>({2, 1, 8, 16}, 0.25));
  EXPECT_EQ(loss_d(x, m.generator, m.discriminator)->value[0], 0.0);
  EXPECT_EQ(loss_g(x, m.generator, m.discriminator)->value[0], 0.0);
}

TEST(AaeLoss, OffsetFakeReconstruction) {
  AaeModel<double> m(small_config());
  const double c = 0.5;
  const double pixels = 8 * 16;
  make_constant(m.generator, 0.25 + c);
  make_constant(m.discriminator, 0.25);
  const auto x = constant(Tensor<double>({3, 1, 8, 16}, 0.25));
  EXPECT_NEAR(loss_d(x, m.generator, m.discriminator)->value[0], -c * pixels, 1e-12);
  EXPECT_NEAR(loss_g(x, m.generator, m.discriminator)->value[0], c * pixels, 1e-12);
}

TEST(AaeLoss, IdentitiesOnRandomInstances) {
  double worst_sum = 0, worst_diff = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    AaeModel<double> m(small_config(seed));
    std::mt19937_64 rng(seed);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const auto xv = Tensor<double>::uniform({n, 1, 8, 16}, 0.0, 1.0, rng);
    const auto x = constant(xv);
    const double ld = loss_d(x, m.generator, m.discriminator)->value[0];
    const double lg = loss_g(x, m.generator, m.discriminator)->value[0];
    const auto dx = m.discriminator(x)->value;
    const auto gx = m.generator(x);
    const auto dgx = m.discriminator(gx)->value;
    const double real = l1(xv, dx) / n, fake = l1(gx->value, dgx) / n;
    worst_sum = std::max(worst_sum, std::abs(ld + lg - 2 * real) / std::max(1.0, real));
    worst_diff = std::max(worst_diff, std::abs(lg - ld - 2 * fake) / std::max(1.0, fake));
    EXPECT_GE(lg, std::abs(ld) - 1e-9);
    EXPECT_GE(lg, 0.0);
  }
  EXPECT_LT(worst_sum, 1e-5);
  EXPECT_LT(worst_diff, 1e-5);
}

TEST(AaeLoss, RejectsBadBatch) {
  AaeModel<double> m(small_config());
  EXPECT_THROW(loss_d(constant(Tensor<double>({8, 16})), m.generator, m.discriminator), DomainError);
  EXPECT_THROW(loss_g(constant(Tensor<double>({1, 1, 8, 12})), m.generator, m.discriminator), DomainError);
}

TEST(AaeLoss, GradientsArePartitioned) {
  AaeModel<float> m(small_config(3));
  std::mt19937_64 rng(3);
  const auto x = constant(Tensor<float>::uniform({4, 1, 8, 16}, 0.0f, 1.0f, rng));
  std::vector<Var<float>> all = m.generator.params();
  all.insert(all.end(), m.discriminator.params().begin(), m.discriminator.params().end());

  // A D update driven by lossD, applied through an optimizer that sees every
  // parameter, must leave G bitwise unchanged.
  const auto g_before = snapshot(m.generator);
  const auto d_before = snapshot(m.discriminator);
  AdamState<float> adam;
  backward(loss_d(x, m.generator, m.discriminator));
  adam_step<float>(all, adam);
  EXPECT_EQ(snapshot(m.generator), g_before);
  EXPECT_NE(snapshot(m.discriminator), d_before);

  const auto g_mid = snapshot(m.generator);
  const auto d_mid = snapshot(m.discriminator);
  AdamState<float> adam2;
  backward(loss_g(x, m.generator, m.discriminator));
  for (const auto& p : m.discriminator.params()) EXPECT_TRUE(p->grad.size() == 0 || !p->requires_grad);
  adam_step<float>(all, adam2);
  EXPECT_NE(snapshot(m.generator), g_mid);
  EXPECT_EQ(snapshot(m.discriminator), d_mid);
}

TEST(AaeTrain, HistoryLengthAndDeterminism) {
  const auto data = random_images(12, 16, 8, 4);
  AaeModel<float> a(small_config(7)), b(small_config(7));
  const auto ha = train_aae(a, data);
  const auto hb = train_aae(b, data);
  ASSERT_EQ(ha.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(ha.epochs[e].loss_d, hb.epochs[e].loss_d);
    EXPECT_EQ(ha.epochs[e].loss_g, hb.epochs[e].loss_g);
    EXPECT_GE(ha.epochs[e].loss_g, std::abs(ha.epochs[e].loss_d) - 1e-3);
    EXPECT_GT(ha.epochs[e].real_reconstruction, 0.0);
  }
  const auto sa = a.state(), sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].tensor, sb[i].tensor) << sa[i].name;
  EXPECT_EQ(a.threshold, b.threshold);
}

TEST(AaeTrain, ChangesBothNetworks) {
  const auto data = random_images(8, 16, 8, 5);
  AaeModel<float> m(small_config(2));
  const auto g = snapshot(m.generator), d = snapshot(m.discriminator);
  train_aae(m, data);
  EXPECT_NE(snapshot(m.generator), g);
  EXPECT_NE(snapshot(m.discriminator), d);
}

TEST(AaeTrain, NeedsNormalImages) {
  auto data = random_images(6, 16, 8, 6);
  for (auto& l : data.labels) l = 1;
  AaeModel<float> m(small_config());
  EXPECT_THROW(train_aae(m, data), DomainError);
  data.labels[0] = 0;
  EXPECT_THROW(train_aae(m, data), DomainError);
}

TEST(AaeScore, NonNegativeDeterministicAndBatchInvariant) {
  AaeModel<float> m(small_config(9));
  const auto data = random_images(7, 16, 8, 9);
  const auto one = anomaly_scores(m, data.images, 1);
  const auto many = anomaly_scores(m, data.images, 32);
  ASSERT_EQ(one.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_GE(one[i], 0.0);
    EXPECT_NEAR(one[i], many[i], 1e-6 * std::max(1.0, one[i]));
    EXPECT_EQ(anomaly_score(m, data.images[i]), one[i]);
  }
  EXPECT_EQ(anomaly_scores(m, data.images, 3), anomaly_scores(m, data.images, 3));
}

TEST(AaeScore, MatchesLossGOnSingleImage) {
  AaeModel<float> m(small_config(10));
  const auto data = random_images(1, 16, 8, 10);
  const std::vector<std::size_t> idx{0};
  const auto x = constant(images_to_tensor<float>(data.images, idx));
  EXPECT_NEAR(anomaly_score(m, data.images[0]), loss_g(x, m.generator, m.discriminator)->value[0], 1e-3);
}

TEST(AaeScore, PerfectModelScoresZero) {
  AaeModel<float> m(small_config());
  make_constant(m.generator, 0.0);
  make_constant(m.discriminator, 0.0);
  EXPECT_EQ(anomaly_score(m, GrayImage(16, 8, 0)), 0.0);
  EXPECT_THROW(anomaly_score(m, GrayImage(64, 48)), DomainError);
}

TEST(AaeEval, SeparatedScores) {
  AaeModel<float> m(small_config());
  make_constant(m.generator, 0.0);
  make_constant(m.discriminator, 0.0);
  // Score is proportional to total intensity: bright images look anomalous.
  LabeledImages test;
  for (int i = 0; i < 6; ++i) {
    test.images.push_back(GrayImage(16, 8, static_cast<std::uint8_t>(i % 2 ? 200 : 10)));
    test.labels.push_back(i % 2);
  }
  const auto e = evaluate_aae(m, 50.0, test);
  EXPECT_EQ(e.auc, 1.0);
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.confusion.counts[0][0], 3u);
  EXPECT_EQ(e.confusion.counts[1][1], 3u);
  const auto all_normal = evaluate_aae(m, 1e9, test);
  EXPECT_EQ(all_normal.confusion.counts[1][0], 3u);
  EXPECT_DOUBLE_EQ(all_normal.balanced_accuracy, 0.5);
  EXPECT_THROW(evaluate_aae(m, 0.0, LabeledImages{}), DomainError);
}

TEST(AaeEval, RandomScoresGiveChanceAuc) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(20000);
  std::vector<int> labels(20000);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = u(rng);
    labels[i] = static_cast<int>(i % 2);
  }
  EXPECT_NEAR(roc_auc(scores, labels, 1), 0.5, 0.05);
}

TEST(AaeModel, StateRoundTrip) {
  AaeModel<float> a(small_config(1));
  a.threshold = 12.5;
  AaeModel<float> b(small_config(2));
  b.load_state(a.state());
  EXPECT_EQ(b.threshold, 12.5);
  EXPECT_EQ(b.config.input_width, 16);
  EXPECT_EQ(b.config.input_height, 8);
  const auto data = random_images(3, 16, 8, 1);
  EXPECT_EQ(anomaly_scores(a, data.images), anomaly_scores(b, data.images));
}

TEST(AaeData, ResizesTopograms) {
  LabeledImages in;
  in.images.push_back(GrayImage(84, 63, 100));
  in.labels.push_back(1);
  const auto out = resize_for_aae(in, AaeConfig{});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.images[0].width, 64);
  EXPECT_EQ(out.images[0].height, 48);
  EXPECT_EQ(out.images[0].pixels[100], 100);
  EXPECT_EQ(out.labels, in.labels);
}
