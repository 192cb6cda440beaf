#pragma once

#include "neurotopo/checkpoint.hpp"
#include "neurotopo/cnn.hpp"
#include "neurotopo/metrics.hpp"
#include "neurotopo/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace neurotopo {

struct AaeConfig {
  int input_width{64};
  int input_height{48};
  std::vector<int> channels{16, 32, 64};
  int epochs{400};
  int batch{16};
  double lr{2e-4};
  int normal_class{0};
  double labeled_fraction{0.1};
  std::uint64_t seed{1};

  void validate() const;
};

// Fully convolutional autoencoder: stride-2 4x4 conv encoder, stride-2
// transposed-conv decoder, 3x3 linear output conv. Works on any input whose
// sides are divisible by 2^stages.
template <typename T>
class ConvAutoencoder {
 public:
  ConvAutoencoder(const std::vector<int>& channels, std::mt19937_64& rng, std::string prefix);

  Var<T> operator()(const Var<T>& x) const { return forward(x, false); }
  // Same output, but the weights enter as constants: gradients reach x only.
  Var<T> frozen(const Var<T>& x) const { return forward(x, true); }

  const std::vector<Var<T>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

 private:
  Var<T> forward(const Var<T>& x, bool frozen) const;

  std::size_t stages_;
  std::vector<Var<T>> params_;
  std::vector<std::string> names_;
};

template <typename T>
struct AaeModel {
  explicit AaeModel(const AaeConfig& cfg);

  AaeConfig config;
  ConvAutoencoder<T> generator;
  ConvAutoencoder<T> discriminator;
  double threshold{0.0};

  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);
};

// Batch means of
//   lossD = |X - D(X)|_1 - |G(X) - D(G(X))|_1   (G(X) held constant)
//   lossG = |X - D(X)|_1 + |G(X) - D(G(X))|_1   (D(X) held constant)
template <typename T>
Var<T> loss_d(const Var<T>& x, const ConvAutoencoder<T>& g, const ConvAutoencoder<T>& d);
template <typename T>
Var<T> loss_g(const Var<T>& x, const ConvAutoencoder<T>& g, const ConvAutoencoder<T>& d);

struct AaeEpoch {
  double loss_d{0.0};
  double loss_g{0.0};
  double real_reconstruction{0.0};  // mean |X - D(X)|_1 per image
};

struct AaeHistory {
  std::vector<AaeEpoch> epochs;
};

// Per image: |X - D(X)|_1 + |G(X) - D(G(X))|_1.
std::vector<double> anomaly_scores(const AaeModel<float>& model, const std::vector<GrayImage>& images, int batch = 32);
double anomaly_score(const AaeModel<float>& model, const GrayImage& image);

// Trains on the normal-class images of `train` only, then calibrates the
// threshold on a seeded, class-stratified labeled_fraction subset of `train`.
AaeHistory train_aae(AaeModel<float>& model, const LabeledImages& train);

struct AaeEvaluation {
  double accuracy{0.0};
  double balanced_accuracy{0.0};
  double auc{0.0};
  Confusion confusion;
};

AaeEvaluation evaluate_aae(const AaeModel<float>& model, double threshold, const LabeledImages& test);

// Resizes net-input topograms to the autoencoder input size.
LabeledImages resize_for_aae(const LabeledImages& data, const AaeConfig& cfg);

} // namespace neurotopo
