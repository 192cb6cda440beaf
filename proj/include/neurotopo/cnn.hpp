#pragma once

#include "neurotopo/checkpoint.hpp"
#include "neurotopo/image.hpp"
#include "neurotopo/metrics.hpp"
#include "neurotopo/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace neurotopo {

// Grayscale images with their class labels, all of one size.
struct LabeledImages {
  std::vector<GrayImage> images;
  std::vector<int> labels;

  std::size_t size() const { return images.size(); }
};

// N x 1 x H x W tensor with intensities scaled to [0, 1].
template <typename T>
Tensor<T> images_to_tensor(const std::vector<GrayImage>& images, std::span<const std::size_t> indices);

struct CnnConfig {
  int input_width{84};
  int input_height{63};
  std::vector<int> conv_channels{8, 16, 32, 64};
  int kernel{5};
  std::vector<int> fc_sizes{128, 32};  // hidden widths; the last layer maps to `classes`
  int classes{2};
  int epochs{10};
  int batch{32};
  double lr{1e-3};
  std::uint64_t seed{1};

  void validate() const;
  // Spatial size after the conv/pool stack, as (height, width).
  std::pair<int, int> feature_hw() const;
  int flatten_size() const;
};

template <typename T>
class Cnn {
 public:
  explicit Cnn(CnnConfig cfg);

  const CnnConfig& config() const { return cfg_; }
  const std::vector<Var<T>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  Var<T> logits(const Var<T>& x) const;
  Var<T> forward(const Var<T>& x) const { return softmax(logits(x)); }

  std::vector<NamedTensor> state() const;
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  CnnConfig cfg_;
  std::vector<Var<T>> params_;
  std::vector<std::string> names_;
};

struct EpochStats {
  double train_loss{0.0};
  double train_acc{0.0};
  double test_acc{0.0};
};

struct TrainReport {
  std::vector<EpochStats> per_epoch;
  Confusion final_confusion;
  double wall_time_s{0.0};  // informational, not part of the serialized report
};

struct Evaluation {
  double accuracy{0.0};
  Confusion confusion;
};

// Argmax of the softmax output per image, in `batch`-sized chunks.
std::vector<int> predict(const Cnn<float>& model, const LabeledImages& data, int batch = 64);
Evaluation evaluate(const Cnn<float>& model, const LabeledImages& test);

// Adam on cross-entropy over seeded shuffled minibatches; evaluates `test`
// after every epoch when it is non-empty.
TrainReport train_cnn(Cnn<float>& model, const LabeledImages& train, const LabeledImages& test);

} // namespace neurotopo
