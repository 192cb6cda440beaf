#include "neurotopo/cnn.hpp"

#include "neurotopo/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace neurotopo {

template <typename T>
Tensor<T> images_to_tensor(const std::vector<GrayImage>& images, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DomainError("cnn", "empty batch");
  const auto& first = images.at(indices.front());
  const auto h = static_cast<std::size_t>(first.height);
  const auto w = static_cast<std::size_t>(first.width);
  Tensor<T> t({indices.size(), 1, h, w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& img = images.at(indices[k]);
    if (img.width != first.width || img.height != first.height) throw DomainError("cnn", "images differ in size");
    for (std::size_t p = 0; p < h * w; ++p) t[k * h * w + p] = static_cast<T>(img.pixels[p] / 255.0);
  }
  return t;
}

void CnnConfig::validate() const {
  if (conv_channels.empty()) throw DomainError("cnn", "need at least one conv stage");
  for (std::size_t i = 1; i < conv_channels.size(); ++i) {
    if (conv_channels[i] <= conv_channels[i - 1]) throw DomainError("cnn", "conv channels must increase strictly");
  }
  if (conv_channels.front() < 1) throw DomainError("cnn", "conv channels must be positive");
  if (classes < 2) throw DomainError("cnn", "need at least two classes");
  int prev = flatten_size();
  for (int s : fc_sizes) {
    if (s >= prev) throw DomainError("cnn", "fully connected widths must decrease strictly");
    prev = s;
  }
  if (classes >= prev) throw DomainError("cnn", "fully connected widths must decrease to the class count");
  if (kernel < 1 || kernel % 2 == 0) throw DomainError("cnn", "kernel size must be odd");
  if (epochs < 1 || batch < 1 || !(lr > 0)) throw DomainError("cnn", "epochs, batch and lr must be positive");
}

std::pair<int, int> CnnConfig::feature_hw() const {
  int h = input_height, w = input_width;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (h < 2 || w < 2) throw DomainError("cnn", "input too small for the pooling stack");
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

int CnnConfig::flatten_size() const {
  const auto [h, w] = feature_hw();
  return conv_channels.back() * h * w;
}

template <typename T>
Cnn<T>::Cnn(CnnConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  auto he = [&](Shape shape, std::size_t fan_in) {
    return parameter(Tensor<T>::normal(std::move(shape), static_cast<T>(std::sqrt(2.0 / fan_in)), rng));
  };
  const auto k = static_cast<std::size_t>(cfg_.kernel);
  std::size_t in = 1;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    const auto out = static_cast<std::size_t>(cfg_.conv_channels[i]);
    params_.push_back(he({out, in, k, k}, in * k * k));
    names_.push_back("conv" + std::to_string(i + 1) + ".w");
    params_.push_back(parameter(Tensor<T>({out})));
    names_.push_back("conv" + std::to_string(i + 1) + ".b");
    in = out;
  }
  std::vector<int> widths = cfg_.fc_sizes;
  widths.push_back(cfg_.classes);
  in = static_cast<std::size_t>(cfg_.flatten_size());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto out = static_cast<std::size_t>(widths[i]);
    params_.push_back(he({in, out}, in));
    names_.push_back("fc" + std::to_string(i + 1) + ".w");
    params_.push_back(parameter(Tensor<T>({out})));
    names_.push_back("fc" + std::to_string(i + 1) + ".b");
    in = out;
  }
}

template <typename T>
Var<T> Cnn<T>::logits(const Var<T>& x) const {
  const auto& s = x->value.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != static_cast<std::size_t>(cfg_.input_height) ||
      s[3] != static_cast<std::size_t>(cfg_.input_width)) {
    throw DomainError("cnn", "input must be N x 1 x " + std::to_string(cfg_.input_height) + " x " +
                                 std::to_string(cfg_.input_width) + ", got " + shape_string(s));
  }
  const ConvGeometry same{1, static_cast<std::size_t>(cfg_.kernel / 2)};
  Var<T> h = x;
  std::size_t p = 0;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i, p += 2) {
    h = maxpool2(relu(conv2d(h, params_[p], params_[p + 1], same)));
  }
  h = flatten(h);
  const std::size_t layers = cfg_.fc_sizes.size() + 1;
  for (std::size_t i = 0; i < layers; ++i, p += 2) {
    h = dense(h, params_[p], params_[p + 1]);
    if (i + 1 < layers) h = relu(h);
  }
  return h;
}

template <typename T>
std::vector<NamedTensor> Cnn<T>::state() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& v = params_[i]->value;
    std::vector<float> data(v.values().begin(), v.values().end());
    out.push_back({names_[i], Tensor<float>(v.shape(), std::move(data))});
  }
  return out;
}

template <typename T>
void Cnn<T>::load_state(const std::vector<NamedTensor>& tensors) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& t = find_tensor(tensors, names_[i]);
    if (t.shape() != params_[i]->value.shape()) throw IoError("cnn", "checkpoint shape mismatch for " + names_[i]);
    std::vector<T> data(t.values().begin(), t.values().end());
    params_[i]->value = Tensor<T>(t.shape(), std::move(data));
    params_[i]->zero_grad();
  }
}

namespace {

void check_images(const LabeledImages& data, const CnnConfig& cfg) {
  if (data.images.size() != data.labels.size()) throw DomainError("cnn", "image and label counts differ");
  for (const auto& img : data.images) {
    if (img.width != cfg.input_width || img.height != cfg.input_height) {
      throw DomainError("cnn", "image size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                   " does not match the network input");
    }
  }
}

int argmax_row(const Tensor<float>& probs, std::size_t row) {
  const std::size_t k = probs.dim(1);
  int best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (probs[row * k + j] > probs[row * k + static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

} // namespace

std::vector<int> predict(const Cnn<float>& model, const LabeledImages& data, int batch) {
  check_images(data, model.config());
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
    const auto probs = model.forward(constant(images_to_tensor<float>(data.images, idx)));
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(argmax_row(probs->value, r));
  }
  return out;
}

Evaluation evaluate(const Cnn<float>& model, const LabeledImages& test) {
  if (test.size() == 0) throw DomainError("cnn", "cannot evaluate on an empty split");
  const auto predicted = predict(model, test);
  Evaluation e;
  for (std::size_t i = 0; i < predicted.size(); ++i) e.confusion.add(test.labels[i], predicted[i]);
  e.accuracy = e.confusion.accuracy();
  return e;
}

TrainReport train_cnn(Cnn<float>& model, const LabeledImages& train, const LabeledImages& test) {
  const auto& cfg = model.config();
  if (train.size() == 0) throw DomainError("cnn", "training split is empty");
  check_images(train, cfg);
  check_images(test, cfg);

  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0x7368756666ULL);
  AdamState<float> adam;
  adam.options.lr = cfg.lr;
  const auto& params = model.params();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train.labels[i]);
      const auto probs = model.forward(constant(images_to_tensor<float>(train.images, idx)));
      const auto loss = cross_entropy(probs, labels);
      if (!loss->value.all_finite()) throw DomainError("cnn", "training loss became non-finite");
      backward(loss);
      adam_step<float>(params, adam);
      loss_sum += static_cast<double>(loss->value[0]) * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) correct += argmax_row(probs->value, r) == labels[r] ? 1 : 0;
    }
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(train.size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    if (test.size() > 0) {
      const auto e = evaluate(model, test);
      stats.test_acc = e.accuracy;
      report.final_confusion = e.confusion;
    }
    report.per_epoch.push_back(stats);
  }
  report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

template Tensor<float> images_to_tensor(const std::vector<GrayImage>&, std::span<const std::size_t>);
template Tensor<double> images_to_tensor(const std::vector<GrayImage>&, std::span<const std::size_t>);
template class Cnn<float>;
template class Cnn<double>;

} // namespace neurotopo
