#include "neurotopo/aae.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/topomap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neurotopo {

void AaeConfig::validate() const {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) throw DomainError("aae", "labeled_fraction must lie in (0, 1]");
  if (epochs < 1) throw DomainError("aae", "epochs must be >= 1");
  if (batch < 1 || !(lr > 0)) throw DomainError("aae", "batch and lr must be positive");
  if (channels.empty()) throw DomainError("aae", "need at least one encoder stage");
  const int div = 1 << channels.size();
  if (input_width % div != 0 || input_height % div != 0) {
    throw DomainError("aae", "input sides must be divisible by 2^stages");
  }
  if (normal_class != 0 && normal_class != 1) throw DomainError("aae", "normal class must be 0 or 1");
}

template <typename T>
ConvAutoencoder<T>::ConvAutoencoder(const std::vector<int>& channels, std::mt19937_64& rng, std::string prefix)
    : stages_(channels.size()) {
  auto add = [&](const std::string& name, Shape shape, double stddev) {
    params_.push_back(parameter(Tensor<T>::normal(std::move(shape), static_cast<T>(stddev), rng)));
    names_.push_back(prefix + name);
  };
  auto add_bias = [&](const std::string& name, std::size_t n) {
    params_.push_back(parameter(Tensor<T>({n})));
    names_.push_back(prefix + name);
  };
  std::size_t in = 1;
  for (std::size_t i = 0; i < stages_; ++i) {
    const auto out = static_cast<std::size_t>(channels[i]);
    add("enc" + std::to_string(i + 1) + ".w", {out, in, 4, 4}, std::sqrt(2.0 / (in * 16)));
    add_bias("enc" + std::to_string(i + 1) + ".b", out);
    in = out;
  }
  // Decoder mirrors the encoder widths; the last stage keeps the first width.
  for (std::size_t i = 0; i < stages_; ++i) {
    const std::size_t mirror = stages_ - 1 - i;
    const auto out = static_cast<std::size_t>(mirror == 0 ? channels[0] : channels[mirror - 1]);
    // Each output pixel of a stride-2 transposed conv sees in * 4 taps.
    add("dec" + std::to_string(i + 1) + ".w", {in, out, 4, 4}, std::sqrt(2.0 / (in * 4)));
    add_bias("dec" + std::to_string(i + 1) + ".b", out);
    in = out;
  }
  add("out.w", {1, in, 3, 3}, std::sqrt(1.0 / (in * 9)));
  add_bias("out.b", 1);
}

template <typename T>
Var<T> ConvAutoencoder<T>::forward(const Var<T>& x, bool frozen) const {
  if (x->value.rank() != 4 || x->value.dim(1) != 1) throw DomainError("aae", "autoencoder expects N x 1 x H x W");
  const std::size_t div = std::size_t{1} << stages_;
  if (x->value.dim(2) % div != 0 || x->value.dim(3) % div != 0) {
    throw DomainError("aae", "input " + shape_string(x->value.shape()) + " not divisible by 2^stages");
  }
  auto w = [&](std::size_t i) { return frozen ? detach(params_[i]) : params_[i]; };
  Var<T> h = x;
  std::size_t p = 0;
  for (std::size_t i = 0; i < stages_; ++i, p += 2) h = relu(conv2d(h, w(p), w(p + 1), {2, 1}));
  for (std::size_t i = 0; i < stages_; ++i, p += 2) h = relu(upconv2d(h, w(p), w(p + 1), {2, 1}));
  return conv2d(h, w(p), w(p + 1), {1, 1});
}

namespace {

template <typename T>
std::vector<NamedTensor> export_params(const std::vector<Var<T>>& params, const std::vector<std::string>& names) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params[i]->value;
    out.push_back({names[i], Tensor<float>(v.shape(), std::vector<float>(v.values().begin(), v.values().end()))});
  }
  return out;
}

template <typename T>
void import_params(const std::vector<NamedTensor>& tensors, const std::vector<Var<T>>& params,
                   const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = find_tensor(tensors, names[i]);
    if (t.shape() != params[i]->value.shape()) throw IoError("aae", "checkpoint shape mismatch for " + names[i]);
    params[i]->value = Tensor<T>(t.shape(), std::vector<T>(t.values().begin(), t.values().end()));
    params[i]->zero_grad();
  }
}

template <typename T>
void check_batch(const Var<T>& x) {
  if (x->value.rank() != 4 || x->value.dim(0) == 0) throw DomainError("aae", "loss expects a non-empty N x 1 x H x W batch");
}

template <typename T>
ConvAutoencoder<T> seeded_autoencoder(const AaeConfig& cfg, std::uint64_t seed, const std::string& prefix) {
  cfg.validate();
  std::mt19937_64 rng(seed ^ 0x616165ULL);
  return ConvAutoencoder<T>(cfg.channels, rng, prefix);
}

} // namespace

template <typename T>
AaeModel<T>::AaeModel(const AaeConfig& cfg)
    : config(cfg),
      generator(seeded_autoencoder<T>(cfg, cfg.seed, "G.")),
      discriminator(seeded_autoencoder<T>(cfg, cfg.seed + 1, "D.")) {}

template <typename T>
std::vector<NamedTensor> AaeModel<T>::state() const {
  auto out = export_params(generator.params(), generator.param_names());
  auto d = export_params(discriminator.params(), discriminator.param_names());
  out.insert(out.end(), d.begin(), d.end());
  out.push_back({"meta.threshold", Tensor<float>({1}, static_cast<float>(threshold))});
  out.push_back({"meta.normal_class", Tensor<float>({1}, static_cast<float>(config.normal_class))});
  out.push_back({"meta.input", Tensor<float>({2}, {static_cast<float>(config.input_height),
                                                   static_cast<float>(config.input_width)})});
  return out;
}

template <typename T>
void AaeModel<T>::load_state(const std::vector<NamedTensor>& tensors) {
  import_params(tensors, generator.params(), generator.param_names());
  import_params(tensors, discriminator.params(), discriminator.param_names());
  threshold = find_tensor(tensors, "meta.threshold")[0];
  config.normal_class = static_cast<int>(find_tensor(tensors, "meta.normal_class")[0]);
  const auto& input = find_tensor(tensors, "meta.input");
  config.input_height = static_cast<int>(input[0]);
  config.input_width = static_cast<int>(input[1]);
}

template <typename T>
Var<T> loss_d(const Var<T>& x, const ConvAutoencoder<T>& g, const ConvAutoencoder<T>& d) {
  check_batch(x);
  const double n = static_cast<double>(x->value.dim(0));
  const Var<T> gx = detach(g(x));
  return scale(sub(l1_loss(x, d(x)), l1_loss(gx, d(gx))), 1.0 / n);
}

template <typename T>
Var<T> loss_g(const Var<T>& x, const ConvAutoencoder<T>& g, const ConvAutoencoder<T>& d) {
  check_batch(x);
  const double n = static_cast<double>(x->value.dim(0));
  const Var<T> dx = detach(d(x));
  const Var<T> gx = g(x);
  return scale(add(l1_loss(x, dx), l1_loss(gx, d.frozen(gx))), 1.0 / n);
}

std::vector<double> anomaly_scores(const AaeModel<float>& model, const std::vector<GrayImage>& images, int batch) {
  std::vector<double> out;
  out.reserve(images.size());
  std::vector<std::size_t> idx;
  for (const auto& img : images) {
    if (img.width != model.config.input_width || img.height != model.config.input_height) {
      throw DomainError("aae", "image does not match the autoencoder input size");
    }
  }
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(images.size(), start + static_cast<std::size_t>(batch)); ++i) idx.push_back(i);
    const auto x = constant(images_to_tensor<float>(images, idx));
    const auto dx = model.discriminator(x);
    const auto gx = model.generator(x);
    const auto dgx = model.discriminator(gx);
    const std::size_t per = x->value.size() / idx.size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      double s = 0.0;
      for (std::size_t p = k * per; p < (k + 1) * per; ++p) {
        s += std::abs(static_cast<double>(x->value[p]) - dx->value[p]);
        s += std::abs(static_cast<double>(gx->value[p]) - dgx->value[p]);
      }
      out.push_back(s);
    }
  }
  return out;
}

double anomaly_score(const AaeModel<float>& model, const GrayImage& image) {
  return anomaly_scores(model, std::vector<GrayImage>{image}, 1).front();
}

AaeHistory train_aae(AaeModel<float>& model, const LabeledImages& train) {
  const auto& cfg = model.config;
  cfg.validate();
  std::vector<std::size_t> normal;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.labels[i] == cfg.normal_class) normal.push_back(i);
  }
  if (normal.size() < 2) throw DomainError("aae", "training split needs at least two normal-class images");

  AdamState<float> adam_g, adam_d;
  adam_g.options.lr = adam_d.options.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed ^ 0x62617463ULL);
  const auto& gp = model.generator.params();
  const auto& dp = model.discriminator.params();

  AaeHistory history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = normal.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(normal[i - 1], normal[pick(rng)]);
    }
    AaeEpoch stats;
    for (std::size_t start = 0; start < normal.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(normal.size(), start + static_cast<std::size_t>(cfg.batch));
      const std::span<const std::size_t> idx(normal.data() + start, end - start);
      const auto x = constant(images_to_tensor<float>(train.images, idx));
      const double n = static_cast<double>(idx.size());

      // G(X) is shared: its value feeds D's update as a constant, its graph
      // carries G's update afterwards. G's weights do not change in between.
      const Var<float> gx = model.generator(x);
      const Var<float> gx_const = detach(gx);

      {
        const Var<float> real = l1_loss(x, model.discriminator(x));
        const Var<float> ld = scale(sub(real, l1_loss(gx_const, model.discriminator(gx_const))), 1.0 / n);
        if (!ld->value.all_finite()) throw DomainError("aae", "discriminator loss became non-finite");
        backward(ld);
        adam_step<float>(dp, adam_d);
        stats.loss_d += ld->value[0] * n;
        stats.real_reconstruction += real->value[0];
      }

      {
        const Var<float> dx = detach(model.discriminator(x));
        const Var<float> lg = scale(add(l1_loss(x, dx), l1_loss(gx, model.discriminator.frozen(gx))), 1.0 / n);
        if (!lg->value.all_finite()) throw DomainError("aae", "generator loss became non-finite");
        backward(lg);
        adam_step<float>(gp, adam_g);
        stats.loss_g += lg->value[0] * n;
      }
    }
    const double total = static_cast<double>(normal.size());
    stats.loss_d /= total;
    stats.loss_g /= total;
    stats.real_reconstruction /= total;
    history.epochs.push_back(stats);
  }

  // Threshold calibration on a small labeled subset of the training split.
  std::vector<int> groups(train.size());
  std::iota(groups.begin(), groups.end(), 0);
  std::vector<std::size_t> labeled;
  if (cfg.labeled_fraction >= 1.0) {
    labeled.resize(train.size());
    std::iota(labeled.begin(), labeled.end(), 0);
  } else {
    const auto split = stratified_split(train.labels, groups, cfg.labeled_fraction, cfg.seed ^ 0x6C6162ULL);
    for (std::size_t i = 0; i < split.size(); ++i) {
      if (split[i] == Split::Train) labeled.push_back(i);
    }
  }
  std::vector<GrayImage> images;
  std::vector<int> labels;
  for (auto i : labeled) {
    images.push_back(train.images[i]);
    labels.push_back(train.labels[i]);
  }
  const auto scores = anomaly_scores(model, images);
  model.threshold = choose_threshold(scores, labels, cfg.normal_class).threshold;
  return history;
}

AaeEvaluation evaluate_aae(const AaeModel<float>& model, double threshold, const LabeledImages& test) {
  if (test.size() == 0) throw DomainError("aae", "cannot evaluate on an empty split");
  const auto scores = anomaly_scores(model, test.images);
  const int normal = model.config.normal_class;
  AaeEvaluation e;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e.confusion.add(test.labels[i], scores[i] > threshold ? 1 - normal : normal);
  }
  e.accuracy = e.confusion.accuracy();
  e.balanced_accuracy = e.confusion.balanced_accuracy();
  const bool both = std::count(test.labels.begin(), test.labels.end(), normal) != 0 &&
                    std::count(test.labels.begin(), test.labels.end(), normal) != static_cast<long>(test.size());
  e.auc = both ? roc_auc(scores, test.labels, 1 - normal) : 0.5;
  return e;
}

LabeledImages resize_for_aae(const LabeledImages& data, const AaeConfig& cfg) {
  LabeledImages out;
  out.labels = data.labels;
  out.images.reserve(data.size());
  for (const auto& img : data.images) {
    out.images.push_back(img.width == cfg.input_width && img.height == cfg.input_height
                             ? img
                             : resize_bilinear(img, cfg.input_width, cfg.input_height));
  }
  return out;
}

template class ConvAutoencoder<float>;
template class ConvAutoencoder<double>;
template struct AaeModel<float>;
template struct AaeModel<double>;
template Var<float> loss_d(const Var<float>&, const ConvAutoencoder<float>&, const ConvAutoencoder<float>&);
template Var<double> loss_d(const Var<double>&, const ConvAutoencoder<double>&, const ConvAutoencoder<double>&);
template Var<float> loss_g(const Var<float>&, const ConvAutoencoder<float>&, const ConvAutoencoder<float>&);
template Var<double> loss_g(const Var<double>&, const ConvAutoencoder<double>&, const ConvAutoencoder<double>&);

} // namespace neurotopo
