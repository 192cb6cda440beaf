#include "neurotopo/aae.hpp"
#include "neurotopo/checkpoint.hpp"
#include "neurotopo/cnn.hpp"
#include "neurotopo/dsp.hpp"
#include "neurotopo/error.hpp"
#include "neurotopo/gradcheck.hpp"
#include "neurotopo/metrics.hpp"
#include "neurotopo/montage.hpp"
#include "neurotopo/pipeline.hpp"
#include "neurotopo/synthgen.hpp"
#include "neurotopo/topomap.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>
#include <limits>

namespace py = pybind11;
using namespace neurotopo;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Hand parse_hand(const std::string& hand) {
  if (hand == "right") return Hand::Right;
  if (hand == "left") return Hand::Left;
  throw DomainError("python", "hand must be 'right' or 'left', got '" + hand + "'");
}

py::dict trial_to_dict(const EegTrial& t) {
  py::array_t<double> samples({t.channels(), t.length()});
  auto out = samples.mutable_unchecked<2>();
  for (std::size_t c = 0; c < t.channels(); ++c)
    for (std::size_t i = 0; i < t.length(); ++i) out(c, i) = t.samples[c][i];
  py::dict d;
  d["subject"] = t.subject_id;
  d["trial"] = t.trial_id;
  d["label"] = label_of(t.label);
  d["fs"] = t.fs;
  d["samples"] = samples;
  return d;
}

std::vector<std::vector<double>> rows_of(const F64Array& a) {
  if (a.ndim() != 2) throw DomainError("python", "expected a 2-D array of shape (channels, samples)");
  const auto v = a.unchecked<2>();
  std::vector<std::vector<double>> rows(a.shape(0), std::vector<double>(a.shape(1)));
  for (py::ssize_t c = 0; c < a.shape(0); ++c)
    for (py::ssize_t i = 0; i < a.shape(1); ++i) rows[c][i] = v(c, i);
  return rows;
}

std::vector<GrayImage> images_of(const U8Array& a) {
  if (a.ndim() != 3) throw DomainError("python", "expected a uint8 array of shape (n, height, width)");
  const int n = static_cast<int>(a.shape(0)), h = static_cast<int>(a.shape(1)), w = static_cast<int>(a.shape(2));
  std::vector<GrayImage> out;
  out.reserve(n);
  const auto* p = a.data();
  for (int i = 0; i < n; ++i) {
    GrayImage img(w, h);
    std::copy(p + static_cast<std::size_t>(i) * w * h, p + static_cast<std::size_t>(i + 1) * w * h, img.pixels.begin());
    out.push_back(std::move(img));
  }
  return out;
}

U8Array to_array(const GrayImage& img) {
  U8Array out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

std::vector<double> values_of(const F64Array& a) { return {a.data(), a.data() + a.size()}; }

class PyCnn {
 public:
  explicit PyCnn(Cnn<float> m) : model_(std::move(m)) {}
  static PyCnn load(const std::filesystem::path& p) { return PyCnn(cnn_from_checkpoint(load_checkpoint(p))); }

  py::array_t<float> probabilities(const U8Array& images) const {
    const auto imgs = images_of(images);
    std::vector<std::size_t> idx(imgs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto out = model_.forward(constant(images_to_tensor<float>(imgs, idx)))->value;
    const auto k = static_cast<py::ssize_t>(model_.config().classes);
    py::array_t<float> probs({static_cast<py::ssize_t>(imgs.size()), k});
    std::copy(out.data(), out.data() + out.size(), probs.mutable_data());
    return probs;
  }
  std::vector<int> predict(const U8Array& images) const {
    LabeledImages data;
    data.images = images_of(images);
    data.labels.assign(data.images.size(), 0);
    return neurotopo::predict(model_, data);
  }

 private:
  Cnn<float> model_;
};

class PyAae {
 public:
  explicit PyAae(AaeModel<float> m) : model_(std::move(m)) {}
  static PyAae load(const std::filesystem::path& p) { return PyAae(aae_from_checkpoint(load_checkpoint(p))); }

  std::vector<double> scores(const U8Array& images) const { return anomaly_scores(model_, images_of(images)); }
  std::vector<int> predict(const U8Array& images) const {
    const int anomaly = 1 - model_.config.normal_class;
    std::vector<int> out;
    for (double s : scores(images)) out.push_back(s > model_.threshold ? anomaly : model_.config.normal_class);
    return out;
  }
  double threshold() const { return model_.threshold; }
  std::pair<int, int> input_size() const { return {model_.config.input_width, model_.config.input_height}; }

 private:
  AaeModel<float> model_;
};

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "EEG motor-activity topograms, CNN and adversarial-autoencoder classifiers";
  m.attr("__version__") = kVersion;

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("montage", [] {
    std::vector<std::tuple<std::string, double, double>> out;
    for (const auto& e : builtin_montage32().electrodes()) out.emplace_back(e.name, e.pos2d.x, e.pos2d.y);
    return out;
  }, "Electrode (name, x, y) head-disc positions in channel order.");

  m.def(
      "generate_trial",
      [](int subject, int trial, const std::string& hand, std::uint64_t seed, double erd_depth, double noise_amp) {
        SynthConfig cfg;
        cfg.seed = seed;
        cfg.erd_depth = erd_depth;
        cfg.noise_amp = noise_amp;
        cfg.validate();
        return trial_to_dict(generate_trial(cfg, subject, trial, parse_hand(hand)));
      },
      py::arg("subject") = 0, py::arg("trial") = 0, py::arg("hand") = "right", py::arg("seed") = 1,
      py::arg("erd_depth") = 0.5, py::arg("noise_amp") = 1.0);

  m.def(
      "preprocess",
      [](const F64Array& samples, double fs) {
        EegTrial t;
        t.fs = fs;
        t.samples = rows_of(samples);
        const auto clean = preprocess_trial(t, PreprocessFilters::defaults(fs));
        return py::object(trial_to_dict(clean)["samples"]);
      },
      py::arg("samples"), py::arg("fs") = 1000.0, "Notch and band-pass every channel with zero-phase filtering.");

  m.def(
      "band_power",
      [](const F64Array& signal, double fs, double start_s, double end_s, double lo_hz, double hi_hz) {
        BandPowerSpec spec;
        spec.lo_hz = lo_hz;
        spec.hi_hz = hi_hz;
        const auto x = values_of(signal);
        return morlet_band_power(x, fs, spec, TimeWindow{start_s, end_s});
      },
      py::arg("signal"), py::arg("fs"), py::arg("start_s"), py::arg("end_s"), py::arg("lo_hz") = 9.0,
      py::arg("hi_hz") = 11.0);

  m.def(
      "interpolate",
      [](const F64Array& values, int width, int height) {
        const auto field = interpolate_scalp(values_of(values), builtin_montage32(), width, height);
        py::array_t<double> out({height, width});
        auto o = out.mutable_unchecked<2>();
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x)
            o(y, x) = field.is_inside(x, y) ? field.at(x, y) : std::numeric_limits<double>::quiet_NaN();
        return out;
      },
      py::arg("values"), py::arg("width") = kTopoWidth, py::arg("height") = kTopoHeight,
      "Scalp field from one value per electrode; NaN outside the head disc.");

  m.def(
      "topogram",
      [](const F64Array& values, int width, int height) {
        return to_array(render_field(interpolate_scalp(values_of(values), builtin_montage32(), width, height)));
      },
      py::arg("values"), py::arg("width") = kTopoWidth, py::arg("height") = kTopoHeight);

  m.def(
      "gradcheck",
      [](int seeds) {
        std::vector<std::tuple<std::string, int, double>> out;
        for (const auto& r : run_gradcheck(seeds)) out.emplace_back(r.op, r.seeds, r.max_rel_error);
        return out;
      },
      py::arg("seeds") = 20);

  m.def(
      "roc_auc",
      [](const std::vector<double>& scores, const std::vector<int>& labels, int positive) {
        return roc_auc(scores, labels, positive);
      },
      py::arg("scores"), py::arg("labels"), py::arg("positive_label") = 1);

  m.def(
      "normalize_config", [](const std::string& json) { return pipeline_config_json(parse_pipeline_config(json)); },
      py::arg("json"), "Parse a pipeline config and return it with every default filled in.");

  m.def(
      "run_all",
      [](const std::string& config_json, const std::filesystem::path& out_dir, int threads) {
        const auto cfg = parse_pipeline_config(config_json);
        py::gil_scoped_release release;
        run_all(cfg, out_dir, threads);
      },
      py::arg("config_json"), py::arg("out_dir"), py::arg("threads") = 1);

  m.def(
      "load_split",
      [](const std::filesystem::path& manifest, const std::string& split) {
        const auto data = load_split(manifest, split == "train" ? Split::Train : Split::Test);
        const auto n = static_cast<py::ssize_t>(data.size());
        U8Array images({n, static_cast<py::ssize_t>(kNetHeight), static_cast<py::ssize_t>(kNetWidth)});
        auto* p = images.mutable_data();
        for (const auto& img : data.images) p = std::copy(img.pixels.begin(), img.pixels.end(), p);
        return py::make_tuple(images, data.labels);
      },
      py::arg("manifest"), py::arg("split") = "test");

  py::class_<PyCnn>(m, "Cnn")
      .def_static("load", &PyCnn::load, py::arg("path"))
      .def("probabilities", &PyCnn::probabilities, py::arg("images"))
      .def("predict", &PyCnn::predict, py::arg("images"));

  py::class_<PyAae>(m, "Aae")
      .def_static("load", &PyAae::load, py::arg("path"))
      .def("scores", &PyAae::scores, py::arg("images"))
      .def("predict", &PyAae::predict, py::arg("images"))
      .def_property_readonly("threshold", &PyAae::threshold)
      .def_property_readonly("input_size", &PyAae::input_size);
}
