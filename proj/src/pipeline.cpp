#include "neurotopo/pipeline.hpp"

#include "neurotopo/checkpoint.hpp"
#include "neurotopo/error.hpp"
#include "neurotopo/fileio.hpp"
#include "neurotopo/trial_io.hpp"

#include <json.hpp>

#include <set>

namespace neurotopo {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw DomainError("config", where_ + " must be a JSON object");
  }

  template <typename T>
  bool read(const char* key, T& out) {
    known_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const Json::exception& e) {
      throw DomainError("config", where_ + "." + key + ": " + e.what());
    }
    return true;
  }

  // Accepts a key that is parsed elsewhere.
  void allow(const char* key) { known_.insert(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!known_.count(item.key())) throw DomainError("config", "unknown key " + where_ + "." + item.key());
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> known_;
};

const Json* member(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void read_synth(const Json& j, SynthConfig& c, bool& seeded) {
  Section s(j, "synth");
  s.read("nSubjects", c.n_subjects);
  s.read("trialsPerHand", c.trials_per_hand);
  s.read("fs", c.fs);
  s.read("muFreq", c.mu_freq);
  s.read("muAmp", c.mu_amp);
  s.read("erdDepth", c.erd_depth);
  s.read("noiseAmp", c.noise_amp);
  s.read("pinkAmp", c.pink_amp);
  s.read("lineNoiseAmp", c.line_noise_amp);
  seeded = s.read("seed", c.seed);
  s.finish();
}

void read_dsp(const Json& j, DspConfig& c) {
  Section s(j, "dsp");
  s.read("notchHz", c.notch_hz);
  s.read("notchQ", c.notch_q);
  s.read("bandLowHz", c.band_lo_hz);
  s.read("bandHighHz", c.band_hi_hz);
  s.read("bandOrder", c.band_order);
  s.finish();
}

void read_topomap(const Json& j, TopomapConfig& c, bool& seeded) {
  Section s(j, "topomap");
  s.read("muLowHz", c.band.lo_hz);
  s.read("muHighHz", c.band.hi_hz);
  s.read("waveletCycles", c.band.wavelet_cycles);
  s.read("freqStepHz", c.band.freq_step_hz);
  s.read("trainFraction", c.train_fraction);
  seeded = s.read("seed", c.seed);
  s.finish();
}

void read_cnn(const Json& j, CnnConfig& c, bool& seeded) {
  Section s(j, "cnn");
  s.read("convChannels", c.conv_channels);
  s.read("kernel", c.kernel);
  s.read("fcSizes", c.fc_sizes);
  s.read("epochs", c.epochs);
  s.read("batch", c.batch);
  s.read("lr", c.lr);
  seeded = s.read("seed", c.seed);
  s.finish();
}

void read_aae(const Json& j, AaeConfig& c, bool& seeded) {
  Section s(j, "aae");
  s.read("inputWidth", c.input_width);
  s.read("inputHeight", c.input_height);
  s.read("channels", c.channels);
  s.read("epochs", c.epochs);
  s.read("batch", c.batch);
  s.read("lr", c.lr);
  s.read("normalClass", c.normal_class);
  s.read("labeledFraction", c.labeled_fraction);
  seeded = s.read("seed", c.seed);
  s.finish();
}


std::vector<float> meta_values(const std::vector<NamedTensor>& tensors, const std::string& name) {
  const auto& t = find_tensor(tensors, name);
  return {t.values().begin(), t.values().end()};
}

bool has_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

} // namespace

PreprocessFilters DspConfig::filters(double fs) const {
  return {design_notch(fs, notch_hz, notch_q), design_butterworth_bandpass(fs, band_lo_hz, band_hi_hz, band_order)};
}

PipelineConfig parse_pipeline_config(std::string_view json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::exception& e) {
    throw DomainError("config", std::string("malformed JSON: ") + e.what());
  }
  PipelineConfig cfg;
  Section top(j, "config");
  for (const char* key : {"synth", "dsp", "topomap", "cnn", "aae"}) top.allow(key);
  top.read("globalSeed", cfg.global_seed);
  top.finish();

  bool seeded[4] = {false, false, false, false};
  if (const auto* s = member(j, "synth")) read_synth(*s, cfg.synth, seeded[0]);
  if (const auto* s = member(j, "dsp")) read_dsp(*s, cfg.dsp);
  if (const auto* s = member(j, "topomap")) read_topomap(*s, cfg.topomap, seeded[1]);
  if (const auto* s = member(j, "cnn")) read_cnn(*s, cfg.cnn, seeded[2]);
  if (const auto* s = member(j, "aae")) read_aae(*s, cfg.aae, seeded[3]);
  if (!seeded[0]) cfg.synth.seed = cfg.global_seed;
  if (!seeded[1]) cfg.topomap.seed = cfg.global_seed + 1;
  if (!seeded[2]) cfg.cnn.seed = cfg.global_seed + 2;
  if (!seeded[3]) cfg.aae.seed = cfg.global_seed + 3;

  cfg.synth.validate();
  cfg.dsp.filters(cfg.synth.fs);
  cfg.topomap.band.validate(cfg.synth.fs);
  if (!(cfg.topomap.train_fraction > 0.0 && cfg.topomap.train_fraction < 1.0)) {
    throw DomainError("config", "topomap.trainFraction must lie in (0, 1)");
  }
  cfg.cnn.validate();
  cfg.aae.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const fs::path& path) { return parse_pipeline_config(read_file_text(path)); }

std::string pipeline_config_json(const PipelineConfig& cfg) {
  Json j;
  const auto& s = cfg.synth;
  j["synth"] = {{"nSubjects", s.n_subjects}, {"trialsPerHand", s.trials_per_hand}, {"fs", s.fs},
                {"muFreq", s.mu_freq},       {"muAmp", s.mu_amp},                 {"erdDepth", s.erd_depth},
                {"noiseAmp", s.noise_amp},   {"pinkAmp", s.pink_amp},             {"lineNoiseAmp", s.line_noise_amp},
                {"seed", s.seed}};
  const auto& d = cfg.dsp;
  j["dsp"] = {{"notchHz", d.notch_hz},
              {"notchQ", d.notch_q},
              {"bandLowHz", d.band_lo_hz},
              {"bandHighHz", d.band_hi_hz},
              {"bandOrder", d.band_order}};
  const auto& t = cfg.topomap;
  j["topomap"] = {{"muLowHz", t.band.lo_hz},          {"muHighHz", t.band.hi_hz},
                  {"waveletCycles", t.band.wavelet_cycles}, {"freqStepHz", t.band.freq_step_hz},
                  {"trainFraction", t.train_fraction}, {"seed", t.seed}};
  const auto& c = cfg.cnn;
  j["cnn"] = {{"convChannels", c.conv_channels}, {"kernel", c.kernel}, {"fcSizes", c.fc_sizes}, {"epochs", c.epochs},
              {"batch", c.batch},                {"lr", c.lr},         {"seed", c.seed}};
  const auto& a = cfg.aae;
  j["aae"] = {{"inputWidth", a.input_width},   {"inputHeight", a.input_height},         {"channels", a.channels},
              {"epochs", a.epochs},            {"batch", a.batch},                      {"lr", a.lr},
              {"normalClass", a.normal_class}, {"labeledFraction", a.labeled_fraction}, {"seed", a.seed}};
  j["globalSeed"] = cfg.global_seed;
  return j.dump(2) + "\n";
}

std::size_t synth_stage(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  std::size_t n = 0;
  // Same order and ids as generate_cohort, one trial in memory at a time.
  for (int s = 0; s < cfg.n_subjects; ++s) {
    for (Hand h : {Hand::Right, Hand::Left}) {
      for (int k = 0; k < cfg.trials_per_hand; ++k) {
        const int trial_id = (h == Hand::Right ? 0 : cfg.trials_per_hand) + k;
        const auto trial = generate_trial(cfg, s, trial_id, h);
        write_trial(out_dir / trial_file_name(trial), trial);
        ++n;
      }
    }
  }
  return n;
}

std::size_t preprocess_stage(const fs::path& in_dir, const fs::path& out_dir, const DspConfig& dsp,
                             const std::optional<fs::path>& dump_filters) {
  const auto files = list_trial_files(in_dir);
  if (files.empty()) throw DomainError("preprocess", "no trial files in " + in_dir.string());
  fs::create_directories(out_dir);
  std::optional<double> fs_seen;
  PreprocessFilters filters;
  for (const auto& f : files) {
    const auto trial = read_trial(f);
    if (!fs_seen) {
      fs_seen = trial.fs;
      filters = dsp.filters(trial.fs);
    } else if (*fs_seen != trial.fs) {
      throw DomainError("preprocess", "trials disagree on the sample rate");
    }
    write_trial(out_dir / f.filename(), preprocess_trial(trial, filters));
  }
  if (dump_filters) write_file(*dump_filters, filters_csv(filters));
  return files.size();
}

fs::path manifest_path(const fs::path& dataset_dir) { return dataset_dir / "manifest.jsonl"; }

DatasetManifest dataset_stage(const fs::path& in_dir, const fs::path& out_dir, const DatasetOptions& options) {
  const auto files = list_trial_files(in_dir);
  if (files.empty()) throw DomainError("dataset", "no trial files in " + in_dir.string());
  std::vector<EegTrial> trials;
  trials.reserve(files.size());
  for (const auto& f : files) trials.push_back(read_trial(f));
  fs::create_directories(out_dir / "full");
  fs::create_directories(out_dir / "small");
  auto manifest = build_dataset(trials, options, [&](const ManifestEntry& e, const TopogramImage& full, const GrayImage& small) {
    write_pgm(out_dir / e.path, full.image);
    write_pgm(out_dir / net_input_path(e.path), small);
  });
  write_manifest(manifest_path(out_dir), manifest);
  Json meta;
  meta["format"] = "manifest-jsonl-v1";
  meta["seed"] = manifest.seed;
  meta["images"] = manifest.entries.size();
  meta["train"] = manifest.count(Split::Train);
  meta["test"] = manifest.count(Split::Test);
  write_file(out_dir / "manifest.meta.json", meta.dump(2) + "\n");
  return manifest;
}

LabeledImages load_split(const fs::path& manifest, Split split) {
  const auto m = read_manifest(manifest);
  const auto dir = manifest.parent_path();
  LabeledImages out;
  for (const auto& e : m.entries) {
    if (e.split != split) continue;
    out.images.push_back(read_pgm(dir / net_input_path(e.path)));
    out.labels.push_back(e.label);
  }
  return out;
}

std::vector<NamedTensor> cnn_checkpoint(const Cnn<float>& model) {
  auto tensors = model.state();
  const auto& c = model.config();
  tensors.push_back({"meta.input", Tensor<float>({2}, {static_cast<float>(c.input_height), static_cast<float>(c.input_width)})});
  return tensors;
}

Cnn<float> cnn_from_checkpoint(const std::vector<NamedTensor>& tensors) {
  CnnConfig cfg;
  const auto input = meta_values(tensors, "meta.input");
  if (input.size() != 2) throw IoError("cnn", "bad meta.input record");
  cfg.input_height = static_cast<int>(input[0]);
  cfg.input_width = static_cast<int>(input[1]);
  cfg.conv_channels.clear();
  for (int i = 1; has_tensor(tensors, "conv" + std::to_string(i) + ".w"); ++i) {
    const auto& w = find_tensor(tensors, "conv" + std::to_string(i) + ".w");
    if (w.rank() != 4) throw IoError("cnn", "conv weights must be rank 4");
    cfg.conv_channels.push_back(static_cast<int>(w.dim(0)));
    cfg.kernel = static_cast<int>(w.dim(2));
  }
  cfg.fc_sizes.clear();
  for (int i = 1; has_tensor(tensors, "fc" + std::to_string(i) + ".w"); ++i) {
    const auto& w = find_tensor(tensors, "fc" + std::to_string(i) + ".w");
    if (w.rank() != 2) throw IoError("cnn", "dense weights must be rank 2");
    cfg.fc_sizes.push_back(static_cast<int>(w.dim(1)));
  }
  if (cfg.conv_channels.empty() || cfg.fc_sizes.empty()) throw IoError("cnn", "checkpoint holds no CNN");
  cfg.classes = cfg.fc_sizes.back();
  cfg.fc_sizes.pop_back();
  Cnn<float> model(cfg);
  model.load_state(tensors);
  return model;
}

AaeModel<float> aae_from_checkpoint(const std::vector<NamedTensor>& tensors) {
  AaeConfig cfg;
  cfg.channels.clear();
  for (int i = 1; has_tensor(tensors, "G.enc" + std::to_string(i) + ".w"); ++i) {
    cfg.channels.push_back(static_cast<int>(find_tensor(tensors, "G.enc" + std::to_string(i) + ".w").dim(0)));
  }
  if (cfg.channels.empty()) throw IoError("aae", "checkpoint holds no autoencoder");
  const auto input = meta_values(tensors, "meta.input");
  if (input.size() != 2) throw IoError("aae", "bad meta.input record");
  cfg.input_height = static_cast<int>(input[0]);
  cfg.input_width = static_cast<int>(input[1]);
  AaeModel<float> model(cfg);
  model.load_state(tensors);
  return model;
}

Report train_cnn_stage(const fs::path& manifest, const CnnConfig& cfg, const fs::path& model_out,
                       const fs::path& report_out) {
  const auto train = load_split(manifest, Split::Train);
  const auto test = load_split(manifest, Split::Test);
  Cnn<float> model(cfg);
  const auto result = train_cnn(model, train, test);
  save_checkpoint(model_out, cnn_checkpoint(model));
  auto report = cnn_report(result, cfg);
  emit_report(report, report_out);
  return report;
}

Report eval_cnn_stage(const fs::path& model, const fs::path& manifest, const fs::path& report_out) {
  const auto cnn = cnn_from_checkpoint(load_checkpoint(model));
  auto report = cnn_eval_report(evaluate(cnn, load_split(manifest, Split::Test)));
  emit_report(report, report_out);
  return report;
}

AaeHistory train_aae_stage(const fs::path& manifest, const AaeConfig& cfg, const fs::path& model_out,
                           const std::optional<fs::path>& report_out) {
  AaeModel<float> model(cfg);
  const auto train = resize_for_aae(load_split(manifest, Split::Train), cfg);
  const auto history = train_aae(model, train);
  save_checkpoint(model_out, model.state());
  if (report_out) write_file(*report_out, aae_train_report(history, cfg, model.threshold).json);
  return history;
}

Report eval_aae_stage(const fs::path& model, const fs::path& manifest, const fs::path& report_out) {
  const auto aae = aae_from_checkpoint(load_checkpoint(model));
  const auto test = resize_for_aae(load_split(manifest, Split::Test), aae.config);
  auto report = aae_eval_report(evaluate_aae(aae, aae.threshold, test), aae.threshold);
  emit_report(report, report_out);
  return report;
}

void run_all(const PipelineConfig& cfg, const fs::path& out_dir, int threads) {
  fs::create_directories(out_dir);
  write_file(out_dir / "config.json", pipeline_config_json(cfg));
  synth_stage(cfg.synth, out_dir / "raw");
  preprocess_stage(out_dir / "raw", out_dir / "clean", cfg.dsp, out_dir / "filters.csv");
  DatasetOptions opt;
  opt.band = cfg.topomap.band;
  opt.seed = cfg.topomap.seed;
  opt.train_fraction = cfg.topomap.train_fraction;
  opt.threads = threads;
  dataset_stage(out_dir / "clean", out_dir / "dataset", opt);
  const auto manifest = manifest_path(out_dir / "dataset");
  train_cnn_stage(manifest, cfg.cnn, out_dir / "cnn" / "model.ntw", out_dir / "cnn" / "train.json");
  eval_cnn_stage(out_dir / "cnn" / "model.ntw", manifest, out_dir / "cnn" / "report.json");
  train_aae_stage(manifest, cfg.aae, out_dir / "aae" / "model.ntw", out_dir / "aae" / "train.json");
  eval_aae_stage(out_dir / "aae" / "model.ntw", manifest, out_dir / "aae" / "report.json");
}

} // namespace neurotopo
