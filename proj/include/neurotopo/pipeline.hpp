#pragma once

#include "neurotopo/aae.hpp"
#include "neurotopo/cnn.hpp"
#include "neurotopo/dsp.hpp"
#include "neurotopo/report.hpp"
#include "neurotopo/synthgen.hpp"
#include "neurotopo/topomap.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace neurotopo {

inline constexpr char kVersion[] = "1.0.0";

struct DspConfig {
  double notch_hz{50.0};
  double notch_q{35.0};
  double band_lo_hz{1.0};
  double band_hi_hz{100.0};
  int band_order{5};

  PreprocessFilters filters(double fs) const;
};

struct TopomapConfig {
  BandPowerSpec band;
  double train_fraction{0.8};
  std::uint64_t seed{0};
};

// Section seeds that the document leaves out are derived from globalSeed:
// synth +0, topomap +1, cnn +2, aae +3.
struct PipelineConfig {
  SynthConfig synth;
  DspConfig dsp;
  TopomapConfig topomap;
  CnnConfig cnn;
  AaeConfig aae;
  std::uint64_t global_seed{1};
};

// Strict parse: unknown keys anywhere are a domain error.
PipelineConfig parse_pipeline_config(std::string_view json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string pipeline_config_json(const PipelineConfig& cfg);

// Writes one trial file per generated trial; returns the trial count.
std::size_t synth_stage(const SynthConfig& cfg, const std::filesystem::path& out_dir);
// Filters every trial file of in_dir into out_dir under the same name.
std::size_t preprocess_stage(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir,
                             const DspConfig& dsp, const std::optional<std::filesystem::path>& dump_filters = {});
// Writes full/ and small/ images, manifest.jsonl and manifest.meta.json.
DatasetManifest dataset_stage(const std::filesystem::path& in_dir, const std::filesystem::path& out_dir,
                              const DatasetOptions& options);

std::filesystem::path manifest_path(const std::filesystem::path& dataset_dir);
// The 84x63 network inputs of one split, in manifest order.
LabeledImages load_split(const std::filesystem::path& manifest, Split split);

// Checkpoints carry the input size so models can be rebuilt from the file.
std::vector<NamedTensor> cnn_checkpoint(const Cnn<float>& model);
Cnn<float> cnn_from_checkpoint(const std::vector<NamedTensor>& tensors);
AaeModel<float> aae_from_checkpoint(const std::vector<NamedTensor>& tensors);

Report train_cnn_stage(const std::filesystem::path& manifest, const CnnConfig& cfg,
                       const std::filesystem::path& model_out, const std::filesystem::path& report_out);
Report eval_cnn_stage(const std::filesystem::path& model, const std::filesystem::path& manifest,
                      const std::filesystem::path& report_out);
// The optional report holds the loss history.
AaeHistory train_aae_stage(const std::filesystem::path& manifest, const AaeConfig& cfg,
                           const std::filesystem::path& model_out,
                           const std::optional<std::filesystem::path>& report_out = {});
Report eval_aae_stage(const std::filesystem::path& model, const std::filesystem::path& manifest,
                      const std::filesystem::path& report_out);

// Every stage in order under out_dir.
void run_all(const PipelineConfig& cfg, const std::filesystem::path& out_dir, int threads = 1);

} // namespace neurotopo
