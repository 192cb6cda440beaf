#pragma once

#include "neurotopo/dsp.hpp"
#include "neurotopo/image.hpp"
#include "neurotopo/montage.hpp"
#include "neurotopo/synthgen.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace neurotopo {

inline constexpr int kTopoWidth = 840;
inline constexpr int kTopoHeight = 630;
inline constexpr int kNetWidth = 84;
inline constexpr int kNetHeight = 63;

struct WindowPlan {
  std::vector<TimeWindow> windows{{5.5, 7.0}, {6.0, 7.5}, {6.5, 8.0}, {7.0, 8.5}};
  std::vector<TimeWindow> excluded{{5.0, 5.5}, {8.5, 10.0}};
  TimeWindow baseline{1.0, 4.5};

  void validate() const;
};

enum class BaselineMode : int { Absolute = 0, Relative = 1 };

const char* to_string(BaselineMode mode);
BaselineMode baseline_mode_from_string(std::string_view s);

std::vector<TimeWindow> slice_windows(const WindowPlan& plan, double trial_len);

std::vector<double> baseline_correct(std::span<const double> power, std::span<const double> baseline,
                                     BaselineMode mode);

// Interpolated scalp values on a width x height raster. Pixels outside the
// head disc are background and carry no value.
struct ScalarField {
  int width{0};
  int height{0};
  std::vector<double> values;        // row-major
  std::vector<std::uint8_t> inside;  // 1 inside the head disc

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool is_inside(int x, int y) const { return inside[static_cast<std::size_t>(y) * width + x] != 0; }
};

// Inverse-distance (power 2) interpolation over the montage electrodes, with
// per-pixel weights computed once for a given montage and raster size.
class IdwInterpolator {
 public:
  IdwInterpolator(const Montage& montage, int width, int height);

  ScalarField interpolate(std::span<const double> values) const;

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t channels() const { return channels_; }

 private:
  int width_;
  int height_;
  std::size_t channels_;
  std::vector<std::uint8_t> inside_;
  // For each inside pixel: electrode index when it sits on an electrode,
  // otherwise -1 and its raw 1/d^2 weights in weights_.
  std::vector<std::int32_t> node_;
  std::vector<std::uint32_t> weight_row_;
  std::vector<float> weights_;
};

ScalarField interpolate_scalp(std::span<const double> values, const Montage& montage, int width, int height);

GrayImage render_field(const ScalarField& field);

struct TopogramMeta {
  int subject_id{0};
  int trial_id{0};
  int window_index{0};
  BaselineMode baseline{BaselineMode::Absolute};
  Hand label{Hand::Right};
};

struct TopogramImage {
  GrayImage image;
  TopogramMeta meta;
};

TopogramImage render_topogram(const ScalarField& field, const TopogramMeta& meta = {});

// 840x630 -> 84x63 by 10x10 block means.
GrayImage downsample(const GrayImage& img);

enum class Split : int { Train = 0, Test = 1 };
const char* to_string(Split s);

// Seeded stratified split. Items sharing a group id always land in the same
// split; the train share is round(train_fraction * number_of_groups), spread
// over classes by largest remainder.
std::vector<Split> stratified_split(std::span<const int> labels, std::span<const int> groups,
                                    double train_fraction, std::uint64_t seed);

struct ManifestEntry {
  std::string path;  // full-resolution image, relative to the manifest directory
  int label{0};
  Split split{Split::Train};
  int subject{0};
  int trial{0};
  int window{0};
  BaselineMode baseline{BaselineMode::Absolute};
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed{0};

  std::size_t count(Split s) const;
};

// JSON lines, one object per entry with keys in the order
// path, label, split, subject, trial, window, baseline.
std::string encode_manifest(const DatasetManifest& m);
DatasetManifest decode_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Path of the 84x63 copy that sits next to a full-resolution image.
std::string net_input_path(const std::string& full_path);

struct DatasetOptions {
  WindowPlan plan;
  BandPowerSpec band;
  std::uint64_t seed{0};
  double train_fraction{0.8};
  int width{kTopoWidth};
  int height{kTopoHeight};
  int threads{1};
};

// Receives images in manifest order.
using TopogramSink = std::function<void(const ManifestEntry&, const TopogramImage& full, const GrayImage& small)>;

// Trials must already be preprocessed. Produces #trials x #windows x 2 images.
DatasetManifest build_dataset(std::span<const EegTrial> trials, const DatasetOptions& options,
                              const TopogramSink& sink);

// Mu-band power per channel for each analysis window plus the baseline.
struct TrialPowers {
  std::vector<std::vector<double>> windows;  // [window][channel]
  std::vector<double> baseline;              // [channel]
};
TrialPowers trial_band_powers(const EegTrial& trial, const WindowPlan& plan, const BandPowerSpec& band);

} // namespace neurotopo
