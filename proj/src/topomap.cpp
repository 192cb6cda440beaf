#include "neurotopo/topomap.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/fileio.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <exception>
#include <thread>

namespace neurotopo {

namespace {

bool overlaps(TimeWindow a, TimeWindow b) { return a.start < b.end && b.start < a.end; }

} // namespace

void WindowPlan::validate() const {
  for (const auto& w : windows) {
    if (std::abs((w.end - w.start) - 1.5) > 1e-9) throw DomainError("topomap", "analysis windows must be 1.5 s long");
    for (const auto& x : excluded) {
      if (overlaps(w, x)) throw DomainError("topomap", "analysis window intersects an excluded interval");
    }
  }
  if (!(baseline.start > 0.0 && baseline.end < 5.0 && baseline.start < baseline.end)) {
    throw DomainError("topomap", "baseline interval must lie inside (0, 5) s");
  }
}

const char* to_string(BaselineMode mode) { return mode == BaselineMode::Absolute ? "absolute" : "relative"; }

BaselineMode baseline_mode_from_string(std::string_view s) {
  if (s == "absolute") return BaselineMode::Absolute;
  if (s == "relative") return BaselineMode::Relative;
  throw DomainError("topomap", "unknown baseline mode " + std::string(s));
}

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<TimeWindow> slice_windows(const WindowPlan& plan, double trial_len) {
  plan.validate();
  double last_end = 0.0;
  for (const auto& w : plan.windows) last_end = std::max(last_end, w.end);
  if (trial_len < last_end) throw DomainError("topomap", "trial too short for the window plan");
  return plan.windows;
}

std::vector<double> baseline_correct(std::span<const double> power, std::span<const double> baseline,
                                     BaselineMode mode) {
  if (power.size() != baseline.size()) throw DomainError("topomap", "power and baseline length differ");
  std::vector<double> out(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) {
    if (mode == BaselineMode::Absolute) {
      out[i] = power[i] - baseline[i];
    } else {
      if (!(baseline[i] > 0.0)) throw DomainError("topomap", "relative baseline requires positive baseline power");
      out[i] = power[i] / baseline[i];
    }
  }
  return out;
}

IdwInterpolator::IdwInterpolator(const Montage& montage, int width, int height)
    : width_(width), height_(height), channels_(montage.size()) {
  const HeadCircle head = Montage::head_radius_px(width, height);
  const std::size_t n_pix = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  inside_.assign(n_pix, 0);
  node_.assign(n_pix, -1);
  weight_row_.assign(n_pix, 0);

  std::vector<std::array<int, 2>> nodes;
  for (std::size_t e = 0; e < channels_; ++e) nodes.push_back(montage.electrode_pixel(e, width, height));
  for (std::size_t e = 0; e < channels_; ++e) {
    const auto [ex, ey] = nodes[e];
    auto& slot = node_[static_cast<std::size_t>(ey) * width + ex];
    if (slot < 0) slot = static_cast<std::int32_t>(e);
  }

  std::uint32_t row = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * width + x;
      if (!head.contains(x + 0.5, y + 0.5)) {
        node_[p] = -1;
        continue;
      }
      inside_[p] = 1;
      if (node_[p] >= 0) continue;
      weight_row_[p] = row++;
      for (std::size_t e = 0; e < channels_; ++e) {
        const double dx = x - nodes[e][0];
        const double dy = y - nodes[e][1];
        weights_.push_back(static_cast<float>(1.0 / (dx * dx + dy * dy)));
      }
    }
  }
}

ScalarField IdwInterpolator::interpolate(std::span<const double> values) const {
  if (values.size() != channels_) throw DomainError("topomap", "value count does not match the montage");
  for (double v : values) {
    if (!std::isfinite(v)) throw DomainError("topomap", "non-finite electrode value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;

  ScalarField field;
  field.width = width_;
  field.height = height_;
  field.inside = inside_;
  field.values.assign(inside_.size(), 0.0);
  std::vector<double> shifted(values.size());
  for (std::size_t e = 0; e < values.size(); ++e) shifted[e] = values[e] - lo;

  for (std::size_t p = 0; p < inside_.size(); ++p) {
    if (!inside_[p]) continue;
    if (node_[p] >= 0) {
      field.values[p] = values[static_cast<std::size_t>(node_[p])];
      continue;
    }
    const float* w = weights_.data() + static_cast<std::size_t>(weight_row_[p]) * channels_;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t e = 0; e < channels_; ++e) {
      num += w[e] * shifted[e];
      den += w[e];
    }
    // Offsetting by the minimum keeps constant inputs exact; the clamp only
    // absorbs rounding at the hull boundary.
    field.values[p] = std::clamp(lo + num / den, lo, hi);
  }
  return field;
}

ScalarField interpolate_scalp(std::span<const double> values, const Montage& montage, int width, int height) {
  return IdwInterpolator(montage, width, height).interpolate(values);
}

GrayImage render_field(const ScalarField& field) {
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t p = 0; p < field.values.size(); ++p) {
    if (!field.inside[p]) continue;
    const double v = field.values[p];
    if (!std::isfinite(v)) throw DomainError("topomap", "non-finite field value");
    if (!any) {
      lo = hi = v;
      any = true;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!any || !(hi > lo)) throw DomainError("topomap", "constant field cannot be normalized");
  GrayImage img(field.width, field.height);
  const double range = hi - lo;
  for (std::size_t p = 0; p < field.values.size(); ++p) {
    if (!field.inside[p]) continue;
    img.pixels[p] = static_cast<std::uint8_t>(std::round((field.values[p] - lo) / range * 255.0));
  }
  return img;
}

TopogramImage render_topogram(const ScalarField& field, const TopogramMeta& meta) {
  return {render_field(field), meta};
}

GrayImage downsample(const GrayImage& img) {
  if (img.width != kTopoWidth || img.height != kTopoHeight) {
    throw DomainError("topomap", "downsample expects an 840x630 image");
  }
  GrayImage out(kNetWidth, kNetHeight);
  for (int by = 0; by < kNetHeight; ++by) {
    for (int bx = 0; bx < kNetWidth; ++bx) {
      int sum = 0;
      for (int y = 0; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) sum += img.at(bx * 10 + x, by * 10 + y);
      }
      out.at(bx, by) = static_cast<std::uint8_t>((sum + 50) / 100);
    }
  }
  return out;
}

std::vector<Split> stratified_split(std::span<const int> labels, std::span<const int> groups,
                                    double train_fraction, std::uint64_t seed) {
  if (labels.size() != groups.size()) throw DomainError("topomap", "labels and groups differ in length");
  if (labels.empty()) throw DomainError("topomap", "cannot split an empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw DomainError("topomap", "train fraction must lie in (0, 1)");

  // Groups in first-appearance order, each tagged with the label of its first item.
  std::map<int, std::size_t> group_index;
  std::vector<int> group_label;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = group_index.try_emplace(groups[i], group_label.size());
    if (fresh) {
      group_label.push_back(labels[i]);
    } else if (group_label[it->second] != labels[i]) {
      throw DomainError("topomap", "a group mixes labels");
    }
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t g = 0; g < group_label.size(); ++g) by_class[group_label[g]].push_back(g);

  const auto total_train = static_cast<std::size_t>(std::llround(train_fraction * group_label.size()));
  std::map<int, std::size_t> quota;
  std::vector<std::pair<double, int>> remainders;
  std::size_t assigned = 0;
  for (const auto& [label, members] : by_class) {
    const double exact = train_fraction * members.size();
    quota[label] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[label];
    remainders.emplace_back(exact - std::floor(exact), label);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total_train && i < remainders.size(); ++i, ++assigned) {
    ++quota[remainders[i].second];
  }

  std::mt19937_64 rng(seed);
  std::vector<Split> group_split(group_label.size(), Split::Test);
  for (auto& [label, members] : by_class) {
    for (std::size_t i = members.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(members[i - 1], members[pick(rng)]);
    }
    for (std::size_t i = 0; i < quota[label] && i < members.size(); ++i) group_split[members[i]] = Split::Train;
  }

  std::vector<Split> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = group_split[group_index[groups[i]]];
  return out;
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [s](const ManifestEntry& e) { return e.split == s; }));
}

std::string encode_manifest(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["label"] = e.label;
    j["split"] = to_string(e.split);
    j["subject"] = e.subject;
    j["trial"] = e.trial;
    j["window"] = e.window;
    j["baseline"] = to_string(e.baseline);
    out += j.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest decode_manifest(const std::string& text) {
  DatasetManifest m;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      e.label = j.at("label").get<int>();
      const auto split = j.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DomainError("manifest", "bad split " + split);
      e.split = split == "train" ? Split::Train : Split::Test;
      e.subject = j.at("subject").get<int>();
      e.trial = j.at("trial").get<int>();
      e.window = j.at("window").get<int>();
      e.baseline = baseline_mode_from_string(j.at("baseline").get<std::string>());
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("manifest", "line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_file(path, encode_manifest(m));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  return decode_manifest(read_file_text(path));
}

std::string net_input_path(const std::string& full_path) {
  if (full_path.rfind("full/", 0) == 0) return "small/" + full_path.substr(5);
  return full_path;
}

TrialPowers trial_band_powers(const EegTrial& trial, const WindowPlan& plan, const BandPowerSpec& band) {
  const auto windows = slice_windows(plan, trial.duration());
  TrialPowers out;
  out.windows.assign(windows.size(), std::vector<double>(trial.channels()));
  out.baseline.resize(trial.channels());
  for (std::size_t c = 0; c < trial.channels(); ++c) {
    const auto trace = morlet_power_trace(trial.samples[c], trial.fs, band);
    out.baseline[c] = window_mean(trace, trial.fs, plan.baseline);
    for (std::size_t w = 0; w < windows.size(); ++w) out.windows[w][c] = window_mean(trace, trial.fs, windows[w]);
  }
  return out;
}

namespace {

struct TrialImages {
  std::vector<ManifestEntry> entries;
  std::vector<TopogramImage> full;
  std::vector<GrayImage> small;
};

TrialImages render_trial(const EegTrial& trial, Split split, const DatasetOptions& opt,
                         const IdwInterpolator& idw) {
  const TrialPowers powers = trial_band_powers(trial, opt.plan, opt.band);
  TrialImages out;
  for (std::size_t w = 0; w < powers.windows.size(); ++w) {
    for (BaselineMode mode : {BaselineMode::Absolute, BaselineMode::Relative}) {
      const auto corrected = baseline_correct(powers.windows[w], powers.baseline, mode);
      TopogramMeta meta{trial.subject_id, trial.trial_id, static_cast<int>(w), mode, trial.label};
      TopogramImage topo = render_topogram(idw.interpolate(corrected), meta);
      char name[96];
      std::snprintf(name, sizeof(name), "full/s%03d_t%03d_w%zu_%s.pgm", trial.subject_id, trial.trial_id, w,
                    to_string(mode));
      ManifestEntry e{name, label_of(trial.label), split, trial.subject_id, trial.trial_id, static_cast<int>(w), mode};
      GrayImage small = (topo.image.width == kTopoWidth && topo.image.height == kTopoHeight)
                            ? downsample(topo.image)
                            : resize_bilinear(topo.image, kNetWidth, kNetHeight);
      out.entries.push_back(std::move(e));
      out.full.push_back(std::move(topo));
      out.small.push_back(std::move(small));
    }
  }
  return out;
}

} // namespace

DatasetManifest build_dataset(std::span<const EegTrial> trials, const DatasetOptions& options,
                              const TopogramSink& sink) {
  if (trials.empty()) throw DomainError("dataset", "no trials");
  options.plan.validate();

  // Lexicographic (subject, trial) order regardless of input order.
  std::vector<std::size_t> order(trials.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair(trials[a].subject_id, trials[a].trial_id) < std::pair(trials[b].subject_id, trials[b].trial_id);
  });

  std::vector<int> labels, groups;
  bool has[2] = {false, false};
  for (std::size_t k = 0; k < order.size(); ++k) {
    const int label = label_of(trials[order[k]].label);
    labels.push_back(label);
    groups.push_back(static_cast<int>(k));
    has[label] = true;
  }
  if (!has[0] || !has[1]) throw DomainError("dataset", "both classes must be present");
  const auto splits = stratified_split(labels, groups, options.train_fraction, options.seed);

  const IdwInterpolator idw(builtin_montage32(), options.width, options.height);
  DatasetManifest manifest;
  manifest.seed = options.seed;

  const std::size_t threads = static_cast<std::size_t>(std::max(1, options.threads));
  for (std::size_t begin = 0; begin < order.size(); begin += threads) {
    const std::size_t end = std::min(order.size(), begin + threads);
    std::vector<TrialImages> batch(end - begin);
    std::vector<std::exception_ptr> failures(end - begin);
    auto work = [&](std::size_t k) {
      try {
        batch[k - begin] = render_trial(trials[order[k]], splits[k], options, idw);
      } catch (...) {
        failures[k - begin] = std::current_exception();
      }
    };
    if (threads == 1) {
      work(begin);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t k = begin; k < end; ++k) pool.emplace_back(work, k);
    }
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
    for (auto& t : batch) {
      for (std::size_t i = 0; i < t.entries.size(); ++i) {
        if (sink) sink(t.entries[i], t.full[i], t.small[i]);
        manifest.entries.push_back(std::move(t.entries[i]));
      }
    }
  }
  return manifest;
}

} // namespace neurotopo
