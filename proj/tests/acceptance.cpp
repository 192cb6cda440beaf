// Prints one PASS/FAIL line per acceptance criterion. Optional arguments pick
// a subset, e.g. `acceptance 3 4 5`.

#include "neurotopo/aae.hpp"
#include "neurotopo/cnn.hpp"
#include "neurotopo/dsp.hpp"
#include "neurotopo/fileio.hpp"
#include "neurotopo/gradcheck.hpp"
#include "neurotopo/montage.hpp"
#include "neurotopo/synthgen.hpp"
#include "neurotopo/topomap.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace neurotopo;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v, const char* fmt = "%.3f") {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, fmt, v[i]);
    out += (i ? "," : "") + std::string(buf);
  }
  return out;
}

int failures = 0;

void verdict(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("ACCEPTANCE %d %s %s: %s\n", id, ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Cohort {
  LabeledImages train, test;
  double build_s{0.0};
};

// Default cohort built in memory, shared by the CNN and AAE criteria.
const Cohort& default_cohort() {
  static std::optional<Cohort> cohort;
  if (cohort) return *cohort;
  cohort.emplace();
  const auto t0 = Clock::now();
  SynthConfig sc;
  auto trials = generate_cohort(sc);
  for (auto& t : trials) t = preprocess_trial(t);
  DatasetOptions opt;
  opt.seed = 1;
  build_dataset(trials, opt, [&](const ManifestEntry& e, const TopogramImage&, const GrayImage& small) {
    auto& d = e.split == Split::Train ? cohort->train : cohort->test;
    d.images.push_back(small);
    d.labels.push_back(e.label);
  });
  cohort->build_s = seconds_since(t0);
  std::printf("  cohort: %zu train + %zu test images in %.1fs\n", cohort->train.size(), cohort->test.size(),
              cohort->build_s);
  return *cohort;
}

void cnn_accuracy() {
  const auto& c = default_cohort();
  std::vector<double> acc, secs;
  for (std::uint64_t seed : {1, 2, 3}) {
    CnnConfig cfg;
    cfg.seed = seed;
    Cnn<float> model(cfg);
    const auto t0 = Clock::now();
    train_cnn(model, c.train, c.test);
    acc.push_back(evaluate(model, c.test).accuracy);
    secs.push_back(seconds_since(t0) + c.build_s);
    std::printf("  cnn seed %llu: accuracy %.4f, %.1fs with dataset\n", static_cast<unsigned long long>(seed), acc.back(),
                secs.back());
  }
  const double worst = *std::max_element(secs.begin(), secs.end());
  verdict(1, "cnn-accuracy", median(acc) >= 0.90 && worst <= 15 * 60,
          fmt("median accuracy %.4f (>= 0.90) over seeds [%s]; slowest run %.0fs (<= 900s)", median(acc),
              join(acc).c_str(), worst));
}

void aae_band() {
  const auto& c = default_cohort();
  AaeConfig base;
  base.epochs = 100;
  const auto train = resize_for_aae(c.train, base), test = resize_for_aae(c.test, base);
  std::vector<double> auc, bacc, secs;
  for (std::uint64_t seed : {1, 2, 3}) {
    AaeConfig cfg = base;
    cfg.seed = seed;
    AaeModel<float> model(cfg);
    const auto t0 = Clock::now();
    train_aae(model, train);
    const auto ev = evaluate_aae(model, model.threshold, test);
    secs.push_back(seconds_since(t0) + c.build_s);
    auc.push_back(ev.auc);
    bacc.push_back(ev.balanced_accuracy);
    std::printf("  aae seed %llu: auc %.4f, balanced accuracy %.4f, accuracy %.4f, %.1fs with dataset\n",
                static_cast<unsigned long long>(seed), ev.auc, ev.balanced_accuracy, ev.accuracy, secs.back());
  }
  const double worst = *std::max_element(secs.begin(), secs.end());
  verdict(2, "aae-band", median(auc) >= 0.75 && median(bacc) >= 0.60 && worst <= 30 * 60,
          fmt("median auc %.4f (>= 0.75) [%s]; median balanced accuracy %.4f (>= 0.60) [%s]; slowest run %.0fs (<= 1800s)",
              median(auc), join(auc).c_str(), median(bacc), join(bacc).c_str(), worst));
}

void dataset_shape() {
  bool ok = true;
  std::string detail;
  for (auto [subjects, per_hand] : std::vector<std::pair<int, int>>{{1, 2}, {1, 5}, {2, 3}}) {
    SynthConfig sc;
    sc.n_subjects = subjects;
    sc.trials_per_hand = per_hand;
    sc.seed = 11;
    auto trials = generate_cohort(sc);
    for (auto& t : trials) t = preprocess_trial(t);
    DatasetOptions opt;
    opt.seed = 5;
    const auto m = build_dataset(trials, opt, nullptr);
    const std::size_t n = trials.size();
    // Split sizes are counted in trials: every image of a trial shares its split.
    std::map<std::pair<int, int>, std::set<Split>> split_of;
    std::array<double, 2> per_class{}, per_class_train{};
    for (const auto& e : m.entries) split_of[{e.subject, e.trial}].insert(e.split);
    for (const auto& t : trials) {
      const auto& s = split_of[{t.subject_id, t.trial_id}];
      const int label = label_of(t.label);
      per_class[label] += 1;
      per_class_train[label] += s.count(Split::Train) ? 1 : 0;
      ok = ok && s.size() == 1;
    }
    const double train_trials = per_class_train[0] + per_class_train[1];
    const bool count_ok = m.entries.size() == n * 4 * 2;
    const bool split_ok = train_trials == std::round(0.8 * n) && m.count(Split::Train) == train_trials * 8;
    double worst_strat = 0;
    for (int k = 0; k < 2; ++k)
      worst_strat = std::max(worst_strat, std::abs(per_class_train[k] - per_class[k] * train_trials / n));
    ok = ok && count_ok && split_ok && worst_strat <= 1.0;
    detail += fmt("%s%zu trials -> %zu images (expect %zu), %g train trials (expect %g), class offset %.2f",
                  detail.empty() ? "" : "; ", n, m.entries.size(), n * 8, train_trials, std::round(0.8 * n),
                  worst_strat);
  }
  verdict(3, "dataset-shape", ok, detail);
}

void filter_spec() {
  const auto t0 = Clock::now();
  constexpr double fs = 1000.0;
  const auto band = design_butterworth_bandpass(fs, 1.0, 100.0, 5);
  const auto notch = design_notch(fs, 50.0, 35.0);
  auto db = [](double g) { return 20.0 * std::log10(g); };
  const double lo = db(oracle::steady_state_gain(band, 1.0, fs));
  const double hi = db(oracle::steady_state_gain(band, 100.0, fs));
  const double line = -db(oracle::steady_state_gain(notch, 50.0, fs));
  const double secs = seconds_since(t0);
  const bool ok = std::abs(lo + 3.0103) <= 0.25 && std::abs(hi + 3.0103) <= 0.25 && line >= 20.0 && secs < 10.0;
  verdict(4, "filter-spec", ok,
          fmt("1 Hz %.3f dB, 100 Hz %.3f dB (-3.01 +/- 0.25); notch %.1f dB (>= 20); %.2fs (< 10s)", lo, hi, line, secs));
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto rows = run_gradcheck(20, 1);
  double worst_grad = 0;
  bool all_seeds = true;
  std::string worst_op;
  for (const auto& r : rows) {
    all_seeds = all_seeds && r.seeds == 20;
    if (r.max_rel_error >= worst_grad) {
      worst_grad = r.max_rel_error;
      worst_op = r.op;
    }
  }
  std::mt19937_64 rng(4);
  double worst_conv = 0;
  std::size_t shapes = 0;
  for (std::size_t n = 1; n <= 2; ++n)
    for (std::size_t c = 1; c <= 2; ++c)
      for (std::size_t h = 1; h <= 8; ++h)
        for (std::size_t w = 1; w <= 8; ++w) {
          const auto x = Tensor<double>::uniform({n, c, h, w}, -1, 1, rng);
          const auto k = Tensor<double>::uniform({2, c, 5, 5}, -1, 1, rng);
          const auto b = Tensor<double>::uniform({2}, -1, 1, rng);
          const auto fast = conv2d(constant(x), constant(k), constant(b))->value;
          const auto slow = oracle::conv2d_direct(x, k, b, 1, 2);
          for (std::size_t i = 0; i < fast.size(); ++i) worst_conv = std::max(worst_conv, std::abs(fast[i] - slow[i]));
          ++shapes;
        }
  const double secs = seconds_since(t0);
  verdict(5, "gradient-suite", all_seeds && worst_grad < 1e-4 && worst_conv < 1e-6 && secs < 60.0,
          fmt("%zu ops x 20 seeds, worst rel err %.2e (%s) (< 1e-4); conv2d vs direct sum over %zu shapes %.2e (< 1e-6); "
              "%.2fs (< 60s)",
              rows.size(), worst_grad, worst_op.c_str(), shapes, worst_conv, secs));
}

double l1(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

void loss_identities() {
  double worst_sum = 0, worst_diff = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    AaeConfig cfg;
    cfg.seed = seed;
    AaeModel<double> m(cfg);
    std::mt19937_64 rng(seed);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const auto xv = Tensor<double>::uniform({n, 1, 48, 64}, 0.0, 1.0, rng);
    const auto x = constant(xv);
    const double ld = loss_d(x, m.generator, m.discriminator)->value[0];
    const double lg = loss_g(x, m.generator, m.discriminator)->value[0];
    const auto gx = m.generator(x);
    const double real = l1(xv, m.discriminator(x)->value) / n;
    const double fake = l1(gx->value, m.discriminator(gx)->value) / n;
    worst_sum = std::max(worst_sum, std::abs(ld + lg - 2 * real) / std::max(1.0, real));
    worst_diff = std::max(worst_diff, std::abs(lg - ld - 2 * fake) / std::max(1.0, fake));
  }
  verdict(6, "loss-identities", worst_sum < 1e-5 && worst_diff < 1e-5,
          fmt("100 instances at 64x48; sum identity %.2e, difference identity %.2e (< 1e-5, relative to max(1, norm))",
              worst_sum, worst_diff));
}

void topogram_properties() {
  const auto& montage = builtin_montage32();
  const IdwInterpolator idw(montage, kTopoWidth, kTopoHeight);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  double node_err = 0, hull_excess = 0;
  bool affine_ok = true;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> v(montage.size());
    for (auto& x : v) x = u(rng);
    const auto field = idw.interpolate(v);
    for (std::size_t e = 0; e < montage.size(); ++e) {
      const auto [px, py] = montage.electrode_pixel(e, kTopoWidth, kTopoHeight);
      node_err = std::max(node_err, std::abs(field.at(px, py) - v[e]));
    }
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    for (int y = 0; y < field.height; ++y)
      for (int x = 0; x < field.width; ++x)
        if (field.is_inside(x, y))
          hull_excess = std::max({hull_excess, *lo - field.at(x, y), field.at(x, y) - *hi});
    const double a = std::exp(u(rng) / 2), b = u(rng) * 10;
    std::vector<double> w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = a * v[i] + b;
    affine_ok = affine_ok && render_field(field) == render_field(idw.interpolate(w));
  }

  SynthConfig sc;
  sc.n_subjects = 2;
  sc.trials_per_hand = 13;
  sc.seed = 31;
  auto trials = generate_cohort(sc);
  for (auto& t : trials) t = preprocess_trial(t);
  const auto [cx, cy] = montage.electrode_pixel(*montage.index_of("C4"), kTopoWidth, kTopoHeight);
  constexpr int radius = 25;
  std::array<double, 2> sum{}, count{};
  DatasetOptions opt;
  build_dataset(trials, opt, [&](const ManifestEntry& e, const TopogramImage& full, const GrayImage&) {
    if (e.baseline != BaselineMode::Relative) return;
    double s = 0;
    int k = 0;
    for (int y = cy - radius; y <= cy + radius; ++y)
      for (int x = cx - radius; x <= cx + radius; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) {
          s += full.image.at(x, y);
          ++k;
        }
    sum[e.label] += s / k;
    count[e.label] += 1;
  });
  const double left = sum[label_of(Hand::Left)] / count[label_of(Hand::Left)];
  const double right = sum[label_of(Hand::Right)] / count[label_of(Hand::Right)];
  const bool lateral_ok = left < right && count[0] >= 100 && count[1] >= 100;
  verdict(7, "topogram-properties", node_err < 1e-9 && hull_excess <= 1e-9 && affine_ok && lateral_ok,
          fmt("node error %.1e; hull excess %.1e; affine-invariant render %s; C4 region mean left hand %.1f < right hand "
              "%.1f over %g/%g relative images",
              node_err, hull_excess, affine_ok ? "yes" : "no", left, right, count[label_of(Hand::Left)],
              count[label_of(Hand::Right)]));
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file_bytes(e.path());
  return out;
}

void determinism() {
  std::random_device rd;
  const auto dir = fs::temp_directory_path() / ("neurotopo_accept_" + std::to_string(rd()));
  fs::create_directories(dir);
  write_file(dir / "config.json",
             std::string(R"({"synth": {"nSubjects": 1, "trialsPerHand": 4}, "cnn": {"epochs": 2}, )"
                         R"("aae": {"epochs": 3, "labeledFraction": 1.0}, "globalSeed": 7})"));
  int status[2];
  for (int run = 0; run < 2; ++run) {
    const auto cmd = "'" NEUROTOPO_CLI "' all --config '" + (dir / "config.json").string() + "' --out '" +
                     (dir / ("run" + std::to_string(run))).string() + "' --threads 1 > /dev/null";
    status[run] = std::system(cmd.c_str());
  }
  bool ok = status[0] == 0 && status[1] == 0;
  std::size_t files = 0, differing = 0;
  if (ok) {
    const auto a = snapshot(dir / "run0"), b = snapshot(dir / "run1");
    files = a.size();
    for (const auto& [path, bytes] : a) differing += !b.count(path) || b.at(path) != bytes;
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    ok = differing == 0 && a.count("dataset/manifest.jsonl") && a.count("cnn/model.ntw") && a.count("aae/model.ntw") &&
         a.count("cnn/report.json") && a.count("aae/report.json");
  }
  fs::remove_all(dir);
  verdict(8, "determinism", ok, fmt("two `all` runs, %zu files, %zu differing", files, differing));
}

void label_permutation() {
  const auto& c = default_cohort();
  auto shuffled = c.train;
  std::mt19937_64 rng(99);
  std::shuffle(shuffled.labels.begin(), shuffled.labels.end(), rng);
  CnnConfig cfg;
  cfg.seed = 1;
  Cnn<float> model(cfg);
  train_cnn(model, shuffled, c.test);
  const double acc = evaluate(model, c.test).accuracy;
  verdict(9, "label-permutation", acc >= 0.40 && acc <= 0.60,
          fmt("test accuracy %.4f with shuffled training labels (in [0.40, 0.60])", acc));
}

} // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, void (*)()>> criteria{
      {3, dataset_shape},   {4, filter_spec}, {5, gradient_suite}, {6, loss_identities}, {7, topogram_properties},
      {8, determinism},     {1, cnn_accuracy}, {9, label_permutation}, {2, aae_band}};
  for (const auto& [id, run] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    try {
      run();
    } catch (const std::exception& e) {
      verdict(id, "error", false, e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
