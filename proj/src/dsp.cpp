#include "neurotopo/dsp.hpp"

#include "neurotopo/error.hpp"
#include "neurotopo/synthgen.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numbers>

namespace neurotopo {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

void require_finite(std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw DomainError("dsp", "non-finite sample");
  }
}

// Section from a conjugate pole pair (or two real poles) with zeros at z = +1
// and z = -1.
Biquad bandpass_section(cplx p1, cplx p2) {
  Biquad s;
  s.b0 = 1.0;
  s.b1 = 0.0;
  s.b2 = -1.0;
  s.a1 = -(p1 + p2).real();
  s.a2 = (p1 * p2).real();
  return s;
}

void normalize_at(Biquad& s, double omega) {
  const double g = std::abs(s.response(omega));
  s.b0 /= g;
  s.b1 /= g;
  s.b2 /= g;
}

// RAII wrapper over a one-dimensional complex FFTW plan. Planning is not
// thread safe in FFTW, so plan creation is serialized.
class ComplexFft {
 public:
  ComplexFft(int n, int sign) : n_(n) {
    in_ = fftw_alloc_complex(static_cast<std::size_t>(n));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n));
    std::lock_guard lock(plan_mutex());
    plan_ = fftw_plan_dft_1d(n, in_, out_, sign, FFTW_ESTIMATE);
  }
  ComplexFft(const ComplexFft&) = delete;
  ComplexFft& operator=(const ComplexFft&) = delete;
  ~ComplexFft() {
    {
      std::lock_guard lock(plan_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  cplx* in() { return reinterpret_cast<cplx*>(in_); }
  const cplx* out() const { return reinterpret_cast<const cplx*>(out_); }
  void execute() { fftw_execute(plan_); }
  int size() const { return n_; }

 private:
  static std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
  }

  int n_;
  fftw_complex* in_{nullptr};
  fftw_complex* out_{nullptr};
  fftw_plan plan_{nullptr};
};

int fft_size(std::size_t min_len) {
  int n = 1;
  while (static_cast<std::size_t>(n) < min_len) n <<= 1;
  return n;
}

// Complex Morlet wavelet sampled at fs, support +-5 sigma_t, scaled so that a
// unit-amplitude sinusoid at freq_hz yields |c|^2 = 0.5.
std::vector<cplx> morlet_wavelet(double fs, double freq_hz, int cycles) {
  const double sigma_t = cycles / (2 * kPi * freq_hz);
  const auto half = static_cast<int>(std::ceil(5 * sigma_t * fs));
  std::vector<cplx> w(static_cast<std::size_t>(2 * half + 1));
  double envelope_sum = 0.0;
  for (int k = -half; k <= half; ++k) {
    const double t = k / fs;
    envelope_sum += std::exp(-t * t / (2 * sigma_t * sigma_t));
  }
  const double scale = std::numbers::sqrt2 / envelope_sum;
  for (int k = -half; k <= half; ++k) {
    const double t = k / fs;
    const double g = std::exp(-t * t / (2 * sigma_t * sigma_t));
    w[static_cast<std::size_t>(k + half)] = scale * g * std::polar(1.0, 2 * kPi * freq_hz * t);
  }
  return w;
}

// Accumulates |x * w_f|^2 for each frequency into `acc`, centered ("same")
// alignment, zero padding beyond the signal.
void accumulate_wavelet_power(std::span<const double> x, double fs, const std::vector<double>& freqs,
                              int cycles, std::vector<double>& acc) {
  std::vector<std::vector<cplx>> wavelets;
  std::size_t longest = 0;
  for (double f : freqs) {
    wavelets.push_back(morlet_wavelet(fs, f, cycles));
    longest = std::max(longest, wavelets.back().size());
  }
  const int n = fft_size(x.size() + longest);
  ComplexFft forward(n, FFTW_FORWARD);
  ComplexFft inverse(n, FFTW_BACKWARD);

  std::fill(forward.in(), forward.in() + n, cplx{});
  std::copy(x.begin(), x.end(), forward.in());
  forward.execute();
  const std::vector<cplx> spectrum(forward.out(), forward.out() + n);

  for (const auto& w : wavelets) {
    const std::size_t half = w.size() / 2;
    std::fill(forward.in(), forward.in() + n, cplx{});
    std::copy(w.begin(), w.end(), forward.in());
    forward.execute();
    for (int k = 0; k < n; ++k) inverse.in()[k] = spectrum[k] * forward.out()[k];
    inverse.execute();
    const double norm = 1.0 / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      acc[i] += std::norm(inverse.out()[i + half] * norm);
    }
  }
}

} // namespace

std::complex<double> Biquad::response(double omega) const {
  const cplx z1 = std::polar(1.0, -omega);
  const cplx z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

bool Biquad::stable() const {
  // Jury conditions for z^2 + a1 z + a2.
  return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
}

std::vector<double> BiquadCascade::apply(std::span<const double> x) const {
  std::vector<double> y(x.begin(), x.end());
  for (const auto& s : sections) {
    double z1 = 0.0;
    double z2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

std::complex<double> BiquadCascade::response(double freq_hz, double fs) const {
  const double omega = 2 * kPi * freq_hz / fs;
  cplx h{1.0, 0.0};
  for (const auto& s : sections) h *= s.response(omega);
  return h;
}

double BiquadCascade::magnitude(double freq_hz, double fs) const {
  return std::abs(response(freq_hz, fs));
}

bool BiquadCascade::stable() const {
  return std::all_of(sections.begin(), sections.end(), [](const Biquad& s) { return s.stable(); });
}

std::size_t BiquadCascade::settle_length() const {
  constexpr std::size_t kMax = 1 << 16;
  std::vector<double> impulse(kMax, 0.0);
  impulse[0] = 1.0;
  const std::vector<double> h = apply(impulse);
  double total = 0.0;
  for (double v : h) total += v * v;
  double tail = total;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (tail <= 1e-6 * total) return std::max<std::size_t>(i, 1);
    tail -= h[i] * h[i];
  }
  return kMax;
}

BiquadCascade design_butterworth_bandpass(double fs, double lo, double hi, int order) {
  if (!(fs > 0) || !(lo > 0) || !(lo < hi) || !(hi < fs / 2)) {
    throw DomainError("dsp", "band edges must satisfy 0 < lo < hi < fs/2");
  }
  if (order < 1) throw DomainError("dsp", "filter order must be >= 1");

  // Prewarped analog edges.
  const double w1 = 2 * fs * std::tan(kPi * lo / fs);
  const double w2 = 2 * fs * std::tan(kPi * hi / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  std::vector<cplx> upper;  // poles with positive imaginary part
  std::vector<cplx> real_poles;
  for (int k = 0; k < order; ++k) {
    const cplx p = std::polar(1.0, kPi * (2.0 * k + order + 1) / (2.0 * order));
    // s^2 - p*bw*s + w0^2 = 0
    const cplx b = p * bw;
    const cplx disc = std::sqrt(b * b - 4.0 * w0sq);
    for (const cplx s : {(b + disc) / 2.0, (b - disc) / 2.0}) {
      const cplx z = (2 * fs + s) / (2 * fs - s);
      if (std::abs(z.imag()) < 1e-12 * std::abs(z)) {
        real_poles.push_back({z.real(), 0.0});
      } else if (z.imag() > 0) {
        upper.push_back(z);
      }
    }
  }
  std::sort(upper.begin(), upper.end(), [](cplx a, cplx b) { return std::arg(a) < std::arg(b); });
  std::sort(real_poles.begin(), real_poles.end(), [](cplx a, cplx b) { return a.real() < b.real(); });

  const double omega0 = 2 * std::atan(std::sqrt(w0sq) / (2 * fs));
  BiquadCascade cascade;
  for (const cplx p : upper) {
    cascade.sections.push_back(bandpass_section(p, std::conj(p)));
  }
  for (std::size_t i = 0; i + 1 < real_poles.size(); i += 2) {
    cascade.sections.push_back(bandpass_section(real_poles[i], real_poles[i + 1]));
  }
  if (cascade.sections.size() != static_cast<std::size_t>(order)) {
    throw DomainError("dsp", "band-pass pole pairing failed");
  }
  for (auto& s : cascade.sections) normalize_at(s, omega0);
  if (!cascade.stable()) throw DomainError("dsp", "designed filter is unstable");

  char buf[128];
  std::snprintf(buf, sizeof(buf), "butterworth bandpass order %d, %g-%g Hz @ %g Hz", order, lo, hi, fs);
  cascade.description = buf;
  return cascade;
}

BiquadCascade design_notch(double fs, double f0, double q) {
  if (!(fs > 0) || !(f0 > 0) || !(f0 < fs / 2)) throw DomainError("dsp", "notch frequency must satisfy 0 < f0 < fs/2");
  if (!(q > 0)) throw DomainError("dsp", "notch quality factor must be positive");
  const double w0 = 2 * kPi * f0 / fs;
  const double alpha = std::sin(w0) / (2 * q);
  const double a0 = 1 + alpha;
  Biquad s;
  s.b0 = 1.0 / a0;
  s.b1 = -2 * std::cos(w0) / a0;
  s.b2 = 1.0 / a0;
  s.a1 = -2 * std::cos(w0) / a0;
  s.a2 = (1 - alpha) / a0;
  BiquadCascade cascade;
  cascade.sections.push_back(s);
  if (!cascade.stable()) throw DomainError("dsp", "designed notch is unstable");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "notch %g Hz q=%g @ %g Hz", f0, q, fs);
  cascade.description = buf;
  return cascade;
}

std::vector<double> filtfilt(const BiquadCascade& filter, std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 3 * std::max<std::size_t>(filter.state_length(), 1)) {
    throw DomainError("dsp", "input shorter than three filter state lengths");
  }
  require_finite(x);

  const std::size_t pad = std::min(3 * filter.settle_length(), n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2 * x[n - 1] - x[n - 1 - i]);

  std::vector<double> y = filter.apply(ext);
  std::reverse(y.begin(), y.end());
  y = filter.apply(y);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::vector<double> BandPowerSpec::frequencies() const {
  std::vector<double> f;
  const auto steps = static_cast<int>(std::floor((hi_hz - lo_hz) / freq_step_hz + 1e-9));
  for (int i = 0; i <= steps; ++i) f.push_back(lo_hz + i * freq_step_hz);
  return f;
}

void BandPowerSpec::validate(double fs) const {
  if (!(lo_hz > 0 && lo_hz < hi_hz && hi_hz < fs / 2)) throw DomainError("dsp", "band must satisfy 0 < lo < hi < fs/2");
  if (wavelet_cycles < 1) throw DomainError("dsp", "wavelet cycles must be >= 1");
  if (!(freq_step_hz > 0)) throw DomainError("dsp", "frequency step must be positive");
}

std::vector<double> morlet_power_trace(std::span<const double> x, double fs, const BandPowerSpec& spec) {
  spec.validate(fs);
  require_finite(x);
  const std::vector<double> freqs = spec.frequencies();
  std::vector<double> acc(x.size(), 0.0);
  accumulate_wavelet_power(x, fs, freqs, spec.wavelet_cycles, acc);
  for (double& v : acc) v /= static_cast<double>(freqs.size());
  return acc;
}

std::vector<double> morlet_power_trace_at(std::span<const double> x, double fs, double freq_hz, int cycles) {
  if (!(freq_hz > 0 && freq_hz < fs / 2) || cycles < 1) throw DomainError("dsp", "invalid wavelet parameters");
  require_finite(x);
  std::vector<double> acc(x.size(), 0.0);
  accumulate_wavelet_power(x, fs, {freq_hz}, cycles, acc);
  return acc;
}

double window_mean(std::span<const double> trace, double fs, TimeWindow window) {
  if (!(window.start >= 0 && window.start < window.end)) throw DomainError("dsp", "empty or negative window");
  const auto first = static_cast<std::size_t>(std::llround(window.start * fs));
  const auto last = static_cast<std::size_t>(std::llround(window.end * fs));
  if (last > trace.size()) throw DomainError("dsp", "window outside signal");
  double sum = 0.0;
  for (std::size_t i = first; i < last; ++i) sum += trace[i];
  return sum / static_cast<double>(last - first);
}

double morlet_band_power(std::span<const double> x, double fs, const BandPowerSpec& spec, TimeWindow window) {
  spec.validate(fs);
  if (!(window.start >= 0 && window.end * fs <= static_cast<double>(x.size()) + 1e-9 && window.start < window.end)) {
    throw DomainError("dsp", "window outside signal");
  }
  if (window.end - window.start < spec.wavelet_cycles / spec.lo_hz) {
    throw DomainError("dsp", "window shorter than the wavelet support");
  }
  return window_mean(morlet_power_trace(x, fs, spec), fs, window);
}

PreprocessFilters PreprocessFilters::defaults(double fs) {
  return {design_notch(fs, 50.0, 35.0), design_butterworth_bandpass(fs, 1.0, 100.0, 5)};
}

EegTrial preprocess_trial(const EegTrial& trial) {
  return preprocess_trial(trial, PreprocessFilters::defaults(trial.fs));
}

EegTrial preprocess_trial(const EegTrial& trial, const PreprocessFilters& filters) {
  EegTrial out = trial;
  for (auto& row : out.samples) {
    row = filtfilt(filters.bandpass, filtfilt(filters.notch, row));
  }
  return out;
}

std::string filters_csv(const PreprocessFilters& filters) {
  std::string out = "filter,section,b0,b1,b2,a1,a2\n";
  char buf[256];
  auto dump = [&](const char* name, const BiquadCascade& c) {
    for (std::size_t i = 0; i < c.sections.size(); ++i) {
      const auto& s = c.sections[i];
      std::snprintf(buf, sizeof(buf), "%s,%zu,%.12g,%.12g,%.12g,%.12g,%.12g\n", name, i, s.b0, s.b1, s.b2,
                    s.a1, s.a2);
      out += buf;
    }
  };
  dump("notch", filters.notch);
  dump("bandpass", filters.bandpass);
  return out;
}

} // namespace neurotopo
