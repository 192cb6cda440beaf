#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

namespace neurotopo {

struct EegTrial;

// One second-order section, a0 normalized to 1:
//   H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
struct Biquad {
  double b0{1.0}, b1{0.0}, b2{0.0};
  double a1{0.0}, a2{0.0};

  std::complex<double> response(double omega) const;
  bool stable() const;
};

struct BiquadCascade {
  std::vector<Biquad> sections;
  std::string description;

  // Direct form II transposed, zero initial state.
  std::vector<double> apply(std::span<const double> x) const;
  std::complex<double> response(double freq_hz, double fs) const;
  double magnitude(double freq_hz, double fs) const;
  bool stable() const;
  std::size_t state_length() const { return 2 * sections.size(); }
  // Samples until the impulse response tail holds less than 1e-6 of its energy.
  std::size_t settle_length() const;
};

BiquadCascade design_butterworth_bandpass(double fs, double lo, double hi, int order);
BiquadCascade design_notch(double fs, double f0 = 50.0, double q = 35.0);

// Zero-phase forward/backward application with odd reflection padding.
std::vector<double> filtfilt(const BiquadCascade& filter, std::span<const double> x);

struct BandPowerSpec {
  double lo_hz{9.0};
  double hi_hz{11.0};
  int wavelet_cycles{7};
  double freq_step_hz{0.5};

  std::vector<double> frequencies() const;
  void validate(double fs) const;
};

struct TimeWindow {
  double start{0.0};  // seconds
  double end{0.0};
};

// Per-sample wavelet power |c(t)|^2 averaged over the band's frequencies.
// A unit-amplitude sinusoid at a wavelet's center frequency gives 0.5.
std::vector<double> morlet_power_trace(std::span<const double> x, double fs, const BandPowerSpec& spec);

// Per-sample power of a single wavelet centered at freq_hz.
std::vector<double> morlet_power_trace_at(std::span<const double> x, double fs, double freq_hz, int cycles);

// Mean of a power trace over the samples in [start, end).
double window_mean(std::span<const double> trace, double fs, TimeWindow window);

double morlet_band_power(std::span<const double> x, double fs, const BandPowerSpec& spec, TimeWindow window);

struct PreprocessFilters {
  BiquadCascade notch;
  BiquadCascade bandpass;

  static PreprocessFilters defaults(double fs);
};

// Notch then band-pass, both zero-phase, on every channel.
EegTrial preprocess_trial(const EegTrial& trial);
EegTrial preprocess_trial(const EegTrial& trial, const PreprocessFilters& filters);

// filter,section,b0,b1,b2,a1,a2 with 12 significant digits.
std::string filters_csv(const PreprocessFilters& filters);

} // namespace neurotopo
