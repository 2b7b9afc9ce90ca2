#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace cpwkit {

// Single-pole notch transmission model
//   S21(f) = a e^{i alpha} e^{2 pi i f tau} [1 - e^{i phi} (Q_l/Q_e) /
//            (1 + 2 i Q_l (f/f_r - 1))]
// with an amplitude scale, a phase offset, an electrical delay, and an
// impedance-mismatch rotation describing the cabling around the resonator.
struct ResonanceModel {
  double a = 1.0;      // baseline amplitude
  double alpha = 0.0;  // baseline phase [rad]
  double tau = 0.0;    // electrical delay [s]
  double phi = 0.0;    // impedance-mismatch rotation [rad]
  double q_l = 0.0;    // loaded quality factor
  double q_e = 0.0;    // external quality factor
  double f_r = 0.0;    // resonance frequency [Hz]

  // Diameter-corrected internal loss: 1/Q_i = 1/Q_l - cos(phi)/Q_e.
  double q_internal() const;
  // Plain convention without the rotation: 1/Q_i = 1/Q_l - 1/Q_e.
  double q_internal_simple() const;

  void validate() const;  // throws ConfigError on nonpositive a, Q, f_r
};

std::complex<double> evaluate_s21(const ResonanceModel& model, double f);

// Equivalent description near resonance: S21 = A + B / (f - f_p).
struct PoleModel {
  std::complex<double> a_kl;  // baseline at resonance
  std::complex<double> b_kl;  // residue [Hz]
  std::complex<double> f_p;   // complex pole [Hz]

  double quality_factor() const;  // |Re f_p / (2 Im f_p)|
};

PoleModel pole_from_model(const ResonanceModel& model);

struct Trace {
  std::vector<double> f_hz;
  std::vector<std::complex<double>> s21;

  std::size_t size() const { return f_hz.size(); }
};

// CSV rows "f_hz,re,im". Lines starting with '#' or '!' and one leading
// non-numeric header line are skipped. Throws ConfigError naming the
// offending line on malformed input.
Trace parse_trace_reim(std::istream& in);
// CSV rows "f_hz,magnitude,phase_deg" in the same framing.
Trace parse_trace_magphase(std::istream& in);

// Adds independent complex Gaussian noise of standard deviation sigma per
// quadrature, generated by a Box-Muller transform over std::mt19937 so the
// stream is identical on every platform.
Trace add_complex_noise(Trace trace, double sigma, std::uint32_t seed);

struct FitResult {
  ResonanceModel model;
  // Covariance over (a, alpha, tau, phi, q_l, q_e, f_r).
  Eigen::Matrix<double, 7, 7> covariance;
  Eigen::Matrix<double, 7, 1> sigma;  // square roots of the diagonal
  double ssr = 0.0;                   // sum of squared residuals
  int iterations = 0;
};

// Damped Gauss-Newton least squares on stacked real and imaginary
// residuals. Auto-initializes from the trace unless an initial model is
// supplied: delay from the off-resonant phase slope, f_r at the deepest
// point, Q_l from the half-depth width, Q_e from the dip depth.
// Throws InsufficientSpan (fewer than 7 points or under 3 linewidths),
// NoDip, or Divergence.
FitResult fit(const Trace& trace,
              const std::optional<ResonanceModel>& init = std::nullopt);

}  // namespace cpwkit
