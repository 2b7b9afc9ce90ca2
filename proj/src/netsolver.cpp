#include "cpwkit/netsolver.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <sstream>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {

namespace {

using Complex = std::complex<double>;

// Unknown (column) layout of the boundary matrix. I{k}(1) is the current a
// coupler-side element pushes into node k, I{k}(2) the current from the
// other element at that node (section, port or termination); all currents
// are measured into the node, so conservation rows read I(1) + I(2) = 0.
enum Col : int {
  kI1_1 = 0,
  kI2_1,
  kI3_1,
  kI4_1,
  kI5_1,
  kI1_2,
  kI2_2,
  kI3_2,
  kI4_2,
  kI5_2,
  kI6,
  kV1,
  kV2,
  kV3,
  kV4,
  kV5,
  kV6,
  kA1,
  kA2,
  kA3,
  kA4,
  kA5,
  kA6,
  kA7,
  kA8,
  kA9,
  kA10,
};

// Rows with injection entries for the scattering right-hand side.
constexpr int kRowPort1Voltage = 16;
constexpr int kRowPort1Current = 17;
constexpr int kRowPort2Voltage = 18;
constexpr int kRowPort2Current = 19;

// Power of gamma in the coupler voltage-row weights gamma^s K with
// K = [[Z1, kappa m], [kappa m, Z2]], m = sqrt(Z1 Z2): the matrix relating
// node voltages to sums of wave current amplitudes.
constexpr int kCouplerGammaPower = 1;

double gamma_weight(const CouplerModel& c) {
  return std::pow(c.gamma, kCouplerGammaPower);
}

std::vector<std::string> unknown_labels() {
  return {"I1(1)", "I2(1)", "I3(1)", "I4(1)", "I5(1)", "I1(2)", "I2(2)",
          "I3(2)", "I4(2)", "I5(2)", "I6",    "V1",    "V2",    "V3",
          "V4",    "V5",    "V6",    "A1",    "A2",    "A3",    "A4",
          "A5",    "A6",    "A7",    "A8",    "A9",    "A10"};
}

struct Probe {
  ScaledComplex det;
  bool singular = false;
};

Probe probe_determinant(const NetworkSpec& spec, Complex f) {
  try {
    return {network_determinant(spec, f), false};
  } catch (const ExactSingular&) {
    return {{}, true};
  }
}

// Shifts a scaled value to the common exponent reference, flushing to zero
// when it is negligibly small against the reference.
Complex shifted_mantissa(const ScaledComplex& s, long reference_exponent) {
  const long d = s.exponent - reference_exponent;
  if (d < -2100) return {0.0, 0.0};
  const int di = static_cast<int>(std::min<long>(d, 2100));
  return {std::ldexp(s.mantissa.real(), di), std::ldexp(s.mantissa.imag(), di)};
}

}  // namespace

double NetworkSpec::total_length() const {
  return coupler.coupler_length + length_short + length_open;
}

double NetworkSpec::free_spectral_range() const {
  return coupler.line_speed / (2.0 * total_length());
}

double NetworkSpec::seed_frequency(int mode_number) const {
  const double quarter = coupler.line_speed / (4.0 * total_length());
  switch (termination) {
    case TerminationCase::kShortShort:
    case TerminationCase::kOpenOpen:
      return 2.0 * mode_number * quarter;
    case TerminationCase::kShortOpen:
    case TerminationCase::kExplicit:
      return (2.0 * mode_number - 1.0) * quarter;
  }
  return 0.0;
}

void NetworkSpec::validate() const {
  std::ostringstream os;
  if (!(coupler.line_speed > 0.0)) {
    throw ConfigError("network: line speed must be positive");
  }
  if (coupler.coupler_length < 0.0 || length_short < 0.0 ||
      length_open < 0.0) {
    throw ConfigError("network: section lengths must be >= 0");
  }
  if (!(total_length() > 0.0)) {
    throw ConfigError("network: total resonator length must be positive");
  }
  if (!(coupler.z_feed > 0.0) || !(coupler.z_res > 0.0) ||
      !(z_resonator > 0.0)) {
    throw ConfigError("network: line impedances must be positive");
  }
  if (!(std::abs(coupler.kappa) < 1.0) || !(coupler.gamma > 0.0)) {
    throw ConfigError("network: coupling coefficient must satisfy |kappa| < 1");
  }
  if (!(z_in.real() > 0.0) || !(z_out.real() > 0.0)) {
    throw ConfigError("network: port impedances must have positive real part");
  }
  if (termination == TerminationCase::kExplicit) {
    if (!std::isfinite(z_t1.real()) || !std::isfinite(z_t1.imag()) ||
        !std::isfinite(z_t2.real()) || !std::isfinite(z_t2.imag())) {
      throw ConfigError(
          "network: explicit terminations must be finite "
          "(use the preset cases for open circuits)");
    }
  }
}

std::complex<double> ScaledComplex::value() const {
  const long e = std::clamp(exponent, -2100L, 2100L);
  const int ei = static_cast<int>(e);
  return {std::ldexp(mantissa.real(), ei), std::ldexp(mantissa.imag(), ei)};
}

double ScaledComplex::log10_abs() const {
  if (is_zero()) return -std::numeric_limits<double>::infinity();
  return std::log10(std::abs(mantissa)) +
         static_cast<double>(exponent) * 0.30102999566398119521;
}

void ScaledComplex::multiply(std::complex<double> factor) {
  mantissa *= factor;
  const double mag = std::abs(mantissa);
  if (mag == 0.0) {
    mantissa = {0.0, 0.0};
    exponent = 0;
    return;
  }
  int e = 0;
  std::frexp(mag, &e);
  mantissa = {std::ldexp(mantissa.real(), -e), std::ldexp(mantissa.imag(), -e)};
  exponent += e;
}

BoundaryMatrix assemble(const NetworkSpec& spec, std::complex<double> f) {
  spec.validate();
  if (f == Complex(0.0, 0.0)) {
    throw ConfigError("assemble: frequency must be nonzero");
  }

  const Complex i_unit(0.0, 1.0);
  const double c_l = spec.coupler.line_speed;
  const Complex wave = 2.0 * kPi * f / c_l;  // propagation angle per length
  const Complex phi_c = std::exp(i_unit * wave * spec.coupler.coupler_length);
  const Complex phi_cb = std::exp(-i_unit * wave * spec.coupler.coupler_length);
  const Complex phi_s = std::exp(i_unit * wave * spec.length_short);
  const Complex phi_sb = std::exp(-i_unit * wave * spec.length_short);
  const Complex phi_o = std::exp(i_unit * wave * spec.length_open);
  const Complex phi_ob = std::exp(-i_unit * wave * spec.length_open);

  const double g = gamma_weight(spec.coupler);
  const double m = std::sqrt(spec.coupler.z_feed * spec.coupler.z_res);
  const double w_ff = g * spec.coupler.z_feed;   // feed conductor diagonal
  const double w_rr = g * spec.coupler.z_res;    // resonator conductor
  const double w_fr = g * spec.coupler.kappa * m;
  const double zr = spec.z_resonator;

  BoundaryMatrix bm;
  bm.m = Eigen::MatrixXcd::Zero(kUnknownCount, kUnknownCount);
  bm.labels = unknown_labels();
  bm.phi_c = phi_c;
  bm.phi_s = phi_s;
  bm.phi_o = phi_o;
  auto& mm = bm.m;

  // Coupler voltage rows: node voltage minus weighted wave amplitude sums.
  // Nodes 1/3 are the near/far ends of the feed conductor, nodes 2/4 of the
  // resonator conductor; A1/A2 travel toward nodes 3/4, A3/A4 back.
  mm(0, kV1) = 1.0;
  mm(0, kA1) = -w_ff;
  mm(0, kA3) = -w_ff;
  mm(0, kA2) = -w_fr;
  mm(0, kA4) = -w_fr;

  mm(1, kV2) = 1.0;
  mm(1, kA1) = -w_fr;
  mm(1, kA3) = -w_fr;
  mm(1, kA2) = -w_rr;
  mm(1, kA4) = -w_rr;

  mm(2, kV3) = 1.0;
  mm(2, kA1) = -w_ff * phi_c;
  mm(2, kA3) = -w_ff * phi_cb;
  mm(2, kA2) = -w_fr * phi_c;
  mm(2, kA4) = -w_fr * phi_cb;

  mm(3, kV4) = 1.0;
  mm(3, kA1) = -w_fr * phi_c;
  mm(3, kA3) = -w_fr * phi_cb;
  mm(3, kA2) = -w_rr * phi_c;
  mm(3, kA4) = -w_rr * phi_cb;

  // Coupler current rows, all currents into the node: at the near end the
  // line carries A_f - A_b away from the node, at the far end toward it.
  mm(4, kI1_1) = 1.0;
  mm(4, kA1) = 1.0;
  mm(4, kA3) = -1.0;

  mm(5, kI2_1) = 1.0;
  mm(5, kA2) = 1.0;
  mm(5, kA4) = -1.0;

  mm(6, kI3_1) = 1.0;
  mm(6, kA1) = -phi_c;
  mm(6, kA3) = phi_cb;

  mm(7, kI4_1) = 1.0;
  mm(7, kA2) = -phi_c;
  mm(7, kA4) = phi_cb;

  // Shorted-end section between node 2 and node 5.
  mm(8, kV2) = 1.0;
  mm(8, kA5) = -zr;
  mm(8, kA6) = -zr;

  mm(9, kV5) = 1.0;
  mm(9, kA5) = -zr * phi_s;
  mm(9, kA6) = -zr * phi_sb;

  mm(10, kI2_2) = 1.0;
  mm(10, kA5) = 1.0;
  mm(10, kA6) = -1.0;

  mm(11, kI5_1) = 1.0;
  mm(11, kA5) = -phi_s;
  mm(11, kA6) = phi_sb;

  // Open-end section between node 4 and node 6.
  mm(12, kV4) = 1.0;
  mm(12, kA7) = -zr;
  mm(12, kA8) = -zr;

  mm(13, kV6) = 1.0;
  mm(13, kA7) = -zr * phi_o;
  mm(13, kA8) = -zr * phi_ob;

  mm(14, kI4_2) = 1.0;
  mm(14, kA7) = 1.0;
  mm(14, kA8) = -1.0;

  mm(15, kI6) = 1.0;
  mm(15, kA7) = -phi_o;
  mm(15, kA8) = phi_ob;

  // Ports: outgoing wave A9 at node 1 (impedance z_in), A10 at node 3
  // (z_out). An incoming wave enters these four rows as the inhomogeneity.
  mm(kRowPort1Voltage, kV1) = 1.0;
  mm(kRowPort1Voltage, kA9) = -spec.z_in;

  mm(kRowPort1Current, kI1_2) = 1.0;
  mm(kRowPort1Current, kA9) = 1.0;

  mm(kRowPort2Voltage, kV3) = 1.0;
  mm(kRowPort2Voltage, kA10) = -spec.z_out;

  mm(kRowPort2Current, kI3_2) = 1.0;
  mm(kRowPort2Current, kA10) = 1.0;

  // Current conservation at nodes 1..5.
  for (int node = 0; node < 5; ++node) {
    mm(20 + node, kI1_1 + node) = 1.0;
    mm(20 + node, kI1_2 + node) = 1.0;
  }

  // Node-5 termination: the current I5(2) flows from the termination into
  // the node, so a finite impedance gives V5 = -z_t1 I5(2).
  switch (spec.termination) {
    case TerminationCase::kShortOpen:
    case TerminationCase::kShortShort:
      mm(25, kV5) = 1.0;
      break;
    case TerminationCase::kOpenOpen:
      mm(25, kI5_2) = 1.0;
      break;
    case TerminationCase::kExplicit:
      mm(25, kV5) = 1.0;
      mm(25, kI5_2) = spec.z_t1;
      break;
  }

  // Node-6 termination: I6 is the section current into the node and equals
  // the current into the termination, so V6 = z_t2 I6.
  switch (spec.termination) {
    case TerminationCase::kShortOpen:
    case TerminationCase::kOpenOpen:
      mm(26, kI6) = 1.0;
      break;
    case TerminationCase::kShortShort:
      mm(26, kV6) = 1.0;
      break;
    case TerminationCase::kExplicit:
      mm(26, kV6) = 1.0;
      mm(26, kI6) = -spec.z_t2;
      break;
  }

  bm.row_scale.resize(kUnknownCount);
  for (int r = 0; r < kUnknownCount; ++r) {
    const double scale = mm.row(r).cwiseAbs().maxCoeff();
    bm.row_scale(r) = scale;
    mm.row(r) /= scale;
  }
  return bm;
}

ScaledComplex determinant(const Eigen::MatrixXcd& m) {
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(m);
  ScaledComplex det;
  det.mantissa = Complex(
      static_cast<double>(lu.permutationP().determinant()), 0.0);
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    const Complex pivot = lu.matrixLU()(k, k);
    if (pivot == Complex(0.0, 0.0)) {
      throw ExactSingular("determinant: exactly zero pivot");
    }
    det.multiply(pivot);
  }
  return det;
}

ScaledComplex determinant(const BoundaryMatrix& bm) {
  ScaledComplex det = determinant(bm.m);
  for (Eigen::Index r = 0; r < bm.row_scale.size(); ++r) {
    det.multiply(Complex(bm.row_scale(r), 0.0));
  }
  return det;
}

ScaledComplex network_determinant(const NetworkSpec& spec,
                                  std::complex<double> f) {
  return determinant(assemble(spec, f));
}

namespace {

std::optional<PoleResult> newton_search(const NetworkSpec& spec, double start,
                                        double max_step) {
  Complex f(start, 0.0);
  for (int iter = 0; iter < 100; ++iter) {
    const double scale = std::abs(f);
    if (!(scale > 0.0) || !std::isfinite(scale)) return std::nullopt;
    const double h = 1e-7 * scale;

    const Probe at = probe_determinant(spec, f);
    if (at.singular) {
      PoleResult out;
      out.f_p = f;
      out.converged = true;
      out.residual = 0.0;
      return out;
    }
    const Probe fwd = probe_determinant(spec, f + h);
    const Probe bwd = probe_determinant(spec, f - h);
    if (fwd.singular || bwd.singular) {
      // A stencil point is a pole; restart right on it.
      f = fwd.singular ? f + h : f - h;
      continue;
    }

    const long ref = std::max(fwd.det.exponent, bwd.det.exponent);
    const Complex diff =
        shifted_mantissa(fwd.det, ref) - shifted_mantissa(bwd.det, ref);
    if (diff == Complex(0.0, 0.0)) return std::nullopt;
    const Complex num = shifted_mantissa(at.det, ref);
    Complex step = -num / diff * (2.0 * h);
    if (!std::isfinite(step.real()) || !std::isfinite(step.imag())) {
      return std::nullopt;
    }
    if (std::abs(step) > max_step) {
      step *= max_step / std::abs(step);
    }
    f += step;
    if (std::abs(step) < 1e-12 * std::abs(f)) {
      PoleResult out;
      out.f_p = f;
      out.converged = true;
      const Probe final_at = probe_determinant(spec, f);
      if (final_at.singular) {
        out.residual = 0.0;
      } else {
        const double la0 = final_at.det.log10_abs();
        const double lan =
            std::max(probe_determinant(spec, f + h).det.log10_abs(),
                     probe_determinant(spec, f - h).det.log10_abs());
        out.residual = std::pow(10.0, la0 - lan);
      }
      return out;
    }
  }
  return std::nullopt;
}

}  // namespace

PoleResult find_pole(const NetworkSpec& spec, int mode_number,
                     double seed_hint) {
  spec.validate();
  if (mode_number < 1) {
    throw ConfigError("find_pole: mode number must be >= 1");
  }
  const double seed =
      seed_hint > 0.0 ? seed_hint : spec.seed_frequency(mode_number);
  const double fsr = spec.free_spectral_range();
  const double basin = 0.5 * fsr * (1.0 + 1e-9);

  auto finish = [&](PoleResult r) {
    r.mode_number = mode_number;
    r.f_r = r.f_p.real();
    const double im = r.f_p.imag();
    r.q_l = im == 0.0 ? std::numeric_limits<double>::infinity()
                      : std::abs(r.f_r / (2.0 * im));
    return r;
  };

  std::optional<PoleResult> result = newton_search(spec, seed, 0.5 * fsr);
  if (result && std::abs(result->f_p - seed) <= basin) {
    return finish(*result);
  }

  // Coarse scan across one free spectral range around the seed, then retry
  // from the deepest |det| point.
  double best_f = seed;
  double best_la = std::numeric_limits<double>::infinity();
  const int points = 2001;
  for (int k = 0; k < points; ++k) {
    const double fk = seed - 0.5 * fsr + fsr * k / (points - 1.0);
    if (!(fk > 0.0)) continue;
    const Probe pr = probe_determinant(spec, Complex(fk, 0.0));
    const double la = pr.singular
                          ? -std::numeric_limits<double>::infinity()
                          : pr.det.log10_abs();
    if (la < best_la) {
      best_la = la;
      best_f = fk;
    }
  }
  std::optional<PoleResult> rescue = newton_search(spec, best_f, 0.5 * fsr);
  if (rescue && std::abs(rescue->f_p - seed) <= basin) {
    return finish(*rescue);
  }

  const std::optional<PoleResult>& converged = rescue ? rescue : result;
  if (converged) {
    std::ostringstream os;
    os << "find_pole: converged to " << converged->f_p.real() << " Hz, more "
       << "than half a free spectral range from the mode-" << mode_number
       << " seed " << seed << " Hz";
    throw WrongBasin(os.str());
  }
  std::ostringstream os;
  os << "find_pole: no convergence after 100 iterations from seed " << seed
     << " Hz (mode " << mode_number << ")";
  throw NonConvergence(os.str());
}

std::complex<double> feedline_pole_condition(const NetworkSpec& spec,
                                             std::complex<double> theta) {
  const Complex i_unit(0.0, 1.0);
  const double zf = spec.coupler.z_feed;
  return zf * (spec.z_in + spec.z_out) * std::cos(theta) -
         i_unit * (zf * zf + spec.z_in * spec.z_out) * std::sin(theta);
}

ScatteringResult scattering(const NetworkSpec& spec, double f, int in_port) {
  if (!(f > 0.0)) {
    throw ConfigError("scattering: frequency must be positive");
  }
  if (in_port != 1 && in_port != 2) {
    throw ConfigError("scattering: in_port must be 1 or 2");
  }
  const BoundaryMatrix bm = assemble(spec, Complex(f, 0.0));

  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(kUnknownCount);
  if (in_port == 1) {
    rhs(kRowPort1Voltage) = spec.z_in / bm.row_scale(kRowPort1Voltage);
    rhs(kRowPort1Current) = 1.0 / bm.row_scale(kRowPort1Current);
  } else {
    rhs(kRowPort2Voltage) = spec.z_out / bm.row_scale(kRowPort2Voltage);
    rhs(kRowPort2Current) = 1.0 / bm.row_scale(kRowPort2Current);
  }

  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(bm.m);
  for (int k = 0; k < kUnknownCount; ++k) {
    if (lu.matrixLU()(k, k) == Complex(0.0, 0.0)) {
      throw OnPole("scattering: boundary matrix is singular at this frequency");
    }
  }
  const Eigen::VectorXcd a = lu.solve(rhs);

  ScatteringResult out;
  if (in_port == 1) {
    out.reflection = a(kA9);
    out.transmission =
        a(kA10) * std::sqrt(spec.z_out.real() / spec.z_in.real());
  } else {
    out.reflection = a(kA10);
    out.transmission =
        a(kA9) * std::sqrt(spec.z_in.real() / spec.z_out.real());
  }
  // The internal phasor convention places decaying poles in the lower
  // half of the complex frequency plane; reported S-parameters follow the
  // engineering convention (delay lines rotate as exp(-i beta l), notch
  // resonances circle like 1/(1 + 2iQ(f/f_r - 1))), which is the complex
  // conjugate on the real-frequency axis.
  out.reflection = std::conj(out.reflection);
  out.transmission = std::conj(out.transmission);
  return out;
}

}  // namespace cpwkit
