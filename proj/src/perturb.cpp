#include "cpwkit/perturb.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {

namespace {

using Complex = std::complex<double>;

constexpr Complex kI(0.0, 1.0);

ScaledComplex safe_determinant(const NetworkSpec& spec, Complex f) {
  try {
    return network_determinant(spec, f);
  } catch (const ExactSingular&) {
    return ScaledComplex{};  // an exactly singular matrix has determinant zero
  }
}

// Converts a batch of scaled determinants to plain complex values sharing one
// power-of-two normalization, so differences and ratios between them are
// exact while the common factor drops out.
std::vector<Complex> align_batch(const std::vector<ScaledComplex>& batch) {
  long ref = std::numeric_limits<long>::min();
  for (const ScaledComplex& s : batch)
    if (!s.is_zero() && s.exponent > ref) ref = s.exponent;
  std::vector<Complex> out;
  out.reserve(batch.size());
  for (const ScaledComplex& s : batch) {
    if (s.is_zero() || s.exponent - ref < -2000) {
      out.emplace_back(0.0, 0.0);
      continue;
    }
    const int d = static_cast<int>(s.exponent - ref);
    out.emplace_back(std::ldexp(s.mantissa.real(), d),
                     std::ldexp(s.mantissa.imag(), d));
  }
  return out;
}

DeterminantDerivatives finite_difference(const NetworkSpec& spec,
                                         int mode_number) {
  DeterminantDerivatives out;
  out.phase = phase_variables(spec, mode_number);

  NetworkSpec base = spec;
  base.coupler = spec.coupler.with_kappa(0.0);
  base.coupler.z_res = spec.z_resonator;

  // Expand about the exact decoupled pole rather than the quarter-wave seed;
  // for explicit terminations the two can differ.
  const PoleResult decoupled = find_pole(base, mode_number);
  const Complex f0 = decoupled.f_p;

  const double hf = 1e-6 * std::abs(f0);
  const double hk = 1e-3;
  const double hz = 1e-3 * spec.z_resonator;

  auto with_kappa = [&base](double kappa) {
    NetworkSpec s = base;
    s.coupler = base.coupler.with_kappa(kappa);
    return s;
  };
  auto with_z2 = [&base](double z2) {
    NetworkSpec s = base;
    s.coupler.z_res = z2;
    return s;
  };

  std::vector<ScaledComplex> batch;
  for (double step : {hf, -hf, 2.0 * hf, -2.0 * hf})
    batch.push_back(safe_determinant(base, f0 + step));
  for (double step : {hz, -hz, 2.0 * hz, -2.0 * hz})
    batch.push_back(
        safe_determinant(with_z2(spec.z_resonator + step), f0));
  batch.push_back(safe_determinant(base, f0));
  for (double step : {hk, -hk, 2.0 * hk, -2.0 * hk})
    batch.push_back(safe_determinant(with_kappa(step), f0));
  const std::vector<Complex> v = align_batch(batch);

  // Central differences with one Richardson refinement step each.
  const Complex df_h = (v[0] - v[1]) / (2.0 * hf);
  const Complex df_2h = (v[2] - v[3]) / (4.0 * hf);
  out.d_f = (4.0 * df_h - df_2h) / 3.0;

  const Complex dz_h = (v[4] - v[5]) / (2.0 * hz);
  const Complex dz_2h = (v[6] - v[7]) / (4.0 * hz);
  out.d_z2 = (4.0 * dz_h - dz_2h) / 3.0;

  const Complex center = v[8];
  const Complex dk_h = (v[9] - 2.0 * center + v[10]) / (hk * hk);
  const Complex dk_2h = (v[11] - 2.0 * center + v[12]) / (4.0 * hk * hk);
  out.d2_kappa = (4.0 * dk_h - dk_2h) / 3.0;

  if (!std::isfinite(std::abs(out.d_f)) || std::abs(out.d_f) == 0.0)
    throw DerivativeDegenerate(
        "determinant frequency derivative vanished at the expansion point");
  return out;
}

DeterminantDerivatives closed_form(const NetworkSpec& spec, int mode_number) {
  DeterminantDerivatives out;
  out.phase = phase_variables(spec, mode_number);
  if (spec.termination == TerminationCase::kExplicit)
    throw CaseUnsupported(
        "closed-form determinant derivatives cover the short/open "
        "termination presets only");

  const double st = std::sin(out.phase.theta);
  const double ct = std::cos(out.phase.theta);
  const double sp = std::sin(out.phase.psi);
  const double cp = std::cos(out.phase.psi);
  const Complex zi = spec.z_in;
  const Complex zo = spec.z_out;
  const double zf = spec.coupler.z_feed;
  const double zr = spec.z_resonator;
  const double cl = spec.coupler.line_speed;
  const double lt = spec.total_length();
  const double parity = (mode_number % 2 == 0) ? 1.0 : -1.0;

  const Complex big_f = zf * (zi + zo) * ct - kI * (zf * zf + zi * zo) * st;
  const double f_scale =
      std::abs(zf * (zi + zo)) + std::abs(zf * zf + zi * zo);
  if (std::abs(big_f) < 1e-12 * f_scale)
    throw DerivativeDegenerate(
        "resonance coincides with a feedline pole of the loaded line");

  const Complex g_a = zf * (zo - zi) * sp * st -
                      zf * (zi + zo) * (2.0 * cp * ct + 1.0) +
                      kI * (3.0 * zf * zf + zi * zo) * st * cp;
  const Complex g_b = zf * (zo - zi) * sp * st -
                      zf * (zo + zi) * (2.0 * cp * ct - 1.0) +
                      kI * (3.0 * zf * zf + zi * zo) * st * cp;
  const Complex g_c = -g_a;

  switch (spec.termination) {
    case TerminationCase::kShortOpen:
      out.d_f = (32.0 * kPi / cl) * parity * zr * zr * zr * lt * (-big_f);
      out.d_z2 = 16.0 * parity * zr * zr * st * cp * big_f;
      out.d2_kappa = 16.0 * parity * zr * zr * zr * st * g_a;
      break;
    case TerminationCase::kShortShort:
      out.d_f =
          -(32.0 * kPi / cl) * kI * parity * zr * zr * zr * zr * lt * big_f;
      out.d_z2 = -16.0 * kI * parity * zr * zr * zr * st * cp * big_f;
      out.d2_kappa = -16.0 * kI * parity * zr * zr * zr * zr * st * g_b;
      break;
    case TerminationCase::kOpenOpen:
      out.d_f = -(32.0 * kPi / cl) * kI * parity * zr * zr * lt * big_f;
      out.d_z2 = 16.0 * kI * parity * zr * st * cp * big_f;
      out.d2_kappa = -16.0 * kI * parity * zr * zr * st * g_c;
      break;
    case TerminationCase::kExplicit:
      break;  // unreachable, rejected above
  }
  return out;
}

PerturbationResult package(const PhaseVariables& pv, Complex shift) {
  PerturbationResult out;
  out.frequency_shift = shift;
  out.f_r = pv.fr0 + shift.real();
  out.phase = pv;
  out.inv_q = 2.0 * std::abs(shift.imag()) / out.f_r;
  out.q_external = out.inv_q > 0.0
                       ? 1.0 / out.inv_q
                       : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace

PhaseVariables phase_variables(const NetworkSpec& spec, int mode_number) {
  spec.validate();
  if (mode_number < 1)
    throw ConfigError("mode_number must be a positive integer");
  PhaseVariables pv;
  pv.mode_number = mode_number;
  pv.fr0 = spec.seed_frequency(mode_number);
  const double k = 2.0 * kPi * pv.fr0 / spec.coupler.line_speed;
  pv.theta = k * spec.coupler.coupler_length;
  pv.psi = k * (spec.coupler.coupler_length + 2.0 * spec.length_open);
  return pv;
}

DeterminantDerivatives determinant_derivatives(const NetworkSpec& spec,
                                               int mode_number,
                                               DerivativeRoute route) {
  if (route == DerivativeRoute::kClosedForm)
    return closed_form(spec, mode_number);
  return finite_difference(spec, mode_number);
}

PerturbationResult shift_general(const NetworkSpec& spec, int mode_number,
                                 DerivativeRoute route) {
  const DeterminantDerivatives d =
      determinant_derivatives(spec, mode_number, route);
  const double kappa = spec.coupler.kappa;
  const Complex shift = -(0.5 * kappa * kappa * d.ratio_kappa() +
                          (spec.coupler.z_res - spec.z_resonator) *
                              d.ratio_z());
  return package(d.phase, shift);
}

PerturbationResult shift_and_q_matched(const NetworkSpec& spec,
                                       int mode_number) {
  const PhaseVariables pv = phase_variables(spec, mode_number);
  if (spec.termination == TerminationCase::kExplicit)
    throw CaseUnsupported(
        "matched-port expressions cover the short/open termination presets "
        "only");
  const double zf = spec.coupler.z_feed;
  if (std::abs(spec.z_in - Complex(zf, 0.0)) > 1e-9 * zf ||
      std::abs(spec.z_out - Complex(zf, 0.0)) > 1e-9 * zf)
    throw NotMatched(
        "matched-port expressions require both ports at the feedline "
        "impedance");

  const double st = std::sin(pv.theta);
  const double ct = std::cos(pv.theta);
  const double cp = std::cos(pv.psi);
  const double kappa = spec.coupler.kappa;
  const double zr = spec.z_resonator;
  const double dz = spec.coupler.z_res - zr;
  const double cl = spec.coupler.line_speed;
  const double lt = spec.total_length();

  const double kappa_scale = cl * kappa * kappa * st / (4.0 * kPi * lt);
  const double z_scale = cl * dz * st * cp / (2.0 * kPi * zr * lt);
  double re = 0.0;
  switch (spec.termination) {
    case TerminationCase::kShortOpen:
      re = -kappa_scale * (2.0 * cp + ct) + z_scale;
      break;
    case TerminationCase::kShortShort:
      re = kappa_scale * (2.0 * cp - ct) - z_scale;
      break;
    case TerminationCase::kOpenOpen:
      re = -kappa_scale * (2.0 * cp + ct) + z_scale;
      break;
    case TerminationCase::kExplicit:
      break;  // unreachable, rejected above
  }
  const double im = -cl * kappa * kappa * st * st / (4.0 * kPi * lt);
  return package(pv, Complex(re, im));
}

}  // namespace cpwkit
