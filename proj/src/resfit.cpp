#include "cpwkit/resfit.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {

namespace {

using Complex = std::complex<double>;
constexpr Complex kI(0.0, 1.0);
constexpr int kParamCount = 7;
using ParamVector = Eigen::Matrix<double, kParamCount, 1>;

struct ModelEval {
  Complex value;
  Eigen::Matrix<Complex, kParamCount, 1> gradient;
};

ModelEval evaluate_with_gradient(const ResonanceModel& m, double f) {
  const Complex baseline =
      m.a * std::exp(kI * (m.alpha + 2.0 * kPi * f * m.tau));
  const Complex rot = std::exp(kI * m.phi);
  const Complex d = 1.0 + 2.0 * kI * m.q_l * (f / m.f_r - 1.0);
  const Complex t = rot * (m.q_l / m.q_e) / d;
  ModelEval out;
  out.value = baseline * (1.0 - t);
  out.gradient(0) = out.value / m.a;
  out.gradient(1) = kI * out.value;
  out.gradient(2) = 2.0 * kPi * f * kI * out.value;
  out.gradient(3) = -baseline * kI * t;
  out.gradient(4) = -baseline * rot / (m.q_e * d * d);
  out.gradient(5) = baseline * rot * m.q_l / (m.q_e * m.q_e * d);
  out.gradient(6) = -baseline * rot * 2.0 * kI * m.q_l * m.q_l * f /
                    (m.q_e * d * d * m.f_r * m.f_r);
  return out;
}

ParamVector pack(const ResonanceModel& m) {
  ParamVector p;
  p << m.a, m.alpha, m.tau, m.phi, m.q_l, m.q_e, m.f_r;
  return p;
}

ResonanceModel unpack(const ParamVector& p) {
  ResonanceModel m;
  m.a = p(0);
  m.alpha = p(1);
  m.tau = p(2);
  m.phi = p(3);
  m.q_l = p(4);
  m.q_e = p(5);
  m.f_r = p(6);
  return m;
}

bool physical(const ParamVector& p) {
  return p(0) > 0.0 && p(4) > 0.0 && p(5) > 0.0 && p(6) > 0.0;
}

double sum_squared_residuals(const ResonanceModel& m, const Trace& trace) {
  double ssr = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i)
    ssr += std::norm(evaluate_s21(m, trace.f_hz[i]) - trace.s21[i]);
  return ssr;
}

// Least-squares phase slope of one wing of the trace, with running
// unwrapping of the sampled phases.
double wing_phase_slope(const Trace& trace, std::size_t begin,
                        std::size_t count) {
  double prev = std::arg(trace.s21[begin]);
  double unwrapped = prev;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double f0 = trace.f_hz[begin];
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = begin + k;
    if (k > 0) {
      double delta = std::arg(trace.s21[i]) - prev;
      delta = std::remainder(delta, 2.0 * kPi);
      prev = std::arg(trace.s21[i]);
      unwrapped += delta;
    }
    const double x = trace.f_hz[i] - f0;
    sx += x;
    sy += unwrapped;
    sxx += x * x;
    sxy += x * unwrapped;
  }
  const double n = static_cast<double>(count);
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) return 0.0;
  return (n * sxy - sx * sy) / denom;
}

ResonanceModel initial_guess(const Trace& trace) {
  const std::size_t n = trace.size();
  const std::size_t wing = std::max<std::size_t>(3, n / 10);

  ResonanceModel m;
  m.tau = (wing_phase_slope(trace, 0, wing) +
           wing_phase_slope(trace, n - wing, wing)) /
          (2.0 * (2.0 * kPi));

  double base = 0.0;
  Complex rotated(0.0, 0.0);
  for (std::size_t k = 0; k < wing; ++k) {
    for (std::size_t i : {k, n - 1 - k}) {
      base += std::abs(trace.s21[i]);
      rotated += trace.s21[i] *
                 std::exp(-kI * (2.0 * kPi * trace.f_hz[i] * m.tau));
    }
  }
  base /= static_cast<double>(2 * wing);
  m.a = base;
  m.alpha = std::arg(rotated);

  std::size_t imin = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs(trace.s21[i]) < std::abs(trace.s21[imin])) imin = i;
  m.f_r = trace.f_hz[imin];

  const double depth = (base - std::abs(trace.s21[imin])) / base;
  if (!(depth > 0.05))
    throw NoDip("trace has no resolvable resonance dip");

  // Half-depth width measured on |S21|^2, where it equals f_r / Q_l.
  const double level =
      0.5 * (base * base + std::norm(trace.s21[imin]));
  auto crossing = [&](int dir) {
    std::size_t i = imin;
    while (true) {
      if ((dir < 0 && i == 0) || (dir > 0 && i + 1 == n))
        throw InsufficientSpan(
            "trace does not bracket the half-depth width of the dip");
      const std::size_t j = i + dir;
      const double yi = std::norm(trace.s21[i]);
      const double yj = std::norm(trace.s21[j]);
      if (yj >= level) {
        const double w = (level - yi) / (yj - yi);
        return trace.f_hz[i] + w * (trace.f_hz[j] - trace.f_hz[i]);
      }
      i = j;
    }
  };
  const double width = crossing(+1) - crossing(-1);
  if (!(width > 0.0))
    throw NoDip("trace has no resolvable resonance dip");
  m.q_l = m.f_r / width;
  m.q_e = m.q_l / std::min(depth, 0.999);

  const double span = trace.f_hz.back() - trace.f_hz.front();
  if (span < 3.0 * width)
    throw InsufficientSpan("trace spans fewer than 3 linewidths");
  return m;
}

bool parse_field(const std::string& text, double* out) {
  try {
    std::size_t used = 0;
    *out = std::stod(text, &used);
    while (used < text.size() &&
           std::isspace(static_cast<unsigned char>(text[used])))
      ++used;
    return used == text.size();
  } catch (const std::exception&) {
    return false;
  }
}

Trace parse_trace(std::istream& in, bool magphase) {
  Trace trace;
  std::string line;
  std::size_t line_number = 0;
  bool header_skipped = false;
  while (std::getline(in, line)) {
    ++line_number;
    std::string body = line;
    if (!body.empty() && body.back() == '\r') body.pop_back();
    std::size_t first = body.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (body[first] == '#' || body[first] == '!') continue;

    std::array<double, 3> v{};
    std::string field;
    std::istringstream row(body);
    int idx = 0;
    bool bad = false;
    while (std::getline(row, field, ',')) {
      if (idx >= 3 || !parse_field(field, &v[idx])) {
        bad = true;
        break;
      }
      ++idx;
    }
    if (bad || idx != 3) {
      // Tolerate one leading header line before any data row.
      if (trace.size() == 0 && !header_skipped) {
        header_skipped = true;
        continue;
      }
      throw ConfigError("malformed trace row at line " +
                        std::to_string(line_number) + ": " + body);
    }
    trace.f_hz.push_back(v[0]);
    if (magphase) {
      const double rad = v[2] * kPi / 180.0;
      trace.s21.push_back(v[1] * Complex(std::cos(rad), std::sin(rad)));
    } else {
      trace.s21.emplace_back(v[1], v[2]);
    }
  }
  if (trace.size() == 0) throw ConfigError("trace file contains no data rows");
  return trace;
}

}  // namespace

double ResonanceModel::q_internal() const {
  const double inv = 1.0 / q_l - std::cos(phi) / q_e;
  return inv > 0.0 ? 1.0 / inv : std::numeric_limits<double>::infinity();
}

double ResonanceModel::q_internal_simple() const {
  const double inv = 1.0 / q_l - 1.0 / q_e;
  return inv > 0.0 ? 1.0 / inv : std::numeric_limits<double>::infinity();
}

void ResonanceModel::validate() const {
  if (!(a > 0.0) || !(q_l > 0.0) || !(q_e > 0.0) || !(f_r > 0.0))
    throw ConfigError(
        "resonance model requires positive amplitude, quality factors, and "
        "resonance frequency");
}

Complex evaluate_s21(const ResonanceModel& model, double f) {
  model.validate();
  return evaluate_with_gradient(model, f).value;
}

double PoleModel::quality_factor() const {
  return std::abs(f_p.real() / (2.0 * f_p.imag()));
}

PoleModel pole_from_model(const ResonanceModel& model) {
  model.validate();
  PoleModel out;
  out.f_p = model.f_r * Complex(1.0, 1.0 / (2.0 * model.q_l));
  const Complex baseline =
      model.a *
      std::exp(kI * (model.alpha + 2.0 * kPi * model.f_r * model.tau));
  out.a_kl = baseline;
  out.b_kl =
      baseline * kI * std::exp(kI * model.phi) * model.f_r / (2.0 * model.q_e);
  return out;
}

Trace parse_trace_reim(std::istream& in) { return parse_trace(in, false); }

Trace parse_trace_magphase(std::istream& in) { return parse_trace(in, true); }

Trace add_complex_noise(Trace trace, double sigma, std::uint32_t seed) {
  std::mt19937 rng(seed);
  auto gaussian = [&rng]() {
    // Box-Muller with both uniforms pulled away from zero; mt19937's output
    // sequence is fixed by the standard, so replicas are reproducible.
    const double u1 =
        (static_cast<double>(rng()) + 0.5) / 4294967296.0;
    const double u2 =
        (static_cast<double>(rng()) + 0.5) / 4294967296.0;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  };
  for (Complex& s : trace.s21) s += sigma * Complex(gaussian(), gaussian());
  return trace;
}

FitResult fit(const Trace& trace,
              const std::optional<ResonanceModel>& init) {
  if (trace.f_hz.size() != trace.s21.size())
    throw ConfigError("trace frequency and value arrays differ in length");
  if (trace.size() < 7)
    throw InsufficientSpan("fit requires at least 7 trace points");

  // Sort by frequency so the initializer can march outward from the dip;
  // the least-squares objective itself is order-independent.
  Trace sorted;
  {
    std::vector<std::size_t> order(trace.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&trace](std::size_t l, std::size_t r) {
      return trace.f_hz[l] < trace.f_hz[r];
    });
    sorted.f_hz.reserve(trace.size());
    sorted.s21.reserve(trace.size());
    for (std::size_t i : order) {
      sorted.f_hz.push_back(trace.f_hz[i]);
      sorted.s21.push_back(trace.s21[i]);
    }
  }

  ResonanceModel model = init ? *init : initial_guess(sorted);
  model.validate();

  const std::size_t n = sorted.size();
  Eigen::MatrixXd jac(2 * n, kParamCount);
  Eigen::VectorXd res(2 * n);
  ParamVector p = pack(model);
  double ssr = sum_squared_residuals(model, sorted);

  // Step-size floors keep the relative-convergence test meaningful for
  // parameters whose optimum is near zero.
  ParamVector floors;
  floors << 1e-3, 1.0, 1e-12, 1.0, 1.0, 1.0, 1.0;

  FitResult out;
  bool converged = false;
  int floor_hits = 0;
  for (int iter = 0; iter < 200 && !converged; ++iter) {
    const ResonanceModel current = unpack(p);
    for (std::size_t i = 0; i < n; ++i) {
      const ModelEval e = evaluate_with_gradient(current, sorted.f_hz[i]);
      const Complex r = e.value - sorted.s21[i];
      res(2 * i) = r.real();
      res(2 * i + 1) = r.imag();
      for (int k = 0; k < kParamCount; ++k) {
        jac(2 * i, k) = e.gradient(k).real();
        jac(2 * i + 1, k) = e.gradient(k).imag();
      }
    }
    if (!res.allFinite() || !jac.allFinite())
      throw Divergence("fit produced non-finite residuals");

    // Equilibrate columns first: the delay and frequency columns differ by
    // many orders of magnitude, and an unscaled QR solve truncates the weak
    // directions.
    ParamVector equilibrate;
    for (int k = 0; k < kParamCount; ++k) {
      const double norm = jac.col(k).norm();
      equilibrate(k) = norm > 0.0 ? 1.0 / norm : 1.0;
    }
    const Eigen::MatrixXd jac_scaled = jac * equilibrate.asDiagonal();
    ParamVector step =
        equilibrate.asDiagonal() *
        jac_scaled.colPivHouseholderQr().solve(-res).eval();
    double rel = 0.0;
    for (int k = 0; k < kParamCount; ++k)
      rel = std::max(rel,
                     std::abs(step(k)) / std::max(std::abs(p(k)), floors(k)));
    if (rel < 1e-10) {
      converged = true;
      out.iterations = iter;
      break;
    }

    bool accepted = false;
    const double previous_ssr = ssr;
    for (int half = 0; half < 30; ++half) {
      const ParamVector trial = p + step;
      if (physical(trial)) {
        const double trial_ssr = sum_squared_residuals(unpack(trial), sorted);
        if (std::isfinite(trial_ssr) && trial_ssr <= ssr * (1.0 + 1e-12)) {
          p = trial;
          ssr = trial_ssr;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (accepted) {
      // The two angles only enter through their exponentials; keep them in
      // the principal branch so they cannot wander turn by turn.
      p(1) = std::remainder(p(1), 2.0 * kPi);
      p(3) = std::remainder(p(3), 2.0 * kPi);
      // A model that cannot represent the trace exactly bottoms out with
      // tiny step-by-step gains; treat a stagnant objective as converged.
      if (previous_ssr - ssr <= 1e-14 * previous_ssr)
        ++floor_hits;
      else
        floor_hits = 0;
      if (floor_hits >= 3) {
        converged = true;
        out.iterations = iter + 1;
        break;
      }
    }
    if (!accepted) {
      if (rel < 1e-8) {
        converged = true;  // stuck at the noise floor of the objective
        out.iterations = iter;
        break;
      }
      throw Divergence("fit stalled without reaching the convergence test");
    }
    out.iterations = iter + 1;
  }
  if (!converged)
    throw Divergence("fit exceeded the iteration budget");

  out.model = unpack(p);
  out.model.validate();
  out.ssr = ssr;

  // Covariance with per-column normalization so the wildly different
  // parameter scales do not poison the normal-equations inverse.
  const ResonanceModel final_model = out.model;
  for (std::size_t i = 0; i < n; ++i) {
    const ModelEval e = evaluate_with_gradient(final_model, sorted.f_hz[i]);
    for (int k = 0; k < kParamCount; ++k) {
      jac(2 * i, k) = e.gradient(k).real();
      jac(2 * i + 1, k) = e.gradient(k).imag();
    }
  }
  ParamVector col_scale;
  for (int k = 0; k < kParamCount; ++k) {
    const double norm = jac.col(k).norm();
    col_scale(k) = norm > 0.0 ? 1.0 / norm : 1.0;
  }
  const Eigen::MatrixXd js = jac * col_scale.asDiagonal();
  const Eigen::Matrix<double, 7, 7> gram = js.transpose() * js;
  const double dof = static_cast<double>(2 * n - kParamCount);
  const double variance = ssr / dof;
  const Eigen::Matrix<double, 7, 7> inv = gram.fullPivLu().inverse();
  out.covariance = variance * col_scale.asDiagonal() * inv *
                   col_scale.asDiagonal();
  for (int k = 0; k < kParamCount; ++k)
    out.sigma(k) = std::sqrt(std::max(out.covariance(k, k), 0.0));
  return out;
}

}  // namespace cpwkit
