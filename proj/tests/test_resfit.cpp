#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <sstream>
#include <string>
#include <vector>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"
#include "cpwkit/netsolver.hpp"
#include "cpwkit/resfit.hpp"

using namespace cpwkit;
using Complex = std::complex<double>;

namespace {

ResonanceModel reference_model() {
  ResonanceModel m;
  m.a = 0.98;
  m.alpha = 0.3;
  m.tau = 40e-9;
  m.phi = 0.1;
  m.q_l = 1.0e4;
  m.q_e = 2.0e4;
  m.f_r = 6.0e9;
  return m;
}

Trace synthesize(const ResonanceModel& m, double linewidths, int points) {
  const double half_span = 0.5 * linewidths * m.f_r / m.q_l;
  Trace t;
  for (int i = 0; i < points; ++i) {
    const double f =
        m.f_r - half_span +
        2.0 * half_span * static_cast<double>(i) / (points - 1);
    t.f_hz.push_back(f);
    t.s21.push_back(evaluate_s21(m, f));
  }
  return t;
}

}  // namespace

TEST_CASE("scattering model limits") {
  ResonanceModel m;
  m.a = 1.0;
  m.q_l = 5000.0;
  m.q_e = 10000.0;
  m.f_r = 6.0e9;
  CHECK(evaluate_s21(m, m.f_r).real() ==
        doctest::Approx(1.0 - m.q_l / m.q_e).epsilon(1e-12));
  CHECK(std::abs(evaluate_s21(m, m.f_r).imag()) < 1e-12);
  // Far off resonance the baseline survives.
  const Complex far = evaluate_s21(m, m.f_r * 1.5);
  CHECK(std::abs(far - Complex(1.0, 0.0)) < 1e-3);

  ResonanceModel bad = m;
  bad.q_l = -1.0;
  CHECK_THROWS_AS(evaluate_s21(bad, 6.0e9), ConfigError);
}

TEST_CASE("half-depth width of the power dip equals f_r over Q_l") {
  ResonanceModel m;
  m.a = 1.0;
  m.q_l = 5000.0;
  m.q_e = 10000.0;
  m.f_r = 6.0e9;
  const int n = 40001;
  const double span = 8.0 * m.f_r / m.q_l;
  std::vector<double> fs(n), power(n);
  for (int i = 0; i < n; ++i) {
    fs[i] = m.f_r - 0.5 * span + span * i / (n - 1.0);
    power[i] = std::norm(evaluate_s21(m, fs[i]));
  }
  const double level = 0.5 * (1.0 + power[n / 2]);
  int lo = n / 2, hi = n / 2;
  while (power[lo] < level) --lo;
  while (power[hi] < level) ++hi;
  const double width = fs[hi] - fs[lo];
  CHECK(width ==
        doctest::Approx(m.f_r / m.q_l).epsilon(2.0 * span / (n - 1.0) /
                                               (m.f_r / m.q_l)));
}

TEST_CASE("pole description matches the notch description") {
  ResonanceModel m;
  m.a = 0.9;
  m.alpha = 0.2;
  m.q_l = 2500.0;
  m.q_e = 6000.0;
  m.phi = 0.15;
  m.f_r = 5.0e9;
  const PoleModel p = pole_from_model(m);
  CHECK(p.f_p.imag() == doctest::Approx(1.0e6).epsilon(1e-12));
  CHECK(p.quality_factor() == doctest::Approx(m.q_l).epsilon(1e-12));

  // With zero delay the two forms are algebraically identical.
  for (double df : {-3e6, -1e5, 0.0, 2e5, 4e6}) {
    const double f = m.f_r + df;
    const Complex notch = evaluate_s21(m, f);
    const Complex pole = p.a_kl + p.b_kl / (f - p.f_p);
    CHECK(std::abs(notch - pole) < 1e-12);
  }

  // A huge quality factor pushes the pole onto the real axis.
  ResonanceModel hi = m;
  hi.q_l = 1e12;
  CHECK(std::abs(pole_from_model(hi).f_p.imag()) < 1e-11 * hi.f_r);

  // With delay the identification still holds to first order near f_r.
  ResonanceModel delayed = m;
  delayed.tau = 30e-9;
  const PoleModel pd = pole_from_model(delayed);
  const double f = m.f_r * (1.0 + 1e-7);
  const Complex notch = evaluate_s21(delayed, f);
  const Complex pole =
      (pd.a_kl + pd.b_kl / (f - pd.f_p)) *
      std::exp(Complex(0.0, 2.0 * kPi * (f - m.f_r) * delayed.tau));
  CHECK(std::abs(notch - pole) < 1e-5 * std::abs(notch));
}

TEST_CASE("zero-rotation trace is a circle of diameter Q_l over Q_e") {
  ResonanceModel m = reference_model();
  m.phi = 0.0;
  const Trace t = synthesize(m, 20.0, 2001);
  const Complex center(1.0 - m.q_l / (2.0 * m.q_e), 0.0);
  const double radius = m.q_l / (2.0 * m.q_e);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Complex baseline =
        m.a * std::exp(Complex(0.0, m.alpha + 2.0 * kPi * t.f_hz[i] * m.tau));
    const Complex reduced = t.s21[i] / baseline;
    CHECK(std::abs(std::abs(reduced - center) - radius) < 1e-9);
  }
}

TEST_CASE("near the optimum the fit converges quadratically") {
  // A correct analytic Jacobian makes Gauss-Newton contract quadratically
  // on a zero-residual problem; a systematic Jacobian error would show up
  // as a long creeping tail instead.
  const ResonanceModel truth = reference_model();
  const Trace t = synthesize(truth, 10.0, 301);
  std::vector<double ResonanceModel::*> fields = {
      &ResonanceModel::a,    &ResonanceModel::alpha, &ResonanceModel::tau,
      &ResonanceModel::phi,  &ResonanceModel::q_l,   &ResonanceModel::q_e,
      &ResonanceModel::f_r};
  // Perturbations sized to stay well inside the basin: the resonance
  // frequency moves by a twentieth of a linewidth, everything else by 0.1%.
  std::vector<double> deltas = {1e-3 * truth.a, 1e-3,
                                1e-3 * truth.tau, 1e-3,
                                1e-3 * truth.q_l, 1e-3 * truth.q_e,
                                0.05 * truth.f_r / truth.q_l};
  for (std::size_t k = 0; k < fields.size(); ++k) {
    ResonanceModel init = truth;
    init.*fields[k] = truth.*fields[k] + deltas[k];
    CAPTURE(k);
    const FitResult r = fit(t, init);
    CHECK(r.iterations <= 8);
    CHECK(r.model.q_l == doctest::Approx(truth.q_l).epsilon(1e-8));
    CHECK(r.model.f_r == doctest::Approx(truth.f_r).epsilon(1e-10));
  }
}

TEST_CASE("noiseless synthesis round-trips through the fit") {
  const ResonanceModel truth = reference_model();
  const Trace t = synthesize(truth, 10.0, 401);
  const FitResult r = fit(t);
  CHECK(r.model.a == doctest::Approx(truth.a).epsilon(1e-6));
  CHECK(r.model.alpha == doctest::Approx(truth.alpha).epsilon(1e-6));
  CHECK(r.model.tau == doctest::Approx(truth.tau).epsilon(1e-6));
  CHECK(r.model.phi == doctest::Approx(truth.phi).epsilon(1e-6));
  CHECK(r.model.q_l == doctest::Approx(truth.q_l).epsilon(1e-6));
  CHECK(r.model.q_e == doctest::Approx(truth.q_e).epsilon(1e-6));
  CHECK(r.model.f_r == doctest::Approx(truth.f_r).epsilon(1e-6));
  CHECK(r.ssr < 1e-12);
}

TEST_CASE("fit result is invariant under trace reversal") {
  const ResonanceModel truth = reference_model();
  Trace t = synthesize(truth, 10.0, 301);
  const FitResult forward = fit(t);
  std::reverse(t.f_hz.begin(), t.f_hz.end());
  std::reverse(t.s21.begin(), t.s21.end());
  const FitResult backward = fit(t);
  CHECK(forward.model.f_r ==
        doctest::Approx(backward.model.f_r).epsilon(1e-12));
  CHECK(forward.model.q_l ==
        doctest::Approx(backward.model.q_l).epsilon(1e-12));
}

TEST_CASE("supplied initial model is honored") {
  const ResonanceModel truth = reference_model();
  const Trace t = synthesize(truth, 10.0, 301);
  ResonanceModel init = truth;
  init.q_l *= 1.2;
  init.f_r *= 1.0 + 1e-5;
  const FitResult r = fit(t, init);
  CHECK(r.model.q_l == doctest::Approx(truth.q_l).epsilon(1e-6));
}

TEST_CASE("quality factor scatter stays inside the covariance estimate") {
  const ResonanceModel truth = reference_model();
  const Trace clean = synthesize(truth, 10.0, 401);
  const double sigma = 0.005 * truth.a;
  int hits = 0;
  int fitted = 0;
  for (std::uint32_t seed = 1; seed <= 100; ++seed) {
    const Trace noisy = add_complex_noise(clean, sigma, seed);
    const FitResult r = fit(noisy);
    ++fitted;
    if (std::abs(r.model.q_l - truth.q_l) <= 3.0 * r.sigma(4)) ++hits;
  }
  CHECK(fitted == 100);
  CHECK(hits >= 97);
}

TEST_CASE("noise injection is deterministic per seed") {
  const Trace clean = synthesize(reference_model(), 10.0, 51);
  const Trace n1 = add_complex_noise(clean, 0.01, 42);
  const Trace n2 = add_complex_noise(clean, 0.01, 42);
  const Trace n3 = add_complex_noise(clean, 0.01, 43);
  double same = 0.0, other = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    same += std::abs(n1.s21[i] - n2.s21[i]);
    other += std::abs(n1.s21[i] - n3.s21[i]);
  }
  CHECK(same == 0.0);
  CHECK(other > 0.0);
}

TEST_CASE("internal quality factor conventions") {
  ResonanceModel m = reference_model();
  m.phi = 0.3;
  const double expect =
      1.0 / (1.0 / m.q_l - std::cos(m.phi) / m.q_e);
  CHECK(m.q_internal() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(m.q_internal_simple() ==
        doctest::Approx(1.0 / (1.0 / m.q_l - 1.0 / m.q_e)).epsilon(1e-12));
  m.phi = 0.0;
  CHECK(m.q_internal() == doctest::Approx(m.q_internal_simple()));
}

TEST_CASE("degenerate traces are rejected") {
  const ResonanceModel truth = reference_model();
  SUBCASE("too few points") {
    const Trace t = synthesize(truth, 10.0, 6);
    CHECK_THROWS_AS(fit(t), InsufficientSpan);
  }
  SUBCASE("no dip") {
    Trace t = synthesize(truth, 10.0, 101);
    for (std::size_t i = 0; i < t.size(); ++i)
      t.s21[i] = Complex(0.97, 0.01);
    CHECK_THROWS_AS(fit(t), NoDip);
  }
  SUBCASE("span too narrow") {
    const Trace t = synthesize(truth, 2.0, 101);
    CHECK_THROWS_AS(fit(t), InsufficientSpan);
  }
}

TEST_CASE("trace parsers") {
  SUBCASE("real and imaginary columns") {
    std::istringstream in(
        "# comment\n"
        "freq,re,im\n"
        "6.0e9, 0.5, -0.25\n"
        "\n"
        "6.1e9,0.75,0.1\n");
    const Trace t = parse_trace_reim(in);
    REQUIRE(t.size() == 2);
    CHECK(t.f_hz[0] == doctest::Approx(6.0e9));
    CHECK(t.s21[0] == Complex(0.5, -0.25));
    CHECK(t.s21[1] == Complex(0.75, 0.1));
  }
  SUBCASE("magnitude and phase columns") {
    std::istringstream in("5.5e9,2.0,90.0\n");
    const Trace t = parse_trace_magphase(in);
    REQUIRE(t.size() == 1);
    CHECK(std::abs(t.s21[0] - Complex(0.0, 2.0)) < 1e-12);
  }
  SUBCASE("malformed row names its line") {
    std::istringstream in("1.0,2.0,3.0\n4.0,oops,6.0\n");
    try {
      parse_trace_reim(in);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("empty input") {
    std::istringstream in("# nothing here\n");
    CHECK_THROWS_AS(parse_trace_reim(in), ConfigError);
  }
}

TEST_CASE("fitting a solver trace reproduces the pole quality factor") {
  CouplerModel c;
  c.z_feed = 48.33;
  c.z_res = 50.22;
  c.kappa = 0.02;
  c.gamma = std::sqrt(1.0 - c.kappa * c.kappa);
  c.coupler_length = 400e-6;
  c.line_speed = 1.2016e8;
  c.feed_index = 0;
  NetworkSpec spec;
  spec.coupler = c;
  spec.z_resonator = 50.22;
  spec.length_short = 3600e-6;
  spec.length_open = 1000e-6;
  spec.termination = TerminationCase::kShortOpen;
  spec.z_in = 48.33;
  spec.z_out = 48.33;

  const PoleResult pole = find_pole(spec, 1);
  REQUIRE(pole.converged);

  Trace t;
  const double half_span = 5.0 * pole.f_r / pole.q_l;
  const int n = 201;
  for (int i = 0; i < n; ++i) {
    const double f = pole.f_r - half_span + 2.0 * half_span * i / (n - 1.0);
    t.f_hz.push_back(f);
    t.s21.push_back(scattering(spec, f, 1).transmission);
  }
  const FitResult r = fit(t);
  CHECK(std::abs(r.model.q_l - pole.q_l) < 0.01 * pole.q_l);
  CHECK(r.model.f_r == doctest::Approx(pole.f_r).epsilon(1e-6));
  // The network is lossless, so internal loss must be negligible.
  CHECK(r.model.q_internal() > 50.0 * r.model.q_l);
}
