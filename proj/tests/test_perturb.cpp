#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"
#include "cpwkit/netsolver.hpp"
#include "cpwkit/perturb.hpp"

using namespace cpwkit;
using Complex = std::complex<double>;

namespace {

NetworkSpec paper_network(double kappa,
                          TerminationCase tc = TerminationCase::kShortOpen) {
  CouplerModel c;
  c.z_feed = 48.33;
  c.z_res = 50.22;
  c.kappa = kappa;
  c.gamma = std::sqrt(1.0 - kappa * kappa);
  c.coupler_length = 400e-6;
  c.line_speed = 1.2016e8;
  c.feed_index = 0;
  NetworkSpec s;
  s.coupler = c;
  s.z_resonator = 50.22;
  s.length_short = 3600e-6;
  s.length_open = 1000e-6;
  s.termination = tc;
  s.z_in = 48.33;
  s.z_out = 48.33;
  return s;
}

double rel_diff(Complex a, Complex b) {
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

}  // namespace

TEST_CASE("phase variables of the quarter-wave design") {
  const NetworkSpec a = paper_network(0.0);
  const PhaseVariables pa = phase_variables(a, 1);
  CHECK(pa.fr0 == doctest::Approx(6.008e9));
  CHECK(pa.theta == doctest::Approx(2.0 * kPi * 0.02).epsilon(1e-12));
  CHECK(pa.psi == doctest::Approx(2.0 * kPi * 0.12).epsilon(1e-12));
  const PhaseVariables pa2 = phase_variables(a, 2);
  CHECK(pa2.fr0 == doctest::Approx(3.0 * 6.008e9));
  CHECK(pa2.theta == doctest::Approx(3.0 * pa.theta).epsilon(1e-12));

  const NetworkSpec b = paper_network(0.0, TerminationCase::kShortShort);
  const PhaseVariables pb = phase_variables(b, 1);
  CHECK(pb.fr0 == doctest::Approx(1.2016e10));
  CHECK(pb.theta == doctest::Approx(2.0 * kPi * 0.04).epsilon(1e-12));

  CHECK_THROWS_AS(phase_variables(a, 0), ConfigError);
}

TEST_CASE("closed-form derivative ratios match finite differences") {
  for (TerminationCase tc :
       {TerminationCase::kShortOpen, TerminationCase::kShortShort,
        TerminationCase::kOpenOpen}) {
    for (bool matched : {true, false}) {
      NetworkSpec s = paper_network(0.0, tc);
      if (!matched) {
        s.z_in = 40.0;
        s.z_out = 65.0;
      }
      for (int p : {1, 2}) {
        CAPTURE(static_cast<int>(tc));
        CAPTURE(matched);
        CAPTURE(p);
        const DeterminantDerivatives cf =
            determinant_derivatives(s, p, DerivativeRoute::kClosedForm);
        const DeterminantDerivatives fd =
            determinant_derivatives(s, p, DerivativeRoute::kFiniteDifference);
        CHECK(rel_diff(cf.ratio_kappa(), fd.ratio_kappa()) < 1e-4);
        CHECK(rel_diff(cf.ratio_z(), fd.ratio_z()) < 1e-4);
      }
    }
  }
}

TEST_CASE("determinant is even in the coupling coefficient") {
  const NetworkSpec s = paper_network(0.0);
  const PhaseVariables pv = phase_variables(s, 1);
  // Slightly off resonance so the determinant itself is well away from zero.
  const Complex f(pv.fr0 * 1.003, 0.0);
  auto at_kappa = [&](double k) {
    NetworkSpec t = s;
    t.coupler = s.coupler.with_kappa(k);
    return network_determinant(t, f);
  };
  const ScaledComplex plus = at_kappa(0.02);
  const ScaledComplex minus = at_kappa(-0.02);
  REQUIRE(plus.exponent == minus.exponent);
  CHECK(std::abs(plus.mantissa - minus.mantissa) <
        1e-10 * std::abs(plus.mantissa));
}

TEST_CASE("matched quality factor tracks the numeric pole") {
  for (TerminationCase tc :
       {TerminationCase::kShortOpen, TerminationCase::kShortShort,
        TerminationCase::kOpenOpen}) {
    for (double kappa : {0.005, 0.01, 0.02, 0.05}) {
      CAPTURE(static_cast<int>(tc));
      CAPTURE(kappa);
      const NetworkSpec s = paper_network(kappa, tc);
      const PerturbationResult pert = shift_and_q_matched(s, 1);
      const PoleResult pole = find_pole(s, 1);
      REQUIRE(pole.converged);
      CHECK(std::abs(pert.q_external - pole.q_l) < 0.02 * pole.q_l);
    }
  }
}

TEST_CASE("matched quality factor for a higher mode") {
  for (TerminationCase tc :
       {TerminationCase::kShortOpen, TerminationCase::kShortShort,
        TerminationCase::kOpenOpen}) {
    const NetworkSpec s = paper_network(0.02, tc);
    const PerturbationResult pert = shift_and_q_matched(s, 2);
    const PoleResult pole = find_pole(s, 2);
    REQUIRE(pole.converged);
    CHECK(std::abs(pert.q_external - pole.q_l) < 0.02 * pole.q_l);
  }
}

TEST_CASE("numeric coupling loss scales as kappa squared") {
  std::vector<double> lk, lq;
  for (double kappa : {1.0e-3, 1.78e-3, 3.16e-3, 5.62e-3, 1.0e-2}) {
    const NetworkSpec s = paper_network(kappa);
    const PoleResult pole = find_pole(s, 1);
    REQUIRE(pole.converged);
    lk.push_back(std::log(kappa));
    lq.push_back(std::log(1.0 / pole.q_l));
  }
  const int n = static_cast<int>(lk.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sx += lk[i];
    sy += lq[i];
    sxx += lk[i] * lk[i];
    sxy += lk[i] * lq[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(std::abs(slope - 2.0) < 1e-3);
}

TEST_CASE("quality factor ignores the short/open length split") {
  const double kappa = 0.02;
  std::vector<double> qs;
  for (double lo_um : {400.0, 1000.0, 1600.0, 2200.0}) {
    NetworkSpec s = paper_network(kappa);
    s.length_open = lo_um * 1e-6;
    s.length_short = 5000e-6 - s.coupler.coupler_length - s.length_open;
    REQUIRE(s.total_length() == doctest::Approx(5000e-6));
    const PoleResult pole = find_pole(s, 1);
    REQUIRE(pole.converged);
    qs.push_back(pole.q_l);
  }
  const double qmin = *std::min_element(qs.begin(), qs.end());
  const double qmax = *std::max_element(qs.begin(), qs.end());
  CHECK((qmax - qmin) / qmin < 5.0 * kappa * kappa);
}

TEST_CASE("matched and general routes agree") {
  for (TerminationCase tc :
       {TerminationCase::kShortOpen, TerminationCase::kShortShort,
        TerminationCase::kOpenOpen}) {
    NetworkSpec s = paper_network(0.03, tc);
    s.coupler.z_res = 50.22 * 1.02;  // impedance step inside the coupler
    CAPTURE(static_cast<int>(tc));
    const PerturbationResult m = shift_and_q_matched(s, 1);
    const PerturbationResult g = shift_general(s, 1);
    CHECK(rel_diff(m.frequency_shift, g.frequency_shift) < 1e-6);
    CHECK(std::abs(m.q_external - g.q_external) < 1e-6 * g.q_external);
    CHECK(m.f_r == doctest::Approx(g.f_r).epsilon(1e-12));
  }
}

TEST_CASE("predicted shift tracks the numeric pole displacement") {
  SUBCASE("coupling only") {
    for (TerminationCase tc :
         {TerminationCase::kShortOpen, TerminationCase::kShortShort,
          TerminationCase::kOpenOpen}) {
      const NetworkSpec s = paper_network(0.05, tc);
      CAPTURE(static_cast<int>(tc));
      const PerturbationResult pert = shift_general(s, 1);
      const PoleResult pole = find_pole(s, 1);
      const double seen = pole.f_r - pert.phase.fr0;
      CHECK(std::abs(pert.frequency_shift.real() - seen) <
            0.05 * std::abs(seen));
    }
  }
  SUBCASE("coupling plus impedance step") {
    NetworkSpec s = paper_network(0.02);
    s.coupler.z_res = 50.22 * 1.01;
    const PerturbationResult pert = shift_general(s, 1);
    const PoleResult pole = find_pole(s, 1);
    const double seen = pole.f_r - pert.phase.fr0;
    CHECK(std::abs(pert.frequency_shift.real() - seen) <
          0.05 * std::abs(seen));
  }
  SUBCASE("mismatched ports") {
    NetworkSpec s = paper_network(0.02);
    s.z_in = 40.0;
    s.z_out = 65.0;
    const PerturbationResult pert = shift_general(s, 1);
    const PoleResult pole = find_pole(s, 1);
    const double seen = pole.f_r - pert.phase.fr0;
    CHECK(std::abs(pert.frequency_shift.real() - seen) <
          0.05 * std::abs(seen));
    CHECK(std::abs(pert.q_external - pole.q_l) < 0.02 * pole.q_l);
    CHECK(pert.frequency_shift.imag() < 0.0);
  }
}

TEST_CASE("zero coupling means zero shift and infinite quality factor") {
  const NetworkSpec s = paper_network(0.0);
  const PerturbationResult pert = shift_general(s, 1);
  CHECK(pert.frequency_shift == Complex(0.0, 0.0));
  CHECK(std::isinf(pert.q_external));
  CHECK(pert.inv_q == 0.0);
  CHECK(pert.f_r == doctest::Approx(6.008e9));
}

TEST_CASE("explicit terminations use the finite-difference route") {
  NetworkSpec expl = paper_network(0.02);
  expl.termination = TerminationCase::kExplicit;
  expl.z_t1 = Complex(1e-9, 0.0);  // near-short
  expl.z_t2 = Complex(1e12, 0.0);  // near-open
  CHECK_THROWS_AS(shift_general(expl, 1, DerivativeRoute::kClosedForm),
                  CaseUnsupported);
  CHECK_THROWS_AS(shift_and_q_matched(expl, 1), CaseUnsupported);
  const PerturbationResult fd =
      shift_general(expl, 1, DerivativeRoute::kFiniteDifference);
  const PerturbationResult preset = shift_and_q_matched(paper_network(0.02), 1);
  CHECK(rel_diff(fd.frequency_shift, preset.frequency_shift) < 1e-3);
  CHECK(std::abs(fd.q_external - preset.q_external) <
        1e-3 * preset.q_external);
}

TEST_CASE("mismatched ports are rejected by the matched route") {
  NetworkSpec s = paper_network(0.02);
  s.z_in = 40.0;
  CHECK_THROWS_AS(shift_and_q_matched(s, 1), NotMatched);
}
