#include "cpwkit/elliptic.hpp"

#include <cmath>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {

namespace {

// AGM iteration: K = pi / (2 * agm(1, k')). Long double keeps the last bit
// honest for k close to either end of the interval.
long double agm(long double a, long double g) {
  for (int i = 0; i < 64; ++i) {
    const long double an = 0.5L * (a + g);
    const long double gn = std::sqrt(a * g);
    if (std::abs(an - gn) <= 2.0L * std::numeric_limits<long double>::epsilon() * an) {
      return 0.5L * (an + gn);
    }
    a = an;
    g = gn;
  }
  return 0.5L * (a + g);
}

}  // namespace

double complete_elliptic_k(double k) {
  if (!(k >= 0.0) || k >= 1.0) {
    throw NumericalError("complete_elliptic_k: modulus must lie in [0, 1)");
  }
  const long double kl = k;
  const long double kp = std::sqrt((1.0L - kl) * (1.0L + kl));
  return static_cast<double>(kPi / (2.0L * agm(1.0L, kp)));
}

double complete_elliptic_k_comp(double k) {
  if (!(k > 0.0) || k > 1.0) {
    throw NumericalError("complete_elliptic_k_comp: modulus must lie in (0, 1]");
  }
  return static_cast<double>(kPi / (2.0L * agm(1.0L, static_cast<long double>(k))));
}

SingleCpwResult single_cpw_closed_form(double strip_width, double gap,
                                       const MaterialHalfSpaces& material) {
  if (!(strip_width > 0.0) || !(gap > 0.0)) {
    throw DegenerateGeometry("single_cpw_closed_form: width and gap must be positive");
  }
  SingleCpwResult r;
  r.modulus = strip_width / (strip_width + 2.0 * gap);
  r.k_ratio = complete_elliptic_k(r.modulus) / complete_elliptic_k_comp(r.modulus);
  r.line_speed = material.line_speed();
  r.capacitance = 4.0 * kEps0 * material.eps_eff() * r.k_ratio;
  r.inductance = 1.0 / (r.line_speed * r.line_speed * r.capacitance);
  r.impedance = 1.0 / (r.line_speed * r.capacitance);
  return r;
}

}  // namespace cpwkit
