#pragma once

#include "cpwkit/geometry.hpp"

// Complete elliptic integrals via the arithmetic-geometric mean, and the
// textbook closed forms for a single coplanar waveguide that they feed.

namespace cpwkit {

// K(k) for modulus k in [0, 1). Relative accuracy ~1e-15.
double complete_elliptic_k(double k);

// K(k') = K(sqrt(1 - k^2)) without forming k' explicitly near k -> 0.
double complete_elliptic_k_comp(double k);

struct SingleCpwResult {
  double capacitance = 0.0;     // per-unit-length C [F/m]
  double inductance = 0.0;      // per-unit-length L [H/m]
  double impedance = 0.0;       // characteristic impedance [ohm]
  double modulus = 0.0;         // k = w / (w + 2 s)
  double k_ratio = 0.0;         // K(k) / K(k')
  double line_speed = 0.0;      // TEM phase velocity [m/s]
};

// Infinite-ground CPW with centre strip width w and gap s on each side.
// C = 4 eps0 eps_eff K(k)/K(k'), Z = 1/(c_l C).
SingleCpwResult single_cpw_closed_form(double strip_width, double gap,
                                       const MaterialHalfSpaces& material);

}  // namespace cpwkit
