#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "cpwkit/geometry.hpp"

// Conformal-mapping extraction of per-unit-length matrices for coplanar
// multiconductor lines. The upper half-plane is mapped through a
// hyperelliptic integral whose branch points are the conductor edges;
// conductors land on horizontal segments (constant potential) and gaps on
// vertical ones (field lines), so charges and potentials reduce to real and
// imaginary parts of the map evaluated at the edges.

namespace cpwkit {

// Mapping differential: product of (x - c) over `zeros` times (1 - rho x),
// divided by the square roots of (x - r) over all branch points `roots`.
// Branch choice: every root to the right of x contributes a factor -i, with
// an overall prefactor i; that orientation puts conductors on horizontal
// image segments.
struct MapIntegrand {
  std::vector<double> roots;   // conductor edges, ascending
  std::vector<double> zeros;   // partition points (field reversals in gaps)
  double inverse_zero = 0.0;   // rho; reversal beyond the planes at x = 1/rho
};

// Integral of the mapping differential over [x0, x1]; both endpoints must be
// branch points and no branch point may lie strictly inside. Gauss quadrature
// with the inverse-square-root endpoint weight, nodes doubled from 32 until
// the result is stable to rel_tol.
std::complex<double> hyperelliptic_integral(const MapIntegrand& f, double x0,
                                            double x1, double rel_tol = 1e-10);

struct MappingSolution {
  std::size_t driven = 0;
  // One partition point per gap whose two neighbours are both at zero
  // potential; partition_gaps[k] = g means partition_points[k] lies between
  // conductors g and g+1.
  std::vector<double> partition_points;
  std::vector<std::size_t> partition_gaps;
  // Reciprocal abscissa of the field reversal outside the outer planes
  // (zero when the reversal sits at infinity, e.g. symmetric layouts).
  double outer_inverse_point = 0.0;
  // Map values at the conductor edges, in the solver's scale-free
  // coordinates (only ratios of these are meaningful).
  std::vector<std::complex<double>> w_left;
  std::vector<std::complex<double>> w_right;
  double driven_potential = 0.0;  // Im w at the driven conductor
  double residual = 0.0;          // worst grounded-edge potential, relative
};

// Finds the partition points such that every non-driven conductor sits at
// zero potential (residual < 1e-10 relative to the driven potential).
// Damped Newton with finite-difference Jacobian, falling back to
// coordinatewise bisection.
MappingSolution solve_partition_points(const CrossSection& xs,
                                       std::size_t driven);

struct PulMatrices {
  Eigen::MatrixXd capacitance;  // [F/m], Maxwell sign convention
  Eigen::MatrixXd inductance;   // [H/m]
  double line_speed = 0.0;      // TEM phase velocity [m/s]
  // Cross-section conductor index backing each row/column.
  std::vector<std::size_t> conductor_indices;
  std::vector<ConductorRole> roles;
};

// Per-unit-length C and L over the signal conductors; grounds are held at
// zero in every column solve and eliminated from the output. L is built from
// the same edge ratios with the (1/mu_r + 1)/mu0 scaling, which enforces
// L C = c_l^-2 identically.
PulMatrices extract_matrices(const CrossSection& xs);

// Notch-port reduction: ground the middle electrode of a three-signal-line
// coupler, keeping {feedline, resonator}.
PulMatrices reduce_notch(const PulMatrices& pul3);

// Butt-port reduction: join feedline and resonator into one conductor,
// keeping {joined, middle electrode}.
PulMatrices reduce_butt(const PulMatrices& pul3);

}  // namespace cpwkit
