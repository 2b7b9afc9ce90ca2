#pragma once

#include <Eigen/Dense>

#include "cpwkit/conformal.hpp"

// Multiconductor transmission-line mode analysis for per-unit-length matrix
// pairs satisfying L C = c_l^-2, plus the two-line coupler parameterization
// (impedances, coupling coefficient) consumed by the network solver.

namespace cpwkit {

struct ModeDecomposition {
  Eigen::MatrixXd a;  // 2n x 2n system matrix [[0, L], [C, 0]]
  Eigen::MatrixXd p;  // eigenvector blocks [[L, L], [1/c_l, -1/c_l]]
  Eigen::MatrixXd d;  // diagonal of eigenvalues
  // Inverse phase velocities [s/m]: n entries +1/c_l, then n entries -1/c_l.
  Eigen::VectorXd eigenvalues;
  double residual = 0.0;  // |A P - P D| / (|A| |P|), infinity norms
};

// Closed-form diagonalization, valid because the homogeneous-media identity
// holds for the extracted matrices. Throws IdentityViolated if it does not.
ModeDecomposition mode_decomposition(const PulMatrices& pul);

struct ImpedanceMatrix {
  // Symmetric square root of L C^-1 [ohm]; equals c_l L when the
  // homogeneous-media identity holds.
  Eigen::MatrixXd z;
  Eigen::VectorXd mode_impedances;  // eigenvalues of z, ascending [ohm]
  Eigen::MatrixXd mode_vectors;     // orthonormal columns
};

// Characteristic impedance matrix and its orthogonal eigendecomposition.
// Throws SingularMatrix when C is not invertible or L C^-1 is not positive,
// IdentityViolated when L C^-1 is not symmetric.
ImpedanceMatrix characteristic_impedance(const PulMatrices& pul);

struct CouplerModel {
  double z_feed = 0.0;          // feedline-conductor impedance [ohm]
  double z_res = 0.0;           // resonator-conductor impedance [ohm]
  double kappa = 0.0;           // dimensionless coupling coefficient
  double gamma = 1.0;           // sqrt(1 - kappa^2)
  double coupler_length = 0.0;  // l_c [m]
  double line_speed = 0.0;      // c_l [m/s]
  // Row of the source 2x2 matrices that carried the feedline (0 or 1), so
  // the reconstruction below returns entries in the source order.
  int feed_index = 0;

  // Reconstruct the per-unit-length matrices this model was built from.
  Eigen::Matrix2d capacitance() const;
  Eigen::Matrix2d inductance() const;

  // Copy with a different coupling coefficient (gamma kept consistent).
  // Throws KappaOutOfRange when |new_kappa| >= 1.
  CouplerModel with_kappa(double new_kappa) const;
};

// Parameterizes a 2x2 coupler: kappa = -C_fr / sqrt(C_ff C_rr), per-line
// impedances gamma / (c_l C_kk). The feedline row is identified by role
// (kFeedline); when roles are inconclusive row 0 is taken as the feedline.
// Throws KappaOutOfRange when |kappa| >= 1.
CouplerModel parameterize_coupler(const PulMatrices& pul2,
                                  double coupler_length);

}  // namespace cpwkit
