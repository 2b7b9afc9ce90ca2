#include "cpwkit/mtl.hpp"

#include <cmath>
#include <sstream>

#include "cpwkit/errors.hpp"
#include "cpwkit/geometry.hpp"

namespace cpwkit {

namespace {

void require_identity(const PulMatrices& pul) {
  const auto n = pul.capacitance.rows();
  const Eigen::MatrixXd lc =
      pul.inductance * pul.capacitance * pul.line_speed * pul.line_speed;
  const double res = (lc - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  if (res > 1e-8) {
    std::ostringstream os;
    os << "homogeneous-media identity violated: |L C c_l^2 - 1| = " << res;
    throw IdentityViolated(os.str());
  }
}

}  // namespace

ModeDecomposition mode_decomposition(const PulMatrices& pul) {
  require_identity(pul);
  const auto n = pul.capacitance.rows();
  const double inv_c = 1.0 / pul.line_speed;

  ModeDecomposition out;
  out.a = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  out.a.topRightCorner(n, n) = pul.inductance;
  out.a.bottomLeftCorner(n, n) = pul.capacitance;

  out.p = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  out.p.topLeftCorner(n, n) = pul.inductance;
  out.p.topRightCorner(n, n) = pul.inductance;
  out.p.bottomLeftCorner(n, n) = inv_c * Eigen::MatrixXd::Identity(n, n);
  out.p.bottomRightCorner(n, n) = -inv_c * Eigen::MatrixXd::Identity(n, n);

  out.eigenvalues.resize(2 * n);
  out.eigenvalues.head(n).setConstant(inv_c);
  out.eigenvalues.tail(n).setConstant(-inv_c);
  out.d = out.eigenvalues.asDiagonal();

  const double anorm = out.a.cwiseAbs().maxCoeff();
  const double pnorm = out.p.cwiseAbs().maxCoeff();
  out.residual =
      (out.a * out.p - out.p * out.d).cwiseAbs().maxCoeff() / (anorm * pnorm);
  return out;
}

ImpedanceMatrix characteristic_impedance(const PulMatrices& pul) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(pul.capacitance);
  if (!lu.isInvertible()) {
    throw SingularMatrix("characteristic_impedance: C is singular");
  }
  // L C^-1 is symmetric exactly when L C^-1 = C^-1 L; it carries ohm^2, so
  // the impedance matrix is its positive definite square root.
  Eigen::MatrixXd zsq = pul.inductance * lu.inverse();
  const double asym = (zsq - zsq.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * zsq.cwiseAbs().maxCoeff()) {
    throw IdentityViolated("characteristic_impedance: L C^-1 not symmetric");
  }
  zsq = 0.5 * (zsq + zsq.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(zsq);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw SingularMatrix("characteristic_impedance: L C^-1 not positive");
  }
  ImpedanceMatrix out;
  out.mode_impedances = es.eigenvalues().cwiseSqrt();
  out.mode_vectors = es.eigenvectors();
  out.z = out.mode_vectors * out.mode_impedances.asDiagonal() *
          out.mode_vectors.transpose();
  return out;
}

CouplerModel parameterize_coupler(const PulMatrices& pul2,
                                  double coupler_length) {
  if (pul2.capacitance.rows() != 2) {
    throw DimensionMismatch("parameterize_coupler: expected 2x2 matrices");
  }
  require_identity(pul2);

  int feed = 0;
  for (std::size_t k = 0; k < pul2.roles.size(); ++k) {
    if (pul2.roles[k] == ConductorRole::kFeedline) feed = static_cast<int>(k);
  }
  const int res = 1 - feed;

  const auto& c = pul2.capacitance;
  const double kappa = -c(feed, res) / std::sqrt(c(feed, feed) * c(res, res));
  if (!(std::abs(kappa) < 1.0)) {
    std::ostringstream os;
    os << "coupling coefficient |" << kappa << "| >= 1";
    throw KappaOutOfRange(os.str());
  }

  CouplerModel out;
  out.kappa = kappa;
  out.gamma = std::sqrt(1.0 - kappa * kappa);
  out.line_speed = pul2.line_speed;
  out.coupler_length = coupler_length;
  out.feed_index = feed;
  out.z_feed = out.gamma / (pul2.line_speed * c(feed, feed));
  out.z_res = out.gamma / (pul2.line_speed * c(res, res));
  return out;
}

CouplerModel CouplerModel::with_kappa(double new_kappa) const {
  if (!(std::abs(new_kappa) < 1.0)) {
    std::ostringstream os;
    os << "coupling coefficient |" << new_kappa << "| >= 1";
    throw KappaOutOfRange(os.str());
  }
  CouplerModel out = *this;
  out.kappa = new_kappa;
  out.gamma = std::sqrt(1.0 - new_kappa * new_kappa);
  return out;
}

Eigen::Matrix2d CouplerModel::capacitance() const {
  const double mutual =
      -gamma * kappa / (line_speed * std::sqrt(z_feed * z_res));
  Eigen::Matrix2d c;
  const int f = feed_index, r = 1 - feed_index;
  c(f, f) = gamma / (line_speed * z_feed);
  c(r, r) = gamma / (line_speed * z_res);
  c(f, r) = c(r, f) = mutual;
  return c;
}

Eigen::Matrix2d CouplerModel::inductance() const {
  // L = C^-1 / c_l^2; inverting the reconstructed C in closed form leaves
  // the same impedance pattern scaled by 1/gamma^3, which is what keeps the
  // homogeneous-media identity exact on the round trip.
  const double g3 = gamma * gamma * gamma;
  const double mutual = kappa * std::sqrt(z_feed * z_res) / (line_speed * g3);
  Eigen::Matrix2d l;
  const int f = feed_index, r = 1 - feed_index;
  l(f, f) = z_feed / (line_speed * g3);
  l(r, r) = z_res / (line_speed * g3);
  l(f, r) = l(r, f) = mutual;
  return l;
}

}  // namespace cpwkit
