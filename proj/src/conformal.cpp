#include "cpwkit/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {

namespace {

constexpr std::complex<double> kI{0.0, 1.0};
constexpr int kQuadStartNodes = 32;
constexpr int kQuadMaxNodes = 1 << 15;
constexpr double kQuadRelTol = 1e-10;

// Mapping differential at x with the magnitude of the two segment-endpoint
// roots divided out (the quadrature weight carries them); their branch
// phases are kept.
std::complex<double> reduced_integrand(const MapIntegrand& f, double x,
                                       double p, double q) {
  std::complex<double> val = kI;
  double mag = 1.0;
  for (double r : f.roots) {
    if (r == p || r == q) {
      if (x < r) val *= -kI;
      continue;
    }
    if (x > r) {
      mag /= std::sqrt(x - r);
    } else {
      val *= -kI;
      mag /= std::sqrt(r - x);
    }
  }
  for (double c : f.zeros) mag *= (x - c);
  if (f.inverse_zero != 0.0) mag *= (1.0 - f.inverse_zero * x);
  return val * mag;
}

struct SegmentIntegral {
  std::complex<double> value;
  double mass = 0.0;  // L1 proxy used as the absolute convergence scale
};

SegmentIntegral integrate_segment(const MapIntegrand& f, double p, double q,
                                  double rel_tol) {
  const double mid = 0.5 * (p + q);
  const double half = 0.5 * (q - p);
  SegmentIntegral prev{};
  bool have_prev = false;
  for (int m = kQuadStartNodes; m <= kQuadMaxNodes; m *= 2) {
    std::complex<double> sum = 0.0;
    double mass = 0.0;
    const double wk = kPi / m;
    for (int k = 0; k < m; ++k) {
      const double t = std::cos((2 * k + 1) * kPi / (2 * m));
      const std::complex<double> g = reduced_integrand(f, mid + half * t, p, q);
      sum += g;
      mass += std::abs(g);
    }
    SegmentIntegral cur{sum * wk, mass * wk};
    if (have_prev) {
      const double err = std::abs(cur.value - prev.value);
      if (err <= rel_tol * (std::abs(cur.value) + 0.03 * cur.mass)) return cur;
    }
    prev = cur;
    have_prev = true;
  }
  throw QuadratureNotConverged(
      "hyperelliptic_integral: node doubling did not converge");
}

// Scale-free view of the cross-section plus the bookkeeping of which gaps
// carry partition points and which equations close the system.
struct MapProblem {
  std::vector<double> edges;        // 2N edges in normalised coordinates
  std::size_t n_cond = 0;
  std::size_t driven = 0;
  std::size_t base = 0;             // reference grounded conductor
  std::vector<std::size_t> cgaps;   // gaps with both neighbours grounded
  bool use_rho = false;             // outer field-reversal parameter active
  double scale = 1.0;               // metres per normalised unit
  double offset = 0.0;              // physical x of normalised 0

  double left_edge(std::size_t j) const { return edges[2 * j]; }
  double right_edge(std::size_t j) const { return edges[2 * j + 1]; }
  std::size_t n_unknowns() const { return cgaps.size() + (use_rho ? 1 : 0); }
};

MapProblem make_problem(const CrossSection& xs, std::size_t driven) {
  xs.validate();
  const std::size_t n = xs.conductors.size();
  if (driven >= n) throw DimensionMismatch("driven conductor index out of range");
  if (n < 2) throw DegenerateGeometry("need at least two conductors");

  MapProblem p;
  p.n_cond = n;
  p.driven = driven;
  p.scale = xs.structure_width();
  p.offset = 0.5 * (xs.conductors.front().left + xs.conductors.back().right);
  if (!(p.scale > 0.0)) throw DegenerateGeometry("zero structure width");

  for (const auto& c : xs.conductors) {
    p.edges.push_back((c.left - p.offset) / p.scale);
    p.edges.push_back((c.right - p.offset) / p.scale);
  }

  p.base = n;  // sentinel
  for (std::size_t j = 0; j < n; ++j) {
    if (j != driven) {
      p.base = j;
      break;
    }
  }
  if (p.base == n) throw DegenerateGeometry("no grounded conductor available");

  for (std::size_t g = 0; g + 1 < n; ++g) {
    if (g != driven && g + 1 != driven) p.cgaps.push_back(g);
  }
  p.use_rho = (driven != 0 && driven != n - 1);
  return p;
}

MapIntegrand make_integrand(const MapProblem& p, const Eigen::VectorXd& u) {
  MapIntegrand f;
  f.roots = p.edges;
  for (std::size_t k = 0; k < p.cgaps.size(); ++k) f.zeros.push_back(u[k]);
  if (p.use_rho) f.inverse_zero = u[p.cgaps.size()];
  return f;
}

struct MapState {
  std::vector<std::complex<double>> w;  // per edge, prefix from the left
  Eigen::VectorXd residual;             // one entry per unknown
  double driven_potential = 0.0;        // includes sign
  double worst_ground = 0.0;            // max |ground potential| / |driven|
};

MapState evaluate(const MapProblem& p, const Eigen::VectorXd& u) {
  const MapIntegrand f = make_integrand(p, u);
  const std::size_t n_edges = p.edges.size();

  MapState st;
  st.w.assign(n_edges, 0.0);
  for (std::size_t s = 0; s + 1 < n_edges; ++s) {
    const auto seg =
        integrate_segment(f, p.edges[s], p.edges[s + 1], kQuadRelTol);
    st.w[s + 1] = st.w[s] + seg.value;
  }

  auto im_left = [&](std::size_t j) { return st.w[2 * j].imag(); };
  const double base_im = im_left(p.base);
  st.driven_potential = im_left(p.driven) - base_im;
  const double phi = std::abs(st.driven_potential);
  if (!(phi > 0.0)) {
    throw NumericalError("conformal map: vanishing driven potential");
  }

  st.residual.resize(static_cast<Eigen::Index>(p.n_unknowns()));
  for (std::size_t k = 0; k < p.cgaps.size(); ++k) {
    const std::size_t g = p.cgaps[k];
    // Gap increment between conductors g and g+1.
    st.residual[static_cast<Eigen::Index>(k)] =
        (st.w[2 * g + 2].imag() - st.w[2 * g + 1].imag()) / phi;
  }
  if (p.use_rho) {
    // Potential must return to ground level after passing the driven strip:
    // the two adjacent gap increments cancel.
    const std::size_t d = p.driven;
    const double rise = st.w[2 * d].imag() - st.w[2 * d - 1].imag();
    const double fall = st.w[2 * d + 2].imag() - st.w[2 * d + 1].imag();
    st.residual[static_cast<Eigen::Index>(p.cgaps.size())] = (rise + fall) / phi;
  }

  for (std::size_t j = 0; j < p.n_cond; ++j) {
    if (j == p.driven) continue;
    st.worst_ground =
        std::max(st.worst_ground, std::abs(im_left(j) - base_im) / phi);
  }
  return st;
}

struct Bounds {
  Eigen::VectorXd lo, hi;
};

Bounds unknown_bounds(const MapProblem& p) {
  const std::size_t m = p.n_unknowns();
  Bounds b;
  b.lo.resize(static_cast<Eigen::Index>(m));
  b.hi.resize(static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < p.cgaps.size(); ++k) {
    const std::size_t g = p.cgaps[k];
    const double lo = p.right_edge(g);
    const double hi = p.left_edge(g + 1);
    const double margin = 1e-9 * (hi - lo);
    b.lo[static_cast<Eigen::Index>(k)] = lo + margin;
    b.hi[static_cast<Eigen::Index>(k)] = hi - margin;
  }
  if (p.use_rho) {
    // Keep the reversal abscissa 1/rho outside the outer conductor edges.
    const double far_left = p.edges.front();
    const double far_right = p.edges.back();
    const auto k = static_cast<Eigen::Index>(p.cgaps.size());
    b.lo[k] = (1.0 - 1e-9) / far_left;
    b.hi[k] = (1.0 - 1e-9) / far_right;
  }
  return b;
}

Eigen::VectorXd initial_guess(const MapProblem& p) {
  Eigen::VectorXd u(static_cast<Eigen::Index>(p.n_unknowns()));
  for (std::size_t k = 0; k < p.cgaps.size(); ++k) {
    const std::size_t g = p.cgaps[k];
    u[static_cast<Eigen::Index>(k)] =
        0.5 * (p.right_edge(g) + p.left_edge(g + 1));
  }
  if (p.use_rho) u[static_cast<Eigen::Index>(p.cgaps.size())] = 0.0;
  return u;
}

Eigen::VectorXd clamp_to(const Bounds& b, Eigen::VectorXd u) {
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    u[k] = std::clamp(u[k], b.lo[k], b.hi[k]);
  }
  return u;
}

constexpr double kResidualTol = 1e-10;

bool newton_solve(const MapProblem& p, const Bounds& b, Eigen::VectorXd& u,
                  MapState& st) {
  const auto m = static_cast<Eigen::Index>(p.n_unknowns());
  st = evaluate(p, u);
  for (int iter = 0; iter < 50; ++iter) {
    const double rnorm = st.residual.cwiseAbs().maxCoeff();
    if (rnorm < kResidualTol) return true;

    Eigen::MatrixXd jac(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const double span = b.hi[k] - b.lo[k];
      const double h = 1e-6 * span;
      Eigen::VectorXd up = u, dn = u;
      up[k] = std::min(u[k] + h, b.hi[k]);
      dn[k] = std::max(u[k] - h, b.lo[k]);
      const MapState sp = evaluate(p, up);
      const MapState sd = evaluate(p, dn);
      jac.col(k) = (sp.residual - sd.residual) / (up[k] - dn[k]);
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) return false;
    const Eigen::VectorXd step = lu.solve(-st.residual);

    double lambda = 1.0;
    bool improved = false;
    for (int half = 0; half < 12; ++half) {
      const Eigen::VectorXd cand = clamp_to(b, u + lambda * step);
      const MapState sc = evaluate(p, cand);
      if (sc.residual.cwiseAbs().maxCoeff() < rnorm) {
        u = cand;
        st = sc;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) return false;
  }
  return st.residual.cwiseAbs().maxCoeff() < kResidualTol;
}

// Coordinatewise bisection fallback: each partition point is bracketed by
// its own gap (the gap increment is monotone in it), the outer parameter by
// its admissible interval.
bool bisection_solve(const MapProblem& p, const Bounds& b, Eigen::VectorXd& u,
                     MapState& st) {
  const auto m = static_cast<Eigen::Index>(p.n_unknowns());
  for (int sweep = 0; sweep < 200; ++sweep) {
    st = evaluate(p, u);
    if (st.residual.cwiseAbs().maxCoeff() < kResidualTol) return true;
    for (Eigen::Index k = 0; k < m; ++k) {
      double lo = b.lo[k], hi = b.hi[k];
      auto res_at = [&](double v) {
        Eigen::VectorXd uu = u;
        uu[k] = v;
        return evaluate(p, uu).residual[k];
      };
      double rlo = res_at(lo), rhi = res_at(hi);
      if (rlo * rhi > 0.0) continue;  // no bracket; leave to other sweeps
      for (int it = 0; it < 80; ++it) {
        const double midv = 0.5 * (lo + hi);
        const double rm = res_at(midv);
        if (rm == 0.0) {
          lo = hi = midv;
          break;
        }
        if (rlo * rm < 0.0) {
          hi = midv;
          rhi = rm;
        } else {
          lo = midv;
          rlo = rm;
        }
      }
      u[k] = 0.5 * (lo + hi);
    }
  }
  st = evaluate(p, u);
  return st.residual.cwiseAbs().maxCoeff() < kResidualTol;
}

}  // namespace

std::complex<double> hyperelliptic_integral(const MapIntegrand& f, double x0,
                                            double x1, double rel_tol) {
  if (!(x0 < x1)) throw NumericalError("hyperelliptic_integral: empty interval");
  const double span = f.roots.empty() ? (x1 - x0)
                                      : (f.roots.back() - f.roots.front());
  const double tol = 1e-12 * span;
  // Snap to the stored root values so the exact comparisons used when
  // absorbing the endpoint factors hold.
  auto snap = [&](double x) {
    for (double r : f.roots) {
      if (std::abs(x - r) <= tol) return r;
    }
    throw NumericalError(
        "hyperelliptic_integral: interval endpoints must be branch points");
  };
  x0 = snap(x0);
  x1 = snap(x1);
  for (double r : f.roots) {
    if (r > x0 + tol && r < x1 - tol) {
      throw NumericalError(
          "hyperelliptic_integral: branch point inside the interval");
    }
  }
  return integrate_segment(f, x0, x1, rel_tol).value;
}

MappingSolution solve_partition_points(const CrossSection& xs,
                                       std::size_t driven) {
  const MapProblem p = make_problem(xs, driven);
  const Bounds b = unknown_bounds(p);
  Eigen::VectorXd u = initial_guess(p);

  MapState st;
  if (p.n_unknowns() == 0) {
    st = evaluate(p, u);
  } else if (!newton_solve(p, b, u, st)) {
    u = initial_guess(p);
    if (!bisection_solve(p, b, u, st)) {
      std::ostringstream os;
      os << "solve_partition_points: residual " << st.worst_ground
         << " did not reach " << kResidualTol;
      throw NonConvergence(os.str());
    }
  }

  MappingSolution out;
  out.driven = driven;
  for (std::size_t k = 0; k < p.cgaps.size(); ++k) {
    out.partition_points.push_back(
        u[static_cast<Eigen::Index>(k)] * p.scale + p.offset);
    out.partition_gaps.push_back(p.cgaps[k]);
  }
  if (p.use_rho) {
    const double rho_n = u[static_cast<Eigen::Index>(p.cgaps.size())];
    // x_phys = x_norm * scale + offset, so a zero at x_norm = 1/rho_n sits at
    // that physical abscissa; report its reciprocal (0 stays "at infinity").
    out.outer_inverse_point =
        (rho_n == 0.0) ? 0.0 : 1.0 / (p.scale / rho_n + p.offset);
  }
  for (std::size_t j = 0; j < p.n_cond; ++j) {
    out.w_left.push_back(st.w[2 * j]);
    out.w_right.push_back(st.w[2 * j + 1]);
  }
  out.driven_potential = st.driven_potential;
  out.residual = st.worst_ground;
  return out;
}

PulMatrices extract_matrices(const CrossSection& xs) {
  xs.validate();
  const auto sig = xs.signal_indices();
  if (sig.empty()) throw DegenerateGeometry("no signal conductors");
  const auto n = static_cast<Eigen::Index>(sig.size());

  const double eps_scale = (xs.material.epsilon_r + 1.0) * kEps0;
  Eigen::MatrixXd cap(n, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    const MappingSolution sol = solve_partition_points(xs, sig[col]);
    for (Eigen::Index row = 0; row < n; ++row) {
      const std::size_t j = sig[row];
      const double d_re = (sol.w_right[j] - sol.w_left[j]).real();
      cap(row, col) = -eps_scale * d_re / sol.driven_potential;
    }
  }

  const double max_abs = cap.cwiseAbs().maxCoeff();
  const double asym = (cap - cap.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-6 * max_abs) {
    std::ostringstream os;
    os << "extract_matrices: capacitance asymmetry " << asym / max_abs
       << " exceeds 1e-6";
    throw AsymmetryTooLarge(os.str());
  }
  cap = 0.5 * (cap + cap.transpose()).eval();

  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(cap(i, i) > 0.0)) {
      throw NumericalError("extract_matrices: non-positive diagonal entry");
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && cap(i, j) > 1e-9 * max_abs) {
        throw NumericalError("extract_matrices: positive off-diagonal entry");
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cap);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw NumericalError("extract_matrices: capacitance not positive definite");
  }

  PulMatrices out;
  out.capacitance = cap;
  out.line_speed = xs.material.line_speed();
  // Same edge ratios with the magnetic scaling; equivalently L^-1 is
  // proportional to C, which enforces L C = c_l^-2 exactly.
  const double ind_scale =
      (1.0 / xs.material.mu_r + 1.0) / (kMu0 * eps_scale);
  out.inductance = (ind_scale * cap).inverse();
  for (std::size_t s : sig) {
    out.conductor_indices.push_back(s);
    out.roles.push_back(xs.conductors[s].role);
  }
  return out;
}

namespace {

Eigen::MatrixXd inductance_from_identity(const Eigen::MatrixXd& cap,
                                         double line_speed) {
  return cap.inverse() / (line_speed * line_speed);
}

}  // namespace

PulMatrices reduce_notch(const PulMatrices& pul3) {
  if (pul3.capacitance.rows() != 3) {
    throw DimensionMismatch("reduce_notch: expected a 3-conductor system");
  }
  PulMatrices out;
  out.line_speed = pul3.line_speed;
  Eigen::MatrixXd c(2, 2);
  c << pul3.capacitance(0, 0), pul3.capacitance(0, 2),
       pul3.capacitance(2, 0), pul3.capacitance(2, 2);
  out.capacitance = c;
  out.inductance = inductance_from_identity(c, pul3.line_speed);
  out.conductor_indices = {pul3.conductor_indices[0], pul3.conductor_indices[2]};
  out.roles = {pul3.roles[0], pul3.roles[2]};
  return out;
}

PulMatrices reduce_butt(const PulMatrices& pul3) {
  if (pul3.capacitance.rows() != 3) {
    throw DimensionMismatch("reduce_butt: expected a 3-conductor system");
  }
  const auto& c3 = pul3.capacitance;
  PulMatrices out;
  out.line_speed = pul3.line_speed;
  Eigen::MatrixXd c(2, 2);
  c << c3(0, 0) + c3(0, 2) + c3(2, 0) + c3(2, 2), c3(0, 1) + c3(2, 1),
       c3(1, 0) + c3(1, 2), c3(1, 1);
  out.capacitance = c;
  out.inductance = inductance_from_identity(c, pul3.line_speed);
  out.conductor_indices = {pul3.conductor_indices[0], pul3.conductor_indices[1]};
  out.roles = {pul3.roles[0], pul3.roles[1]};
  return out;
}

}  // namespace cpwkit
