#include "oracles/fd_laplace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cpwkit/constants.hpp"

namespace cpwkit::oracle {

namespace {

struct Grid {
  int nx = 0;
  int ny = 0;           // ny even; interface row at ny/2
  double h = 0.0;
  double x0 = 0.0;      // x of node i=0
  int jif = 0;          // interface row index
  std::vector<double> phi;
  std::vector<unsigned char> fixed;          // Dirichlet mask
  std::vector<std::pair<int, int>> strips;   // node ranges per conductor

  int idx(int i, int j) const { return j * nx + i; }
};

Grid build_grid(const CrossSection& xs, std::size_t driven, int nx, int ny,
                double box_width) {
  Grid g;
  g.nx = nx;
  g.ny = ny;
  g.jif = ny / 2;
  g.h = box_width / (nx - 1);
  g.x0 = -0.5 * box_width;
  g.phi.assign(static_cast<std::size_t>(nx) * ny, 0.0);
  g.fixed.assign(static_cast<std::size_t>(nx) * ny, 0);

  // Box walls grounded.
  for (int i = 0; i < nx; ++i) {
    g.fixed[g.idx(i, 0)] = 1;
    g.fixed[g.idx(i, ny - 1)] = 1;
  }
  for (int j = 0; j < ny; ++j) {
    g.fixed[g.idx(0, j)] = 1;
    g.fixed[g.idx(nx - 1, j)] = 1;
  }

  for (std::size_t c = 0; c < xs.conductors.size(); ++c) {
    const auto& cond = xs.conductors[c];
    int ia = static_cast<int>(std::lround((cond.left - g.x0) / g.h));
    int ib = static_cast<int>(std::lround((cond.right - g.x0) / g.h));
    ia = std::clamp(ia, 0, nx - 1);
    ib = std::clamp(ib, 0, nx - 1);
    if (ib <= ia) throw std::runtime_error("fd oracle: conductor thinner than a cell");
    g.strips.emplace_back(ia, ib);
    const double v = (c == driven) ? 1.0 : 0.0;
    for (int i = ia; i <= ib; ++i) {
      g.fixed[g.idx(i, g.jif)] = 1;
      g.phi[g.idx(i, g.jif)] = v;
    }
  }
  return g;
}

// Red-black SOR. Bulk nodes use the plain 5-point average; interface nodes
// weight the side neighbours by the mean permittivity of the two media.
int relax(Grid& g, double eps_r, double charge_tol, int max_sweeps,
          const std::pair<int, int>& driven_strip) {
  const int nx = g.nx;
  const int ny = g.ny;
  const int jif = g.jif;
  const double omega = 2.0 / (1.0 + std::sin(kPi / std::max(nx, ny)));
  const double wside = 0.5 * (1.0 + eps_r);
  const double wsum_if = 1.0 + eps_r + 2.0 * wside;

  auto driven_charge = [&]() {
    // Discrete Gauss box one cell outside the strip. Relative changes are
    // all that matters here, so the eps0 scale is dropped.
    double q = 0.0;
    const auto [ia, ib] = driven_strip;
    for (int i = ia; i <= ib; ++i) {
      q += 1.0 * (g.phi[g.idx(i, jif)] - g.phi[g.idx(i, jif + 1)]);
      q += eps_r * (g.phi[g.idx(i, jif)] - g.phi[g.idx(i, jif - 1)]);
    }
    if (ia > 0) q += wside * (g.phi[g.idx(ia, jif)] - g.phi[g.idx(ia - 1, jif)]);
    if (ib < nx - 1) q += wside * (g.phi[g.idx(ib, jif)] - g.phi[g.idx(ib + 1, jif)]);
    return q;
  };

  double q_prev = driven_charge();
  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    for (int colour = 0; colour < 2; ++colour) {
      for (int j = 1; j < ny - 1; ++j) {
        double* row = g.phi.data() + static_cast<std::size_t>(j) * nx;
        const double* rup = row + nx;
        const double* rdn = row - nx;
        const unsigned char* fx = g.fixed.data() + static_cast<std::size_t>(j) * nx;
        const int start = 1 + ((j + colour) & 1);
        if (j != jif) {
          for (int i = start; i < nx - 1; i += 2) {
            if (fx[i]) continue;
            const double avg = 0.25 * (row[i - 1] + row[i + 1] + rup[i] + rdn[i]);
            row[i] += omega * (avg - row[i]);
          }
        } else {
          for (int i = start; i < nx - 1; i += 2) {
            if (fx[i]) continue;
            const double avg = (wside * (row[i - 1] + row[i + 1]) + rup[i] +
                                eps_r * rdn[i]) /
                               wsum_if;
            row[i] += omega * (avg - row[i]);
          }
        }
      }
    }
    if ((sweep + 1) % 50 == 0) {
      const double q = driven_charge();
      if (std::abs(q - q_prev) <= charge_tol * std::abs(q)) return sweep + 1;
      q_prev = q;
    }
  }
  return sweep;
}

void prolongate(const Grid& coarse, Grid& fine) {
  const double sx = static_cast<double>(coarse.nx - 1) / (fine.nx - 1);
  const double sy = static_cast<double>(coarse.ny - 1) / (fine.ny - 1);
  for (int j = 0; j < fine.ny; ++j) {
    const double yc = j * sy;
    const int j0 = std::min(static_cast<int>(yc), coarse.ny - 2);
    const double fy = yc - j0;
    for (int i = 0; i < fine.nx; ++i) {
      if (fine.fixed[fine.idx(i, j)]) continue;
      const double xc = i * sx;
      const int i0 = std::min(static_cast<int>(xc), coarse.nx - 2);
      const double fxw = xc - i0;
      const double v00 = coarse.phi[coarse.idx(i0, j0)];
      const double v10 = coarse.phi[coarse.idx(i0 + 1, j0)];
      const double v01 = coarse.phi[coarse.idx(i0, j0 + 1)];
      const double v11 = coarse.phi[coarse.idx(i0 + 1, j0 + 1)];
      fine.phi[fine.idx(i, j)] = (1 - fy) * ((1 - fxw) * v00 + fxw * v10) +
                                 fy * ((1 - fxw) * v01 + fxw * v11);
    }
  }
}

}  // namespace

FdSolution solve_driven(const CrossSection& xs, std::size_t driven,
                        const FdOptions& opt) {
  xs.validate();
  if (driven >= xs.conductors.size()) {
    throw std::runtime_error("fd oracle: driven index out of range");
  }
  double box = opt.box_width;
  if (box <= 0.0) box = 6.0 * xs.structure_width();
  const double eps_r = xs.material.epsilon_r;

  // Nested grids: solve coarse first, interpolate up. Each level re-snaps
  // the conductors, so the fine-level geometry is never degraded.
  std::vector<std::pair<int, int>> levels;
  int nx = opt.nx, ny = opt.ny;
  while (nx >= 256 && ny >= 128 && nx % 2 == 0 && ny % 2 == 0) {
    levels.emplace_back(nx, ny);
    nx /= 2;
    ny /= 2;
  }
  levels.emplace_back(nx, ny);
  std::reverse(levels.begin(), levels.end());

  Grid g;
  int fine_sweeps = 0;
  for (std::size_t lv = 0; lv < levels.size(); ++lv) {
    Grid next = build_grid(xs, driven, levels[lv].first, levels[lv].second, box);
    if (lv > 0) prolongate(g, next);
    g = std::move(next);
    const double tol = (lv + 1 == levels.size()) ? opt.charge_tol : 10.0 * opt.charge_tol;
    fine_sweeps = relax(g, eps_r, tol, opt.max_sweeps, g.strips[driven]);
  }

  FdSolution out;
  out.grid_spacing = g.h;
  out.sweeps = fine_sweeps;

  const int jif = g.jif;
  const double eps_edge_side = 0.5 * (1.0 + eps_r) * kEps0;
  for (const auto& [ia, ib] : g.strips) {
    double q = 0.0;
    for (int i = ia; i <= ib; ++i) {
      q += kEps0 * (g.phi[g.idx(i, jif)] - g.phi[g.idx(i, jif + 1)]);
      q += eps_r * kEps0 * (g.phi[g.idx(i, jif)] - g.phi[g.idx(i, jif - 1)]);
    }
    if (ia > 0)
      q += eps_edge_side * (g.phi[g.idx(ia, jif)] - g.phi[g.idx(ia - 1, jif)]);
    if (ib < g.nx - 1)
      q += eps_edge_side * (g.phi[g.idx(ib, jif)] - g.phi[g.idx(ib + 1, jif)]);
    out.charges.push_back(q);
  }

  // E_x sign changes on the interface, inside the gaps between conductors.
  for (std::size_t c = 0; c + 1 < g.strips.size(); ++c) {
    const int ia = g.strips[c].second + 2;
    const int ib = g.strips[c + 1].first - 2;
    double prev_ex = 0.0;
    bool have_prev = false;
    for (int i = ia; i <= ib; ++i) {
      const double ex = g.phi[g.idx(i - 1, jif)] - g.phi[g.idx(i + 1, jif)];
      if (have_prev && prev_ex * ex < 0.0) {
        const double frac = prev_ex / (prev_ex - ex);
        out.sign_changes.push_back(g.x0 + (i - 1 + frac) * g.h);
      }
      if (ex != 0.0) {
        prev_ex = ex;
        have_prev = true;
      }
    }
  }
  return out;
}

Eigen::MatrixXd capacitance_matrix(const CrossSection& xs, const FdOptions& opt) {
  const auto sig = xs.signal_indices();
  Eigen::MatrixXd c(sig.size(), sig.size());
  for (std::size_t col = 0; col < sig.size(); ++col) {
    const FdSolution sol = solve_driven(xs, sig[col], opt);
    for (std::size_t row = 0; row < sig.size(); ++row) {
      c(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col)) =
          sol.charges[sig[row]];
    }
  }
  // Column solves are independent, so symmetry is a quality check for the
  // caller; the raw matrix is returned untouched.
  return c;
}

}  // namespace cpwkit::oracle
