#include "cpwkit/geometry.hpp"

#include <cmath>
#include <sstream>

#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {

double MaterialHalfSpaces::line_speed() const {
  const double cap_scale = (epsilon_r + 1.0) * kEps0;
  const double ind_scale = kMu0 / (1.0 / mu_r + 1.0);
  return 1.0 / std::sqrt(cap_scale * ind_scale);
}

void CrossSection::validate() const {
  if (conductors.empty()) {
    throw DegenerateGeometry("cross-section has no conductors");
  }
  if (material.epsilon_r < 1.0 || material.mu_r <= 0.0) {
    throw DegenerateGeometry("invalid material parameters");
  }
  for (std::size_t j = 0; j < conductors.size(); ++j) {
    if (!(conductors[j].width() > 0.0)) {
      std::ostringstream os;
      os << "conductor " << j << " has non-positive width";
      throw DegenerateGeometry(os.str());
    }
    if (j > 0 && !(conductors[j].left > conductors[j - 1].right)) {
      std::ostringstream os;
      os << "conductors " << j - 1 << " and " << j
         << " overlap or touch (gap must be positive)";
      throw DegenerateGeometry(os.str());
    }
  }
}

std::vector<std::size_t> CrossSection::signal_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < conductors.size(); ++j) {
    if (conductors[j].role != ConductorRole::kGround) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> CrossSection::ground_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < conductors.size(); ++j) {
    if (conductors[j].role == ConductorRole::kGround) out.push_back(j);
  }
  return out;
}

double CrossSection::structure_width() const {
  if (conductors.empty()) return 0.0;
  // Skip the truncated outer ground planes when they are first/last; the
  // interesting span is the signal region between their inner edges.
  std::size_t lo = 0;
  std::size_t hi = conductors.size() - 1;
  double left = conductors[lo].left;
  double right = conductors[hi].right;
  if (conductors.size() > 2) {
    if (conductors[lo].role == ConductorRole::kGround) left = conductors[lo].right;
    if (conductors[hi].role == ConductorRole::kGround) right = conductors[hi].left;
  }
  return right - left;
}

CrossSection make_cross_section(const std::vector<double>& widths,
                                const std::vector<double>& gaps,
                                const std::vector<ConductorRole>& roles,
                                const MaterialHalfSpaces& material,
                                double ground_plane_extent) {
  if (widths.size() != roles.size()) {
    throw DimensionMismatch("widths and roles must have the same length");
  }
  if (!widths.empty() && gaps.size() != widths.size() - 1) {
    throw DimensionMismatch("need exactly one gap between consecutive conductors");
  }

  // First pass with placeholder outer-ground widths to find the structure span.
  double inner_span = 0.0;
  for (std::size_t j = 0; j < widths.size(); ++j) {
    const bool outer_ground =
        (j == 0 || j + 1 == widths.size()) && roles[j] == ConductorRole::kGround;
    if (!(outer_ground && widths[j] == 0.0)) inner_span += widths[j];
  }
  for (double g : gaps) inner_span += g;

  double extent = ground_plane_extent;
  if (extent <= 0.0) extent = 100.0 * inner_span;

  std::vector<double> w = widths;
  if (!w.empty() && roles.front() == ConductorRole::kGround && w.front() == 0.0) {
    w.front() = extent;
  }
  if (w.size() > 1 && roles.back() == ConductorRole::kGround && w.back() == 0.0) {
    w.back() = extent;
  }

  double total = 0.0;
  for (double x : w) total += x;
  for (double g : gaps) total += g;

  CrossSection xs;
  xs.material = material;
  xs.ground_plane_extent = extent;
  double x = -0.5 * total;
  for (std::size_t j = 0; j < w.size(); ++j) {
    Conductor c;
    c.left = x;
    c.right = x + w[j];
    c.role = roles[j];
    xs.conductors.push_back(c);
    x = c.right;
    if (j < gaps.size()) x += gaps[j];
  }
  xs.validate();
  return xs;
}

std::string role_name(ConductorRole role) {
  switch (role) {
    case ConductorRole::kGround: return "ground";
    case ConductorRole::kFeedline: return "feedline";
    case ConductorRole::kStrip: return "strip";
    case ConductorRole::kResonator: return "resonator";
  }
  return "unknown";
}

}  // namespace cpwkit
