#pragma once

#include <string>
#include <vector>

// Cross-section description of a planar multiconductor line: coplanar metal
// strips on the interface between a dielectric lower half-space and vacuum.

namespace cpwkit {

// Upper half-space is vacuum, lower half-space is the substrate. Because the
// conductor plane is the symmetry plane of the two half-problems, every
// capacitance scales with (epsilon_r + 1) and every inverse inductance with
// (1/mu_r + 1); the TEM phase velocity below follows from that pair.
struct MaterialHalfSpaces {
  double epsilon_r = 1.0;  // substrate relative permittivity
  double mu_r = 1.0;       // substrate relative permeability

  double eps_eff() const { return 0.5 * (epsilon_r + 1.0); }
  // Propagation speed of the TEM modes on the interface.
  double line_speed() const;
};

enum class ConductorRole {
  kGround,     // eliminated from the extracted matrices
  kFeedline,   // signal conductor carrying the feed wave
  kStrip,      // auxiliary signal conductor (e.g. coupling electrode)
  kResonator,  // signal conductor forming the resonator
};

struct Conductor {
  double left = 0.0;   // x-coordinate of the left edge [m]
  double right = 0.0;  // x-coordinate of the right edge [m]
  ConductorRole role = ConductorRole::kGround;

  double width() const { return right - left; }
};

struct CrossSection {
  std::vector<Conductor> conductors;  // ordered left to right, disjoint
  MaterialHalfSpaces material;
  // Width used for the truncated representation of the semi-infinite outer
  // ground planes. Zero means "chosen by the builder" (100x structure width).
  double ground_plane_extent = 0.0;

  // Throws DegenerateGeometry on overlapping conductors, non-positive widths
  // or gaps, or an empty conductor list.
  void validate() const;

  std::vector<std::size_t> signal_indices() const;
  std::vector<std::size_t> ground_indices() const;
  // Span between the outermost signal-adjacent edges; used to pick default
  // ground plane truncation and FD oracle boxes.
  double structure_width() const;
};

// Builds a cross-section from widths and gaps (all in metres), centred at
// x = 0. "roles" must have one entry per width. If the first/last role is
// kGround and its width is zero, the ground plane is synthesised with the
// requested extent (0 -> 100x the structure width).
CrossSection make_cross_section(const std::vector<double>& widths,
                                const std::vector<double>& gaps,
                                const std::vector<ConductorRole>& roles,
                                const MaterialHalfSpaces& material,
                                double ground_plane_extent = 0.0);

std::string role_name(ConductorRole role);

}  // namespace cpwkit
