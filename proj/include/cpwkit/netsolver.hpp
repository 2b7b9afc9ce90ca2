#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpwkit/mtl.hpp"

// Boundary-condition network model of a transmission-line coupled resonator:
// a two-conductor coupler section, a shorted and an open resonator section,
// input and output ports, and configurable resonator terminations. Resonance
// poles are the complex zeros of the determinant of the assembled matrix.

namespace cpwkit {

// Termination presets for the far ends of the shorted section (node 5) and
// the open section (node 6).
enum class TerminationCase {
  kShortOpen,   // (0, inf): quarter-wave resonator
  kShortShort,  // (0, 0): half-wave, shorted at both ends
  kOpenOpen,    // (inf, inf): half-wave, open at both ends
  kExplicit,    // finite (z_t1, z_t2)
};

struct NetworkSpec {
  CouplerModel coupler;        // coupler section: z_feed, z_res, kappa, l_c
  double z_resonator = 0.0;    // impedance of the plain resonator sections
  double length_short = 0.0;   // section between coupler and node 5 [m]
  double length_open = 0.0;    // section between coupler and node 6 [m]
  TerminationCase termination = TerminationCase::kShortOpen;
  std::complex<double> z_t1{0.0, 0.0};    // node-5 termination (kExplicit)
  std::complex<double> z_t2{0.0, 0.0};    // node-6 termination (kExplicit)
  std::complex<double> z_in{50.0, 0.0};   // port impedance at node 1
  std::complex<double> z_out{50.0, 0.0};  // port impedance at node 3

  double total_length() const;
  // Spacing of consecutive resonator poles, c_l / (2 l_total).
  double free_spectral_range() const;
  // Isolated-resonator resonance of mode p >= 1: (2p-1) c_l/(4 l) with one
  // shorted and one open end, 2p c_l/(4 l) for the two half-wave cases.
  // kExplicit uses the quarter-wave seed; pass a seed to find_pole to
  // override.
  double seed_frequency(int mode_number) const;
  void validate() const;  // throws ConfigError on out-of-range fields
};

// Number of unknowns of the assembled network (branch currents I_1..I_5 on
// both element sides, I_6, node voltages V_1..V_6, wave amplitudes A_1..A_10).
inline constexpr int kUnknownCount = 27;

struct BoundaryMatrix {
  Eigen::MatrixXcd m;         // row-scaled square system matrix
  Eigen::VectorXd row_scale;  // factor each raw row was divided by
  std::vector<std::string> labels;  // unknown name per column
  std::complex<double> phi_c{1.0, 0.0};  // coupler propagation phasor
  std::complex<double> phi_s{1.0, 0.0};  // shorted-section phasor
  std::complex<double> phi_o{1.0, 0.0};  // open-section phasor
};

// Determinant in mantissa-exponent form so products across 27 pivots and
// wide frequency sweeps can neither overflow nor underflow.
struct ScaledComplex {
  std::complex<double> mantissa{0.0, 0.0};  // |mantissa| in [0.5, 1) or 0
  long exponent = 0;                        // value = mantissa * 2^exponent

  std::complex<double> value() const;  // may overflow/underflow for large |e|
  double log10_abs() const;            // -inf when zero
  bool is_zero() const { return mantissa == std::complex<double>(0.0, 0.0); }
  void multiply(std::complex<double> factor);
  void multiply_power_of_two(long e) { exponent += e; }
};

// Builds the 27x27 boundary matrix at (possibly complex) frequency f. Every
// row is divided by its largest entry magnitude; the factors are kept in
// row_scale so determinant() can restore the unscaled value (the unscaled
// determinant is what stays analytic in f).
BoundaryMatrix assemble(const NetworkSpec& spec, std::complex<double> f);

// Plain scaled determinant of a square complex matrix via partially pivoted
// LU. Throws ExactSingular when a pivot is exactly zero.
ScaledComplex determinant(const Eigen::MatrixXcd& m);

// Determinant of the unscaled boundary matrix: det(bm.m) times the product
// of the row scales.
ScaledComplex determinant(const BoundaryMatrix& bm);

// Convenience: assemble at f and take the determinant.
ScaledComplex network_determinant(const NetworkSpec& spec,
                                  std::complex<double> f);

struct PoleResult {
  std::complex<double> f_p{0.0, 0.0};  // complex pole frequency [Hz]
  double f_r = 0.0;                    // Re f_p
  double q_l = 0.0;                    // |Re f_p / (2 Im f_p)|, inf if lossless
  int mode_number = 0;
  bool converged = false;
  // |det| at the pole relative to |det| one derivative step away; small
  // when the zero has actually been hit.
  double residual = 0.0;
};

// Newton search for the p-th resonance pole in the complex plane, seeded at
// seed_frequency(p) (or seed_hint when positive), with a coarse scan across
// one free spectral range as fallback. Throws NonConvergence after 100
// iterations without convergence and WrongBasin when the converged pole lies
// more than half a free spectral range from the seed.
PoleResult find_pole(const NetworkSpec& spec, int mode_number,
                     double seed_hint = 0.0);

// Zeroth-order standing-wave condition of the feedline between mismatched
// ports: Z_f (Z_i + Z_o) cos(theta) - i (Z_f^2 + Z_i Z_o) sin(theta), where
// theta is the electrical length of the coupler section. Zeros are feedline
// poles; with matched ports the expression is 2 Z_f^2 e^{-i theta} and never
// vanishes.
std::complex<double> feedline_pole_condition(const NetworkSpec& spec,
                                             std::complex<double> theta);

struct ScatteringResult {
  std::complex<double> reflection;    // outgoing amplitude at the fed port
  std::complex<double> transmission;  // outgoing amplitude at the other port
};

// Solves the network with a unit incoming wave at in_port (1 = node 1 with
// z_in, 2 = node 3 with z_out). Transmission is normalized with
// sqrt(Re Z_other / Re Z_in) so that |reflection|^2 + |transmission|^2 = 1
// for the lossless network. Throws OnPole if the matrix is exactly singular.
ScatteringResult scattering(const NetworkSpec& spec, double f, int in_port = 1);

}  // namespace cpwkit
