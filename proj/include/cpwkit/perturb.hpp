#pragma once

#include <complex>

#include "cpwkit/netsolver.hpp"

namespace cpwkit {

// Electrical phase angles of the unperturbed (decoupled) resonance.
struct PhaseVariables {
  double theta = 0.0;  // coupler section phase [rad]
  double psi = 0.0;    // coupler plus twice the open-side section [rad]
  int mode_number = 0;
  double fr0 = 0.0;  // decoupled resonance frequency [Hz]
};

PhaseVariables phase_variables(const NetworkSpec& spec, int mode_number);

enum class DerivativeRoute {
  kClosedForm,        // analytic expressions per termination case
  kFiniteDifference,  // central differences on the assembled determinant
};

// Derivatives of the network determinant at the decoupled operating point
// (kappa = 0, coupler resonator impedance equal to the bare resonator
// impedance, frequency at the decoupled resonance).
//
// The two routes normalize the determinant differently, so the raw
// derivatives carry route-dependent constant factors. The ratios against
// d_f are normalization-free and are the quantities the perturbation
// expansion consumes.
struct DeterminantDerivatives {
  std::complex<double> d_f;       // d Delta / d f
  std::complex<double> d_z2;      // d Delta / d Z2
  std::complex<double> d2_kappa;  // d^2 Delta / d kappa^2
  PhaseVariables phase;

  std::complex<double> ratio_kappa() const { return d2_kappa / d_f; }
  std::complex<double> ratio_z() const { return d_z2 / d_f; }
};

DeterminantDerivatives determinant_derivatives(
    const NetworkSpec& spec, int mode_number,
    DerivativeRoute route = DerivativeRoute::kClosedForm);

// First-order pole displacement driven by the coupling strength and by the
// impedance step of the resonator conductor inside the coupler.
struct PerturbationResult {
  std::complex<double> frequency_shift;  // complex pole shift [Hz]
  double f_r = 0.0;        // shifted resonance frequency [Hz]
  double q_external = 0.0; // infinite when the shift is purely real
  double inv_q = 0.0;      // 1 / q_external
  PhaseVariables phase;
};

// Works for any port impedances. Closed-form route rejects explicit
// terminations (CaseUnsupported); the finite-difference route handles them.
PerturbationResult shift_general(
    const NetworkSpec& spec, int mode_number,
    DerivativeRoute route = DerivativeRoute::kClosedForm);

// Specialized expressions valid when both ports match the feedline
// impedance; throws NotMatched otherwise.
PerturbationResult shift_and_q_matched(const NetworkSpec& spec,
                                       int mode_number);

}  // namespace cpwkit
