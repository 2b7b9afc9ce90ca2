#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cpwkit/geometry.hpp"
#include "cpwkit/netsolver.hpp"
#include "cpwkit/perturb.hpp"
#include "cpwkit/resfit.hpp"

// JSON design configuration (lengths in micrometres, impedances in ohms)
// and the end-to-end workflows behind the command-line tool: cross-section
// extraction, quality-factor pipeline, parameter sweeps, scattering traces,
// and trace fitting. All parse and validation failures throw ConfigError
// with a dotted field path.

namespace cpwkit {

struct CrossSectionConfig {
  std::vector<double> widths_um;
  std::vector<double> gaps_um;
  std::vector<ConductorRole> roles;
  MaterialHalfSpaces material;
};

struct LengthsConfig {
  double coupler_um = 0.0;
  double shorted_um = 0.0;
  double open_um = 0.0;
};

struct SweepConfig {
  std::string parameter;  // w<k>, s<k> (1-based, um), l_c, l_s, l_o (um),
                          // or kappa
  double start = 0.0;
  double stop = 0.0;
  int count = 0;
};

struct SparConfig {
  double f_start_hz = 0.0;  // zero selects an automatic window around f_r
  double f_stop_hz = 0.0;
  int count = 401;
  int in_port = 1;
  double linewidths = 10.0;  // half-width of the automatic window
};

struct FitConfig {
  std::string trace;  // file or directory; relative to the config file
  std::string format = "reim";  // or "magphase"
};

struct DesignConfig {
  std::optional<CrossSectionConfig> cross_section;
  std::optional<LengthsConfig> lengths;
  TerminationCase termination = TerminationCase::kShortOpen;
  std::complex<double> z_t1{0.0, 0.0};
  std::complex<double> z_t2{0.0, 0.0};
  // Port impedances; unset means matched to the extracted feedline impedance.
  std::optional<std::complex<double>> z_in;
  std::optional<std::complex<double>> z_out;
  int mode_number = 1;
  std::optional<double> kappa_override;
  std::optional<SweepConfig> sweep;
  SparConfig spar;
  std::optional<FitConfig> fit_config;
  std::string base_directory;  // directory of the config file, for paths
};

DesignConfig parse_config_text(const std::string& text,
                               const std::string& origin);
DesignConfig load_config(const std::string& path);

// Normalized JSON echo of a configuration; parse_config_text on the result
// reproduces the same configuration.
std::string config_json(const DesignConfig& config);

struct ExtractReport {
  Eigen::Matrix2d capacitance;  // coupler section, {feed, resonator} [F/m]
  Eigen::Matrix2d inductance;   // [H/m]
  CouplerModel coupler;         // z_feed (Z1), z_res (Z2), kappa
  double z_resonator = 0.0;     // isolated resonator line impedance [ohm]
  double epsilon_eff = 0.0;
  double line_speed = 0.0;  // [m/s]
  double fr0 = 0.0;         // decoupled resonance of the requested mode [Hz]
  NetworkSpec network;
};

ExtractReport run_extract(const DesignConfig& config);

struct QFactorReport {
  ExtractReport extract;
  double f_r_pole = 0.0;  // numeric pole [Hz]
  double q_l_pole = 0.0;
  PerturbationResult perturbation;
  std::string route;  // matched | general | finite_difference
  bool decoupled = false;
  double q_rel_deviation = 0.0;
  double f_rel_deviation = 0.0;
};

QFactorReport run_qfactor(const DesignConfig& config);

struct SweepPoint {
  double value = 0.0;  // swept parameter value (um or dimensionless)
  QFactorReport report;
};

std::vector<double> sweep_values(const SweepConfig& sweep);
std::vector<SweepPoint> run_sweep(const DesignConfig& config,
                                  int parallel_workers);

struct SparPoint {
  double f_hz = 0.0;
  std::complex<double> s11;
  std::complex<double> s21;
};

std::vector<SparPoint> run_spar(const DesignConfig& config,
                                int parallel_workers);

struct FitRecord {
  std::string file;
  FitResult result;
};

// Fits one trace file, or every *.csv in a directory (sorted by name).
std::vector<FitRecord> run_fit(const DesignConfig& config,
                               int parallel_workers);

// Report serialization. JSON output is deterministic for identical inputs
// except the generated_at timestamp; CSV output carries no timestamp.
std::string extract_json(const DesignConfig& config,
                         const ExtractReport& report);
std::string qfactor_json(const DesignConfig& config,
                         const QFactorReport& report);
std::string sweep_json(const DesignConfig& config,
                       const std::vector<SweepPoint>& points);
std::string sweep_csv(const DesignConfig& config,
                      const std::vector<SweepPoint>& points);
std::string spar_json(const DesignConfig& config,
                      const std::vector<SparPoint>& points);
std::string spar_csv(const std::vector<SparPoint>& points);
std::string fit_json(const std::vector<FitRecord>& records);

}  // namespace cpwkit
