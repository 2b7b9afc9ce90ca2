#include "cpwkit/config.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "cpwkit/conformal.hpp"
#include "cpwkit/constants.hpp"
#include "cpwkit/errors.hpp"

namespace cpwkit {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kMicron = 1e-6;

std::string joined(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

[[noreturn]] void missing(const std::string& path) {
  throw ConfigError("missing required field: " + path);
}

const ordered_json& require_field(const ordered_json& obj,
                                  const std::string& key,
                                  const std::string& parent) {
  const auto it = obj.find(key);
  if (it == obj.end()) missing(joined(parent, key));
  return *it;
}

const ordered_json& require_object(const ordered_json& j,
                                   const std::string& path) {
  if (!j.is_object()) throw ConfigError("field " + path + " must be an object");
  return j;
}

double as_number(const ordered_json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError("field " + path + " must be a number");
  return j.get<double>();
}

int as_integer(const ordered_json& j, const std::string& path) {
  if (!j.is_number_integer())
    throw ConfigError("field " + path + " must be an integer");
  return j.get<int>();
}

std::string as_string(const ordered_json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError("field " + path + " must be a string");
  return j.get<std::string>();
}

std::vector<double> as_number_array(const ordered_json& j,
                                    const std::string& path) {
  if (!j.is_array())
    throw ConfigError("field " + path + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw ConfigError("field " + path + "[" + std::to_string(i) +
                        "] must be a number");
    out.push_back(j[i].get<double>());
  }
  return out;
}

// Impedances may be given as a plain number (real) or as a [re, im] pair.
std::complex<double> as_complex(const ordered_json& j, const std::string& path) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number())
    return {j[0].get<double>(), j[1].get<double>()};
  throw ConfigError("field " + path +
                    " must be a number or a [re, im] pair of numbers");
}

ConductorRole parse_role(const ordered_json& j, const std::string& path) {
  const std::string s = as_string(j, path);
  if (s == "ground") return ConductorRole::kGround;
  if (s == "feedline") return ConductorRole::kFeedline;
  if (s == "strip") return ConductorRole::kStrip;
  if (s == "resonator") return ConductorRole::kResonator;
  throw ConfigError("field " + path +
                    " must be one of ground, feedline, strip, resonator");
}

TerminationCase parse_termination(const ordered_json& j,
                                  const std::string& path) {
  const std::string s = as_string(j, path);
  if (s == "short_open") return TerminationCase::kShortOpen;
  if (s == "short_short") return TerminationCase::kShortShort;
  if (s == "open_open") return TerminationCase::kOpenOpen;
  if (s == "explicit") return TerminationCase::kExplicit;
  throw ConfigError("field " + path +
                    " must be one of short_open, short_short, open_open, "
                    "explicit");
}

std::string termination_name(TerminationCase tc) {
  switch (tc) {
    case TerminationCase::kShortOpen: return "short_open";
    case TerminationCase::kShortShort: return "short_short";
    case TerminationCase::kOpenOpen: return "open_open";
    case TerminationCase::kExplicit: return "explicit";
  }
  return "unknown";
}

void reject_unknown_keys(const ordered_json& obj,
                         std::initializer_list<const char*> known,
                         const std::string& parent) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end())
      throw ConfigError("unknown field: " + joined(parent, key));
  }
}

CrossSectionConfig parse_cross_section(const ordered_json& cs,
                                       const ordered_json& root) {
  require_object(cs, "cross_section");
  reject_unknown_keys(cs, {"widths_um", "gaps_um", "roles"}, "cross_section");
  CrossSectionConfig out;
  out.widths_um =
      as_number_array(require_field(cs, "widths_um", "cross_section"),
                      "cross_section.widths_um");
  out.gaps_um = as_number_array(require_field(cs, "gaps_um", "cross_section"),
                                "cross_section.gaps_um");
  const auto& roles = require_field(cs, "roles", "cross_section");
  if (!roles.is_array())
    throw ConfigError("field cross_section.roles must be an array of strings");
  for (std::size_t i = 0; i < roles.size(); ++i)
    out.roles.push_back(parse_role(
        roles[i], "cross_section.roles[" + std::to_string(i) + "]"));

  if (out.widths_um.size() < 3)
    throw ConfigError("cross_section.widths_um needs at least 3 entries");
  if (out.gaps_um.size() + 1 != out.widths_um.size())
    throw ConfigError(
        "cross_section.gaps_um must have exactly one entry fewer than "
        "widths_um");
  if (out.roles.size() != out.widths_um.size())
    throw ConfigError(
        "cross_section.roles must have one entry per widths_um entry");
  if (out.roles.front() != ConductorRole::kGround ||
      out.roles.back() != ConductorRole::kGround)
    throw ConfigError(
        "cross_section.roles must start and end with ground planes");
  const auto count = [&](ConductorRole r) {
    return std::count(out.roles.begin(), out.roles.end(), r);
  };
  if (count(ConductorRole::kFeedline) != 1 ||
      count(ConductorRole::kResonator) != 1)
    throw ConfigError(
        "cross_section.roles must contain exactly one feedline and exactly "
        "one resonator");

  const auto& mat =
      require_object(require_field(root, "material", ""), "material");
  reject_unknown_keys(mat, {"epsilon_r", "epsilon_eff", "mu_r"}, "material");
  const bool has_r = mat.contains("epsilon_r");
  const bool has_eff = mat.contains("epsilon_eff");
  if (has_r == has_eff)
    throw ConfigError(
        "material must set exactly one of epsilon_r and epsilon_eff");
  if (has_r) {
    out.material.epsilon_r = as_number(mat["epsilon_r"], "material.epsilon_r");
  } else {
    const double eff = as_number(mat["epsilon_eff"], "material.epsilon_eff");
    if (eff < 1.0)
      throw ConfigError("field material.epsilon_eff must be at least 1");
    out.material.epsilon_r = 2.0 * eff - 1.0;
  }
  if (out.material.epsilon_r < 1.0)
    throw ConfigError("field material.epsilon_r must be at least 1");
  if (mat.contains("mu_r")) {
    out.material.mu_r = as_number(mat["mu_r"], "material.mu_r");
    if (out.material.mu_r <= 0.0)
      throw ConfigError("field material.mu_r must be positive");
  }
  return out;
}

LengthsConfig parse_lengths(const ordered_json& j) {
  require_object(j, "lengths_um");
  reject_unknown_keys(j, {"coupler", "shorted", "open"}, "lengths_um");
  LengthsConfig out;
  out.coupler_um =
      as_number(require_field(j, "coupler", "lengths_um"), "lengths_um.coupler");
  out.shorted_um =
      as_number(require_field(j, "shorted", "lengths_um"), "lengths_um.shorted");
  out.open_um =
      as_number(require_field(j, "open", "lengths_um"), "lengths_um.open");
  if (out.coupler_um <= 0.0)
    throw ConfigError("field lengths_um.coupler must be positive");
  if (out.shorted_um < 0.0 || out.open_um < 0.0)
    throw ConfigError("fields lengths_um.shorted and lengths_um.open must be "
                      "non-negative");
  return out;
}

bool valid_sweep_parameter(const std::string& p) {
  if (p == "l_c" || p == "l_s" || p == "l_o" || p == "kappa") return true;
  if (p.size() < 2 || (p[0] != 'w' && p[0] != 's')) return false;
  return std::all_of(p.begin() + 1, p.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; });
}

SweepConfig parse_sweep(const ordered_json& j) {
  require_object(j, "sweep");
  reject_unknown_keys(j, {"parameter", "start", "stop", "count"}, "sweep");
  SweepConfig out;
  out.parameter =
      as_string(require_field(j, "parameter", "sweep"), "sweep.parameter");
  if (!valid_sweep_parameter(out.parameter))
    throw ConfigError(
        "field sweep.parameter must be w<k>, s<k>, l_c, l_s, l_o, or kappa");
  out.start = as_number(require_field(j, "start", "sweep"), "sweep.start");
  out.stop = as_number(require_field(j, "stop", "sweep"), "sweep.stop");
  out.count = as_integer(require_field(j, "count", "sweep"), "sweep.count");
  if (out.count < 1) throw ConfigError("field sweep.count must be at least 1");
  return out;
}

SparConfig parse_spar(const ordered_json& j) {
  require_object(j, "spar");
  reject_unknown_keys(
      j, {"f_start_hz", "f_stop_hz", "count", "in_port", "linewidths"}, "spar");
  SparConfig out;
  if (j.contains("f_start_hz"))
    out.f_start_hz = as_number(j["f_start_hz"], "spar.f_start_hz");
  if (j.contains("f_stop_hz"))
    out.f_stop_hz = as_number(j["f_stop_hz"], "spar.f_stop_hz");
  if (out.f_start_hz < 0.0 || out.f_stop_hz < 0.0)
    throw ConfigError("spar frequencies must be non-negative");
  if ((out.f_start_hz > 0.0) != (out.f_stop_hz > 0.0))
    throw ConfigError(
        "spar.f_start_hz and spar.f_stop_hz must be set together");
  if (out.f_start_hz > 0.0 && out.f_stop_hz <= out.f_start_hz)
    throw ConfigError("field spar.f_stop_hz must exceed spar.f_start_hz");
  if (j.contains("count")) {
    out.count = as_integer(j["count"], "spar.count");
    if (out.count < 2) throw ConfigError("field spar.count must be at least 2");
  }
  if (j.contains("in_port")) {
    out.in_port = as_integer(j["in_port"], "spar.in_port");
    if (out.in_port != 1 && out.in_port != 2)
      throw ConfigError("field spar.in_port must be 1 or 2");
  }
  if (j.contains("linewidths")) {
    out.linewidths = as_number(j["linewidths"], "spar.linewidths");
    if (out.linewidths <= 0.0)
      throw ConfigError("field spar.linewidths must be positive");
  }
  return out;
}

FitConfig parse_fit(const ordered_json& j) {
  require_object(j, "fit");
  reject_unknown_keys(j, {"trace", "format"}, "fit");
  FitConfig out;
  out.trace = as_string(require_field(j, "trace", "fit"), "fit.trace");
  if (j.contains("format")) {
    out.format = as_string(j["format"], "fit.format");
    if (out.format != "reim" && out.format != "magphase")
      throw ConfigError("field fit.format must be \"reim\" or \"magphase\"");
  }
  return out;
}

ordered_json complex_pair(std::complex<double> z) {
  return ordered_json::array({z.real(), z.imag()});
}

ordered_json matrix_json(const Eigen::Matrix2d& m) {
  return ordered_json::array({ordered_json::array({m(0, 0), m(0, 1)}),
                              ordered_json::array({m(1, 0), m(1, 1)})});
}

// Infinities (decoupled Q) have no JSON literal; they are emitted as null.
ordered_json finite_or_null(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string csv_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

ordered_json config_to_json(const DesignConfig& c) {
  ordered_json j = ordered_json::object();
  if (c.cross_section) {
    ordered_json cs = ordered_json::object();
    cs["widths_um"] = c.cross_section->widths_um;
    cs["gaps_um"] = c.cross_section->gaps_um;
    ordered_json roles = ordered_json::array();
    for (const auto role : c.cross_section->roles) roles.push_back(role_name(role));
    cs["roles"] = std::move(roles);
    j["cross_section"] = std::move(cs);
    j["material"] = {{"epsilon_r", c.cross_section->material.epsilon_r},
                     {"mu_r", c.cross_section->material.mu_r}};
  }
  if (c.lengths)
    j["lengths_um"] = {{"coupler", c.lengths->coupler_um},
                       {"shorted", c.lengths->shorted_um},
                       {"open", c.lengths->open_um}};
  j["termination"] = termination_name(c.termination);
  if (c.termination == TerminationCase::kExplicit)
    j["termination_ohm"] = {{"z_t1", complex_pair(c.z_t1)},
                            {"z_t2", complex_pair(c.z_t2)}};
  if (c.z_in || c.z_out) {
    ordered_json ports = ordered_json::object();
    if (c.z_in) ports["z_in"] = complex_pair(*c.z_in);
    if (c.z_out) ports["z_out"] = complex_pair(*c.z_out);
    j["ports_ohm"] = std::move(ports);
  }
  j["mode"] = c.mode_number;
  if (c.kappa_override) j["kappa_override"] = *c.kappa_override;
  if (c.sweep)
    j["sweep"] = {{"parameter", c.sweep->parameter},
                  {"start", c.sweep->start},
                  {"stop", c.sweep->stop},
                  {"count", c.sweep->count}};
  ordered_json spar = ordered_json::object();
  if (c.spar.f_start_hz > 0.0) {
    spar["f_start_hz"] = c.spar.f_start_hz;
    spar["f_stop_hz"] = c.spar.f_stop_hz;
  }
  spar["count"] = c.spar.count;
  spar["in_port"] = c.spar.in_port;
  spar["linewidths"] = c.spar.linewidths;
  j["spar"] = std::move(spar);
  if (c.fit_config)
    j["fit"] = {{"trace", c.fit_config->trace},
                {"format", c.fit_config->format}};
  return j;
}

ordered_json extract_fragment(const ExtractReport& ex) {
  ordered_json j = ordered_json::object();
  j["conductor_order"] = ordered_json::array({"feedline", "resonator"});
  j["capacitance_f_per_m"] = matrix_json(ex.capacitance);
  j["inductance_h_per_m"] = matrix_json(ex.inductance);
  j["kappa"] = ex.coupler.kappa;
  j["z_feed_ohm"] = ex.coupler.z_feed;
  j["z_coupler_resonator_ohm"] = ex.coupler.z_res;
  j["z_resonator_ohm"] = ex.z_resonator;
  j["epsilon_eff"] = ex.epsilon_eff;
  j["line_speed_m_per_s"] = ex.line_speed;
  j["f_seed_hz"] = ex.fr0;
  return j;
}

ordered_json qfactor_fragment(const QFactorReport& r) {
  ordered_json j = ordered_json::object();
  j["extraction"] = extract_fragment(r.extract);
  j["pole"] = {{"f_r_hz", r.f_r_pole},
               {"q_loaded", finite_or_null(r.q_l_pole)}};
  j["perturbation"] = {
      {"route", r.route},
      {"frequency_shift_hz", complex_pair(r.perturbation.frequency_shift)},
      {"f_r_hz", r.perturbation.f_r},
      {"q_external", finite_or_null(r.perturbation.q_external)},
      {"inv_q", r.perturbation.inv_q},
      {"decoupled", r.decoupled}};
  j["agreement"] = {{"f_rel_deviation", r.f_rel_deviation},
                    {"q_rel_deviation", finite_or_null(r.q_rel_deviation)}};
  return j;
}

std::string report_document(const char* command, ordered_json report,
                            const DesignConfig& config) {
  ordered_json j = ordered_json::object();
  j["generated_at"] = utc_timestamp();
  j["command"] = command;
  j["report"] = std::move(report);
  j["config"] = config_to_json(config);
  return j.dump(2) + "\n";
}

// Runs body(i) for i in [0, n) on up to `workers` threads. Results must be
// written to pre-sized slots; the first exception is rethrown after join.
template <typename Body>
void parallel_for(std::size_t n, int workers, const Body& body) {
  const int pool_size =
      std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (pool_size == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(pool_size);
  for (int t = 0; t < pool_size; ++t) {
    pool.emplace_back([&] {
      while (!failed.load()) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

DesignConfig parse_config_text(const std::string& text,
                               const std::string& origin) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object())
    throw ConfigError(origin + ": config root must be a JSON object");
  reject_unknown_keys(j,
                      {"cross_section", "material", "lengths_um", "termination",
                       "termination_ohm", "ports_ohm", "mode", "kappa_override",
                       "sweep", "spar", "fit"},
                      "");

  DesignConfig cfg;
  if (j.contains("cross_section"))
    cfg.cross_section = parse_cross_section(j["cross_section"], j);
  else if (j.contains("material"))
    throw ConfigError("material requires a cross_section block");
  if (j.contains("lengths_um")) cfg.lengths = parse_lengths(j["lengths_um"]);
  if (j.contains("termination"))
    cfg.termination = parse_termination(j["termination"], "termination");
  if (cfg.termination == TerminationCase::kExplicit) {
    const auto& t = require_object(require_field(j, "termination_ohm", ""),
                                   "termination_ohm");
    reject_unknown_keys(t, {"z_t1", "z_t2"}, "termination_ohm");
    cfg.z_t1 = as_complex(require_field(t, "z_t1", "termination_ohm"),
                          "termination_ohm.z_t1");
    cfg.z_t2 = as_complex(require_field(t, "z_t2", "termination_ohm"),
                          "termination_ohm.z_t2");
  } else if (j.contains("termination_ohm")) {
    throw ConfigError("termination_ohm requires termination \"explicit\"");
  }
  if (j.contains("ports_ohm")) {
    const auto& p = require_object(j["ports_ohm"], "ports_ohm");
    reject_unknown_keys(p, {"z_in", "z_out"}, "ports_ohm");
    if (p.contains("z_in"))
      cfg.z_in = as_complex(p["z_in"], "ports_ohm.z_in");
    if (p.contains("z_out"))
      cfg.z_out = as_complex(p["z_out"], "ports_ohm.z_out");
    for (const char* name : {"z_in", "z_out"}) {
      if (!p.contains(name)) continue;
      const auto z = as_complex(p[name], std::string("ports_ohm.") + name);
      if (z.real() <= 0.0)
        throw ConfigError(std::string("field ports_ohm.") + name +
                          " must have a positive real part");
    }
  }
  if (j.contains("mode")) {
    cfg.mode_number = as_integer(j["mode"], "mode");
    if (cfg.mode_number < 1)
      throw ConfigError("field mode must be at least 1");
  }
  if (j.contains("kappa_override")) {
    const double k = as_number(j["kappa_override"], "kappa_override");
    if (!(std::abs(k) < 1.0))
      throw ConfigError(
          "field kappa_override must lie strictly between -1 and 1");
    cfg.kappa_override = k;
  }
  if (j.contains("sweep")) cfg.sweep = parse_sweep(j["sweep"]);
  if (j.contains("spar")) cfg.spar = parse_spar(j["spar"]);
  if (j.contains("fit")) cfg.fit_config = parse_fit(j["fit"]);

  const std::filesystem::path origin_path(origin);
  if (origin_path.has_parent_path())
    cfg.base_directory = origin_path.parent_path().string();
  else
    cfg.base_directory = ".";
  return cfg;
}

DesignConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str(), path);
}

std::string config_json(const DesignConfig& config) {
  return config_to_json(config).dump(2) + "\n";
}

ExtractReport run_extract(const DesignConfig& config) {
  if (!config.cross_section) missing("cross_section");
  if (!config.lengths) missing("lengths_um");
  const CrossSectionConfig& cs = *config.cross_section;
  const LengthsConfig& len = *config.lengths;

  std::vector<double> widths_m(cs.widths_um.size());
  std::vector<double> gaps_m(cs.gaps_um.size());
  std::transform(cs.widths_um.begin(), cs.widths_um.end(), widths_m.begin(),
                 [](double w) { return w * kMicron; });
  std::transform(cs.gaps_um.begin(), cs.gaps_um.end(), gaps_m.begin(),
                 [](double g) { return g * kMicron; });

  const CrossSection xs =
      make_cross_section(widths_m, gaps_m, cs.roles, cs.material);
  PulMatrices pul = extract_matrices(xs);

  PulMatrices pul2;
  if (pul.roles.size() == 2) {
    pul2 = pul;
  } else if (pul.roles.size() == 3) {
    if (pul.roles[1] != ConductorRole::kStrip)
      throw ConfigError(
          "cross_section: the auxiliary strip must lie between the feedline "
          "and the resonator");
    pul2 = reduce_notch(pul);
  } else {
    throw ConfigError(
        "cross_section must contain two signal conductors, optionally "
        "separated by one auxiliary strip");
  }

  CouplerModel coupler =
      parameterize_coupler(pul2, len.coupler_um * kMicron);
  if (config.kappa_override)
    coupler = coupler.with_kappa(*config.kappa_override);

  // Impedance of the plain resonator sections: the same strip and gaps, but
  // flanked by ground on both sides.
  std::size_t res_pos = cs.roles.size();
  for (std::size_t i = 0; i < cs.roles.size(); ++i)
    if (cs.roles[i] == ConductorRole::kResonator) res_pos = i;
  const CrossSection bare = make_cross_section(
      {0.0, cs.widths_um[res_pos] * kMicron, 0.0},
      {cs.gaps_um[res_pos - 1] * kMicron, cs.gaps_um[res_pos] * kMicron},
      {ConductorRole::kGround, ConductorRole::kResonator,
       ConductorRole::kGround},
      cs.material);
  const ImpedanceMatrix bare_z = characteristic_impedance(extract_matrices(bare));

  ExtractReport report;
  report.capacitance = pul2.capacitance;
  report.inductance = pul2.inductance;
  if (coupler.feed_index == 1) {
    // Emit matrices in {feedline, resonator} order.
    Eigen::Matrix2d p;
    p << 0.0, 1.0, 1.0, 0.0;
    report.capacitance = p * report.capacitance * p;
    report.inductance = p * report.inductance * p;
  }
  report.coupler = coupler;
  report.z_resonator = bare_z.z(0, 0);
  report.epsilon_eff = cs.material.eps_eff();
  report.line_speed = pul.line_speed;

  NetworkSpec net;
  net.coupler = coupler;
  net.z_resonator = report.z_resonator;
  net.length_short = len.shorted_um * kMicron;
  net.length_open = len.open_um * kMicron;
  net.termination = config.termination;
  net.z_t1 = config.z_t1;
  net.z_t2 = config.z_t2;
  net.z_in = config.z_in.value_or(std::complex<double>(coupler.z_feed, 0.0));
  net.z_out = config.z_out.value_or(std::complex<double>(coupler.z_feed, 0.0));
  net.validate();
  report.fr0 = net.seed_frequency(config.mode_number);
  report.network = net;
  return report;
}

QFactorReport run_qfactor(const DesignConfig& config) {
  QFactorReport out;
  out.extract = run_extract(config);
  const NetworkSpec& net = out.extract.network;
  const int p = config.mode_number;

  try {
    out.perturbation = shift_and_q_matched(net, p);
    out.route = "matched";
  } catch (const NotMatched&) {
    try {
      out.perturbation = shift_general(net, p, DerivativeRoute::kClosedForm);
      out.route = "general";
    } catch (const CaseUnsupported&) {
      out.perturbation =
          shift_general(net, p, DerivativeRoute::kFiniteDifference);
      out.route = "finite_difference";
    }
  } catch (const CaseUnsupported&) {
    out.perturbation =
        shift_general(net, p, DerivativeRoute::kFiniteDifference);
    out.route = "finite_difference";
  }

  out.decoupled = net.coupler.kappa == 0.0;
  if (out.decoupled) {
    // Without coupling the pole sits on the real axis at the perturbed
    // resonance; the Newton search has nothing further to add.
    out.f_r_pole = out.perturbation.f_r;
    out.q_l_pole = std::numeric_limits<double>::infinity();
  } else {
    const PoleResult pole = find_pole(net, p);
    out.f_r_pole = pole.f_r;
    out.q_l_pole = pole.q_l;
  }

  const double pole_inv =
      std::isfinite(out.q_l_pole) ? 1.0 / out.q_l_pole : 0.0;
  if (pole_inv > 0.0)
    out.q_rel_deviation =
        std::abs(out.perturbation.inv_q - pole_inv) / pole_inv;
  else
    out.q_rel_deviation = out.perturbation.inv_q > 0.0
                              ? std::numeric_limits<double>::infinity()
                              : 0.0;
  out.f_rel_deviation =
      std::abs(out.perturbation.f_r - out.f_r_pole) / out.f_r_pole;
  return out;
}

std::vector<double> sweep_values(const SweepConfig& sweep) {
  std::vector<double> out(sweep.count);
  if (sweep.count == 1) {
    out[0] = sweep.start;
    return out;
  }
  const double step = (sweep.stop - sweep.start) / (sweep.count - 1);
  for (int i = 0; i < sweep.count; ++i) out[i] = sweep.start + step * i;
  out.back() = sweep.stop;
  return out;
}

namespace {

// Returns the configuration for one sweep point. Sweeping a cross-section
// dimension drops any kappa_override, which would otherwise pin the very
// quantity the sweep is probing.
DesignConfig sweep_point_config(const DesignConfig& base,
                                const std::string& parameter, double value) {
  DesignConfig c = base;
  c.sweep.reset();
  if (parameter == "kappa") {
    if (!(std::abs(value) < 1.0))
      throw ConfigError("sweep over kappa leaves the range (-1, 1)");
    c.kappa_override = value;
    return c;
  }
  if (parameter == "l_c" || parameter == "l_s" || parameter == "l_o") {
    if (!c.lengths) missing("lengths_um");
    if (value <= 0.0)
      throw ConfigError("sweep over " + parameter +
                        " requires positive lengths");
    if (parameter == "l_c") c.lengths->coupler_um = value;
    if (parameter == "l_s") c.lengths->shorted_um = value;
    if (parameter == "l_o") c.lengths->open_um = value;
    return c;
  }
  if (!c.cross_section) missing("cross_section");
  const std::size_t k = std::stoul(parameter.substr(1));
  auto& target = parameter[0] == 'w' ? c.cross_section->widths_um
                                     : c.cross_section->gaps_um;
  const char* kind = parameter[0] == 'w' ? "widths_um" : "gaps_um";
  if (k < 1 || k > target.size())
    throw ConfigError("sweep.parameter " + parameter +
                      " is out of range for cross_section." + kind);
  target[k - 1] = value;
  c.kappa_override.reset();
  return c;
}

}  // namespace

std::vector<SweepPoint> run_sweep(const DesignConfig& config,
                                  int parallel_workers) {
  if (!config.sweep) missing("sweep");
  const SweepConfig sw = *config.sweep;
  const std::vector<double> values = sweep_values(sw);

  std::vector<SweepPoint> points(values.size());
  parallel_for(values.size(), parallel_workers, [&](std::size_t i) {
    const DesignConfig c = sweep_point_config(config, sw.parameter, values[i]);
    points[i].value = values[i];
    points[i].report = run_qfactor(c);
  });
  return points;
}

std::vector<SparPoint> run_spar(const DesignConfig& config,
                                int parallel_workers) {
  const ExtractReport ex = run_extract(config);

  double f_lo = config.spar.f_start_hz;
  double f_hi = config.spar.f_stop_hz;
  if (!(f_lo > 0.0)) {
    // Automatic window: a few linewidths around the numeric pole, or a flat
    // half-percent band when the resonance carries no width.
    double centre = ex.fr0;
    double half = 0.005 * centre;
    if (ex.coupler.kappa != 0.0) {
      const PoleResult pole = find_pole(ex.network, config.mode_number);
      centre = pole.f_r;
      if (std::isfinite(pole.q_l) && pole.q_l > 0.0)
        half = config.spar.linewidths * pole.f_r / pole.q_l;
    }
    f_lo = centre - half;
    f_hi = centre + half;
  }

  const int n = config.spar.count;
  std::vector<SparPoint> points(n);
  const double step = (f_hi - f_lo) / (n - 1);
  parallel_for(n, parallel_workers, [&](std::size_t i) {
    const double f = i + 1 == static_cast<std::size_t>(n)
                         ? f_hi
                         : f_lo + step * static_cast<double>(i);
    const ScatteringResult s =
        scattering(ex.network, f, config.spar.in_port);
    points[i].f_hz = f;
    points[i].s11 = s.reflection;
    points[i].s21 = s.transmission;
  });
  return points;
}

std::vector<FitRecord> run_fit(const DesignConfig& config,
                               int parallel_workers) {
  namespace fs = std::filesystem;
  if (!config.fit_config) missing("fit");
  const FitConfig& fc = *config.fit_config;

  fs::path target(fc.trace);
  if (target.is_relative())
    target = fs::path(config.base_directory) / target;

  std::vector<fs::path> files;
  if (fs::is_directory(target)) {
    for (const auto& entry : fs::directory_iterator(target))
      if (entry.is_regular_file() && entry.path().extension() == ".csv")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw ConfigError("no .csv traces in directory: " + target.string());
  } else {
    files.push_back(target);
  }

  std::vector<FitRecord> records(files.size());
  parallel_for(files.size(), parallel_workers, [&](std::size_t i) {
    std::ifstream in(files[i]);
    if (!in)
      throw ConfigError("cannot open trace file: " + files[i].string());
    Trace trace;
    try {
      trace = fc.format == "magphase" ? parse_trace_magphase(in)
                                      : parse_trace_reim(in);
    } catch (const ConfigError& e) {
      throw ConfigError(files[i].string() + ": " + e.what());
    }
    records[i].file = files[i].string();
    records[i].result = fit(trace);
  });
  return records;
}

std::string extract_json(const DesignConfig& config,
                         const ExtractReport& report) {
  return report_document("extract", extract_fragment(report), config);
}

std::string qfactor_json(const DesignConfig& config,
                         const QFactorReport& report) {
  return report_document("qfactor", qfactor_fragment(report), config);
}

std::string sweep_json(const DesignConfig& config,
                       const std::vector<SweepPoint>& points) {
  ordered_json arr = ordered_json::array();
  for (const SweepPoint& p : points) {
    ordered_json j = ordered_json::object();
    j["value"] = p.value;
    j["kappa"] = p.report.extract.coupler.kappa;
    j["f_r_hz"] = p.report.f_r_pole;
    j["q_loaded"] = finite_or_null(p.report.q_l_pole);
    j["q_external"] = finite_or_null(p.report.perturbation.q_external);
    j["f_r_perturbative_hz"] = p.report.perturbation.f_r;
    j["q_rel_deviation"] = finite_or_null(p.report.q_rel_deviation);
    arr.push_back(std::move(j));
  }
  ordered_json report = ordered_json::object();
  report["parameter"] = config.sweep ? config.sweep->parameter : "";
  report["points"] = std::move(arr);
  return report_document("sweep", std::move(report), config);
}

std::string sweep_csv(const DesignConfig& config,
                      const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "# parameter: " << (config.sweep ? config.sweep->parameter : "")
      << "\n";
  out << "value,kappa,f_r_hz,q_loaded,q_external,f_r_perturbative_hz\n";
  for (const SweepPoint& p : points) {
    out << csv_number(p.value) << ',' << csv_number(p.report.extract.coupler.kappa)
        << ',' << csv_number(p.report.f_r_pole) << ','
        << csv_number(p.report.q_l_pole) << ','
        << csv_number(p.report.perturbation.q_external) << ','
        << csv_number(p.report.perturbation.f_r) << '\n';
  }
  return out.str();
}

std::string spar_json(const DesignConfig& config,
                      const std::vector<SparPoint>& points) {
  ordered_json arr = ordered_json::array();
  for (const SparPoint& p : points) {
    ordered_json j = ordered_json::object();
    j["f_hz"] = p.f_hz;
    j["s11"] = complex_pair(p.s11);
    j["s21"] = complex_pair(p.s21);
    arr.push_back(std::move(j));
  }
  ordered_json report = ordered_json::object();
  report["in_port"] = config.spar.in_port;
  report["points"] = std::move(arr);
  return report_document("spar", std::move(report), config);
}

std::string spar_csv(const std::vector<SparPoint>& points) {
  std::ostringstream out;
  out << "f_hz,s21_re,s21_im\n";
  for (const SparPoint& p : points)
    out << csv_number(p.f_hz) << ',' << csv_number(p.s21.real()) << ','
        << csv_number(p.s21.imag()) << '\n';
  return out.str();
}

std::string fit_json(const std::vector<FitRecord>& records) {
  ordered_json arr = ordered_json::array();
  for (const FitRecord& r : records) {
    const ResonanceModel& m = r.result.model;
    ordered_json j = ordered_json::object();
    j["file"] = r.file;
    j["a"] = m.a;
    j["alpha_rad"] = m.alpha;
    j["tau_s"] = m.tau;
    j["phi_rad"] = m.phi;
    j["q_loaded"] = m.q_l;
    j["q_external"] = m.q_e;
    j["f_r_hz"] = m.f_r;
    j["q_internal"] = finite_or_null(m.q_internal());
    j["q_internal_simple"] = finite_or_null(m.q_internal_simple());
    j["sigma"] = {{"a", r.result.sigma(0)},
                  {"alpha_rad", r.result.sigma(1)},
                  {"tau_s", r.result.sigma(2)},
                  {"phi_rad", r.result.sigma(3)},
                  {"q_loaded", r.result.sigma(4)},
                  {"q_external", r.result.sigma(5)},
                  {"f_r_hz", r.result.sigma(6)}};
    j["ssr"] = r.result.ssr;
    j["iterations"] = r.result.iterations;
    arr.push_back(std::move(j));
  }
  ordered_json report = ordered_json::object();
  report["records"] = std::move(arr);
  ordered_json doc = ordered_json::object();
  doc["generated_at"] = utc_timestamp();
  doc["command"] = "fit";
  doc["report"] = std::move(report);
  return doc.dump(2) + "\n";
}

}  // namespace cpwkit
