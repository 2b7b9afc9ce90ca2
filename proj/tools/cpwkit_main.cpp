#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "cpwkit/config.hpp"
#include "cpwkit/errors.hpp"

// Command-line front end: extract (per-unit-length matrices and impedances),
// qfactor (numeric pole plus perturbative shift and Q), sweep (qfactor over a
// parameter range), spar (scattering trace), fit (notch resonance fit).
// Exit codes: 0 success, 2 configuration problem, 3 numerical failure.

namespace {

struct Options {
  std::string config;
  std::string out;
  std::string format = "json";
  int mode = 0;  // 0 keeps the mode number from the config
  int parallel = 1;
};

void add_common_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "design configuration (JSON)")
      ->required();
  cmd->add_option("--out", opt.out, "output file (default: stdout)");
  cmd->add_option("--format", opt.format, "output format")
      ->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--mode", opt.mode, "resonance mode number override")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--parallel", opt.parallel, "worker thread count")
      ->check(CLI::PositiveNumber);
}

void write_output(const Options& opt, const std::string& body) {
  if (opt.out.empty()) {
    std::cout << body;
    return;
  }
  std::ofstream out(opt.out);
  if (!out) throw cpwkit::ConfigError("cannot open output file: " + opt.out);
  out << body;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transmission-line coupled CPW resonator design tool"};
  app.require_subcommand(1);
  Options opt;
  add_common_flags(app.add_subcommand(
                       "extract", "per-unit-length matrices and impedances"),
                   opt);
  add_common_flags(
      app.add_subcommand("qfactor", "resonance pole, frequency shift, and Q"),
      opt);
  add_common_flags(
      app.add_subcommand("sweep", "qfactor across a parameter range"), opt);
  add_common_flags(app.add_subcommand("spar", "scattering parameter trace"),
                   opt);
  add_common_flags(app.add_subcommand("fit", "fit measured notch traces"),
                   opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  using namespace cpwkit;
  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const bool csv = opt.format == "csv";
    if (csv && command != "sweep" && command != "spar")
      throw ConfigError("csv format applies to sweep and spar only");

    DesignConfig cfg = load_config(opt.config);
    if (opt.mode > 0) cfg.mode_number = opt.mode;

    std::string body;
    if (command == "extract") {
      body = extract_json(cfg, run_extract(cfg));
    } else if (command == "qfactor") {
      body = qfactor_json(cfg, run_qfactor(cfg));
    } else if (command == "sweep") {
      const auto points = run_sweep(cfg, opt.parallel);
      body = csv ? sweep_csv(cfg, points) : sweep_json(cfg, points);
    } else if (command == "spar") {
      const auto points = run_spar(cfg, opt.parallel);
      body = csv ? spar_csv(points) : spar_json(cfg, points);
    } else {
      body = fit_json(run_fit(cfg, opt.parallel));
    }
    write_output(opt, body);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
