#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "spbuf/commands.hpp"
#include "spbuf/errors.hpp"

namespace cli = spbuf::cli;

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo simulator for a recirculating single-photon buffer"};
  app.set_version_flag("--version", std::string(cli::kToolVersion));
  app.require_subcommand(1);

  cli::CommandOptions opt;
  std::optional<std::string> k_text;
  const std::map<std::string, cli::Format> formats{{"csv", cli::Format::Csv}, {"json", cli::Format::Json}};

  auto common = [&](CLI::App* sub, bool with_run_flags) {
    sub->add_option("--config", opt.config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--format", opt.format, "Summary format on stdout")
        ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));
    if (with_run_flags) {
      sub->add_option("--seed", opt.seed, "Override master_seed");
      sub->add_option("--out", opt.out, "Override output_dir");
      sub->add_option("--jobs", opt.jobs, "Worker threads")->check(CLI::PositiveNumber);
    }
  };

  auto* simulate = app.add_subcommand("simulate", "Run one storage experiment");
  common(simulate, true);

  auto* sweep = app.add_subcommand("sweep-storage", "Sweep storage round trips and fit the loss");
  common(sweep, true);
  sweep->add_option("--k", k_text, "Round trips, e.g. 1-5 or 0,3,14 (default: analysis.sweep_k)");

  auto* validate = app.add_subcommand("validate", "Check a configuration without simulating");
  common(validate, false);

  auto* g2 = app.add_subcommand("g2", "Estimate g2(0) from an event dump");
  common(g2, false);
  g2->add_option("--events", opt.events, "events.csv from simulate")->required()->check(CLI::ExistingFile);
  g2->add_option("--k", k_text, "Storage round trip defining the gate (default: control.hold_round_trips)");
  g2->add_option("--triggers", opt.triggers, "Trigger count (default: n_pulses)");

  auto* fit = app.add_subcommand("fit-loss", "Fit the per-trip loss from histograms or a peak table");
  common(fit, false);
  fit->add_option("--hist", opt.inputs, "Histogram CSVs with .json headers beside them")->check(CLI::ExistingFile);
  fit->add_option("--peaks", opt.peaks, "Peak table CSV")->check(CLI::ExistingFile);
  fit->add_option("--k", k_text, "Round trip per histogram, in order (default: parsed from _k<n> in the name)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfig;
  }

  try {
    if (k_text) opt.k_list = cli::parse_k_list(*k_text);
  } catch (const spbuf::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitConfig;
  }

  if (*simulate) return cli::cmd_simulate(opt, std::cout, std::cerr);
  if (*sweep) return cli::cmd_sweep_storage(opt, std::cout, std::cerr);
  if (*validate) return cli::cmd_validate(opt, std::cout, std::cerr);
  if (*g2) return cli::cmd_g2(opt, std::cout, std::cerr);
  return cli::cmd_fit_loss(opt, std::cout, std::cerr);
}
