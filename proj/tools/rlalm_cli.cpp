// rlalm: experiment runner. Every subcommand takes --config and --out;
// --seed overrides the seed in the config file.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rlalm/rlalm.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", args.out, "output directory")->required();
  sub->add_option("--seed", args.seed, "override the config seed");
}

rlalm::ExperimentConfig load(const CommonArgs& args, const char* expected) {
  auto cfg = rlalm::load_config(args.config);
  if (expected && cfg.experiment != expected) {
    throw rlalm::ConfigError(std::string("config experiment type is '") + cfg.experiment + "', expected '" +
                             expected + "'");
  }
  if (args.seed) cfg.seed = *args.seed;
  for (auto& s : cfg.solvers) s.config.seed = cfg.seed;
  return cfg;
}

// One line, "error: <kind>: <message>", no embedded newlines.
int fail(const std::string& kind, std::string msg) {
  for (char& c : msg) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::fprintf(stderr, "error: %s: %s\n", kind.c_str(), msg.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relaxed linearized AL solvers: LASSO and CT experiments"};
  app.require_subcommand(1);
  CommonArgs lasso_args, ct_args, spectral_args;
  auto* lasso = app.add_subcommand("run-lasso", "LASSO gap curves and bound tables");
  auto* ct = app.add_subcommand("run-ct", "CT reconstruction RMS curves and images");
  auto* spectral = app.add_subcommand("analyze-spectral", "continuation spectral tables");
  add_common(lasso, lasso_args);
  add_common(ct, ct_args);
  add_common(spectral, spectral_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (lasso->parsed()) {
      const auto res = rlalm::run_lasso_experiment(load(lasso_args, "lasso"), lasso_args.out);
      for (const auto& r : res.runs) {
        const auto& last = r.record.rows.back();
        std::printf("%s: K=%ld ergodic_gap=%.6e nonergodic_gap=%.6e\n", r.name.c_str(), static_cast<long>(last.k),
                    *last.ergodic_gap, *last.nonergodic_gap);
      }
    } else if (ct->parsed()) {
      const auto res = rlalm::run_ct_experiment(load(ct_args, "ct"), ct_args.out);
      for (const auto& r : res.runs) {
        const auto& last = r.result.record.rows.back();
        std::printf("%s: k=%ld rms_hu=%.4f\n", r.name.c_str(), static_cast<long>(last.k), *last.rms_hu);
      }
    } else if (spectral->parsed()) {
      const auto t = rlalm::analyze_spectral(load(spectral_args, nullptr), spectral_args.out);
      std::printf("spectral: %zu summary rows, %zu eigenvalue rows\n", t.summary.size(), t.eigen.size());
    }
  } catch (const rlalm::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
