#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "latnav/pipeline.hpp"

namespace {

using json = nlohmann::json;

int fail(const std::string& kind, const std::string& message, const std::string& hint, const std::string& stage, int code) {
  json err = {{"error", {{"kind", kind}, {"message", message}, {"stage", stage}, {"exit_code", code}}}};
  if (!hint.empty()) err["error"]["hint"] = hint;
  std::cerr << err.dump() << std::endl;
  return code;
}

int exit_code_for(const std::string& kind) {
  if (kind == "invalid_argument" || kind == "invalid_config") return 2;
  return 3;  // upstream artifacts or manifests
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent trajectory anonymisation pipeline"};
  std::string stage_arg, config_path, out_dir, arm_arg;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  app.add_option("stage", stage_arg,
                 "synth-data | train-gan | project | train-classifiers | ksame | plan | gen-dataset | eval | all")
      ->required();
  app.add_option("--config", config_path, "INI config file")->required();
  app.add_option("--seed", seed, "run seed (overrides [run] seed)");
  app.add_option("--out", out_dir, "output directory (overrides PLAN_OUT and [run] out)");
  app.add_option("--workers", workers, "worker threads (overrides PLAN_WORKERS and [run] workers)");
  app.add_option("--arm", arm_arg, "eval arm: real | linear | plan | ksame | ksame-plan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("invalid_argument", e.what(), "usage: " + std::string(argv[0]) + " <stage> --config <path> [--seed N] [--out DIR] [--workers N] [--arm ARM]", stage_arg, 2);
  }

  try {
    latnav::PipelineConfig config = latnav::load_config(config_path);
    latnav::apply_environment(config);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.out = out_dir;
    if (workers) {
      if (*workers == 0) throw latnav::PipelineError("invalid_argument", "--workers must be at least 1");
      config.workers = *workers;
    }
    std::optional<latnav::Arm> arm;
    if (!arm_arg.empty()) arm = latnav::parse_arm(arm_arg);

    std::vector<latnav::StageOutcome> outcomes;
    if (stage_arg == "all") {
      if (arm) throw latnav::PipelineError("invalid_argument", "--arm applies to the eval stage only");
      outcomes = latnav::run_pipeline(config);
    } else {
      const latnav::Stage stage = latnav::parse_stage(stage_arg);
      if (arm && stage != latnav::Stage::eval) {
        throw latnav::PipelineError("invalid_argument", "--arm applies to the eval stage only");
      }
      outcomes = latnav::run_stage(stage, config, arm);
    }
    json summary = {{"stage", stage_arg}, {"out", config.out.string()}, {"seed", config.seed}, {"outcomes", json::array()}};
    for (const auto& o : outcomes) {
      summary["outcomes"].push_back({{"stage", o.stage},
                                     {"skipped", o.skipped},
                                     {"config_hash", o.manifest.config_hash},
                                     {"manifest", o.manifest_path.string()}});
    }
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const latnav::PipelineError& e) {
    return fail(e.kind(), e.what(), e.hint(), stage_arg, exit_code_for(e.kind()));
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what(), "", stage_arg, 2);
  } catch (const std::exception& e) {
    return fail("runtime_error", e.what(), "", stage_arg, 1);
  }
}
