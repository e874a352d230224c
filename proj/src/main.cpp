#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"
#include "rdbinn/pipeline.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool force = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, CliOptions& opt) {
  sub->add_option("--config", opt.config_path, "Run configuration JSON file")
      ->required();
  sub->add_option("--out", opt.out_dir, "Output directory (overrides the config)");
  sub->add_option("--seed", opt.seed, "Base seed (overrides the config)");
  sub->add_option("--jobs", opt.jobs, "Maximum concurrent training jobs")
      ->check(CLI::PositiveNumber);
  sub->add_flag("--force", opt.force, "Overwrite existing stage outputs");
  sub->add_option("--set", opt.sets,
                  "Config override as dotted.path=value (repeatable)");
}

rdbinn::RunConfig load_config(const CLI::App* sub, const CliOptions& opt) {
  std::string text = rdbinn::io::read_file(opt.config_path);
  for (const std::string& s : opt.sets)
    text = rdbinn::apply_config_override(text, s);
  rdbinn::RunConfig cfg = rdbinn::run_config_from_json(text, opt.config_path);
  if (sub->count("--out") > 0) cfg.out_dir = opt.out_dir;
  if (sub->count("--seed") > 0) cfg.seed = opt.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equation learning for 2D reaction-diffusion cell density data"};
  app.set_version_flag("--version", rdbinn::kToolVersion);
  app.require_subcommand(1);
  CliOptions opt;

  const char* const commands[] = {"synth",       "preprocess", "train",
                                  "ensemble-sr", "evaluate",   "run-all"};
  const char* const descriptions[] = {
      "Generate a synthetic dataset from planted rate laws",
      "Bin the input into a density tensor",
      "Train the surrogate networks across splits and patiences",
      "Ensemble the rate surrogates and fit symbolic expressions",
      "Produce and compare the total-count curves",
      "Run every stage in order"};
  for (std::size_t k = 0; k < 6; ++k)
    add_common(app.add_subcommand(commands[k], descriptions[k]), opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    const rdbinn::RunConfig cfg = load_config(sub, opt);
    const std::string name = sub->get_name();
    if (name == "synth") {
      rdbinn::cmd_synth(cfg, opt.force);
    } else if (name == "preprocess") {
      rdbinn::cmd_preprocess(cfg, opt.force);
    } else if (name == "train") {
      rdbinn::cmd_train(cfg, opt.force, opt.jobs);
    } else if (name == "ensemble-sr") {
      rdbinn::cmd_ensemble_sr(cfg, opt.force);
    } else if (name == "evaluate") {
      rdbinn::cmd_evaluate(cfg, opt.force);
    } else {
      rdbinn::cmd_run_all(cfg, opt.force, opt.jobs);
    }
  } catch (const rdbinn::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const rdbinn::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
