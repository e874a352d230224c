#pragma once
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rdbinn/binn.hpp"
#include "rdbinn/grid.hpp"
#include "rdbinn/solver.hpp"
#include "rdbinn/sr.hpp"
#include "rdbinn/synth.hpp"

namespace rdbinn {

inline constexpr const char* kToolVersion = "rd-binn 0.1.0";

// Pipeline-level seed stream tags (the binn module owns tags 1-4).
constexpr std::uint64_t kTagNoise = 10;
constexpr std::uint64_t kTagSample = 11;
constexpr std::uint64_t kTagSrDiffusion = 12;
constexpr std::uint64_t kTagSrGrowth = 13;
// Split k trains with derive_seed(seed, kTagTrainSplit + k).
constexpr std::uint64_t kTagTrainSplit = 100;

// One synthetic rate law: an expression in U = u / u_ref, evaluating to the
// physical rate (mm^2/day for D, 1/day for G).
struct SynthRate {
  std::string expr;
  double u_ref = 1.0;
};

struct SynthSpec {
  Domain domain;
  int n_x1 = 0, n_x2 = 0;
  std::vector<double> times;
  SynthRate diffusion, growth;
  std::vector<Bump> bumps, voids;
  double noise_gamma = 0.0;
  double noise_omega = 0.0;
  bool emit_points = false;
};

struct RunConfig {
  // Exactly one input mode: a raw point cloud, an already-binned density
  // tensor, or a synthetic data specification.
  std::string points_csv;
  std::string density_csv;
  std::optional<SynthSpec> synth;

  // Optional explicit binning domain for the points mode; when absent the
  // domain is the data's bounding box.
  std::optional<Domain> points_domain;

  double bin_size = 0.1;
  TrainConfig train;  // seed field ignored; per-split seeds are derived
  std::vector<int> es_patience_sweep{500, 1000, 2000};
  int n_splits = 5;
  // Preferred patience: smallest whose median validation loss is within
  // this fraction of the best patience's median.
  double preferred_es_tolerance = 0.03;
  SrConfig sr;
  SolveSpec solve;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;

  void validate() const;
};

RunConfig run_config_from_json(const std::string& text, const std::string& context);
std::string run_config_to_json(const RunConfig& cfg);

// One `--set dotted.path=value` override applied to the config JSON text.
// The value is parsed as JSON when possible and as a string otherwise.
std::string apply_config_override(const std::string& json_text,
                                  const std::string& assignment);

// Trained-model checkpoint persistence (networks, scaling, split, trace
// summary) used by the train stage and consumed by ensemble-sr/evaluate.
struct Checkpoint {
  int split = 0;
  int patience = 0;
  double best_total_val = 0.0;
  BinnModel model;
};

std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text, const std::string& context);

std::filesystem::path checkpoint_path(const RunConfig& cfg, int split, int patience);

// Stage commands. Each consumes config plus files written by earlier
// stages under cfg.out_dir, writes its own outputs atomically, and records
// a stage entry in <out_dir>/manifest.json. Existing outputs are refused
// unless force is set.
void cmd_synth(const RunConfig& cfg, bool force);
void cmd_preprocess(const RunConfig& cfg, bool force);
void cmd_train(const RunConfig& cfg, bool force, int jobs);
void cmd_ensemble_sr(const RunConfig& cfg, bool force);
void cmd_evaluate(const RunConfig& cfg, bool force);
void cmd_run_all(const RunConfig& cfg, bool force, int jobs);

// The preferred-patience decision recorded by the train stage.
struct PreferredEs {
  int patience = 0;
  std::vector<int> patiences;
  std::vector<double> median_val_loss;  // parallel to patiences
};

PreferredEs preferred_es_from_json(const std::string& text, const std::string& context);

}  // namespace rdbinn
