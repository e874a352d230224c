#include "rdbinn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rdbinn/ensemble.hpp"
#include "rdbinn/errors.hpp"
#include "rdbinn/eval.hpp"
#include "rdbinn/io.hpp"

namespace rdbinn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(context + ": " + e.what());
  }
}

const json& need(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key)) throw InputError(context + ": missing field '" + key + "'");
  return j.at(key);
}

template <typename T>
T field_as(const json& j, const char* key, const std::string& context) {
  try {
    return need(j, key, context).get<T>();
  } catch (const json::exception& e) {
    throw InputError(context + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const char* key, T def, const std::string& context) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError(context + "." + key + ": " + e.what());
  }
}

Domain domain_from_json(const json& j, const std::string& context) {
  const auto axis = [&](const char* key, double& lo, double& hi) {
    const json& a = need(j, key, context);
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
      throw InputError(context + "." + key + ": expected [lo, hi]");
    lo = a[0].get<double>();
    hi = a[1].get<double>();
  };
  Domain d;
  axis("x1", d.x1_min, d.x1_max);
  axis("x2", d.x2_min, d.x2_max);
  axis("t", d.t_min, d.t_max);
  return d;
}

json domain_to_json(const Domain& d) {
  return {{"x1", {d.x1_min, d.x1_max}},
          {"x2", {d.x2_min, d.x2_max}},
          {"t", {d.t_min, d.t_max}}};
}

std::vector<Bump> bumps_from_json(const json& j, const char* key,
                                  const std::string& context) {
  std::vector<Bump> out;
  if (!j.contains(key)) return out;
  const json& arr = j.at(key);
  if (!arr.is_array()) throw InputError(context + "." + key + ": expected an array");
  for (const json& b : arr) {
    const std::string ctx = context + "." + key + "[]";
    out.push_back({field_as<double>(b, "x1", ctx), field_as<double>(b, "x2", ctx),
                   field_as<double>(b, "sigma", ctx),
                   field_as<double>(b, "amplitude", ctx)});
  }
  return out;
}

json bumps_to_json(const std::vector<Bump>& bumps) {
  json arr = json::array();
  for (const Bump& b : bumps)
    arr.push_back({{"x1", b.x1}, {"x2", b.x2}, {"sigma", b.sigma},
                   {"amplitude", b.amplitude}});
  return arr;
}

SynthRate rate_from_json(const json& j, const char* key, const std::string& context) {
  const json& r = need(j, key, context);
  SynthRate out;
  out.expr = field_as<std::string>(r, "expr", context + "." + key);
  out.u_ref = field_as<double>(r, "u_ref", context + "." + key);
  return out;
}

SynthSpec synth_from_json(const json& j, const std::string& context) {
  SynthSpec sp;
  sp.domain = domain_from_json(need(j, "domain", context), context + ".domain");
  sp.n_x1 = field_as<int>(j, "n_x1", context);
  sp.n_x2 = field_as<int>(j, "n_x2", context);
  sp.times = field_as<std::vector<double>>(j, "times", context);
  sp.diffusion = rate_from_json(j, "diffusion", context);
  sp.growth = rate_from_json(j, "growth", context);
  const json& ic = need(j, "ic", context);
  sp.bumps = bumps_from_json(ic, "bumps", context + ".ic");
  sp.voids = bumps_from_json(ic, "voids", context + ".ic");
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    sp.noise_gamma = get_or<double>(n, "gamma", 0.0, context + ".noise");
    sp.noise_omega = get_or<double>(n, "omega", 0.0, context + ".noise");
  }
  sp.emit_points = get_or<bool>(j, "emit_points", false, context);
  return sp;
}

json synth_to_json(const SynthSpec& sp) {
  json j;
  j["domain"] = domain_to_json(sp.domain);
  j["n_x1"] = sp.n_x1;
  j["n_x2"] = sp.n_x2;
  j["times"] = sp.times;
  j["diffusion"] = {{"expr", sp.diffusion.expr}, {"u_ref", sp.diffusion.u_ref}};
  j["growth"] = {{"expr", sp.growth.expr}, {"u_ref", sp.growth.u_ref}};
  j["ic"] = {{"bumps", bumps_to_json(sp.bumps)}, {"voids", bumps_to_json(sp.voids)}};
  j["noise"] = {{"gamma", sp.noise_gamma}, {"omega", sp.noise_omega}};
  j["emit_points"] = sp.emit_points;
  return j;
}

void train_from_json(const json& j, TrainConfig& tc, const std::string& context) {
  tc.lambda_data = get_or<double>(j, "lambda_data", tc.lambda_data, context);
  tc.lambda_pde = get_or<double>(j, "lambda_pde", tc.lambda_pde, context);
  tc.lambda_bio = get_or<double>(j, "lambda_bio", tc.lambda_bio, context);
  tc.n_c = get_or<int>(j, "n_c", tc.n_c, context);
  tc.es_improvement = get_or<double>(j, "es_improvement", tc.es_improvement, context);
  tc.learning_rate = get_or<double>(j, "learning_rate", tc.learning_rate, context);
  tc.beta1 = get_or<double>(j, "beta1", tc.beta1, context);
  tc.beta2 = get_or<double>(j, "beta2", tc.beta2, context);
  tc.max_epochs = get_or<int>(j, "max_epochs", tc.max_epochs, context);
  tc.split_fraction = get_or<double>(j, "split_fraction", tc.split_fraction, context);
}

json train_to_json(const TrainConfig& tc) {
  return {{"lambda_data", tc.lambda_data}, {"lambda_pde", tc.lambda_pde},
          {"lambda_bio", tc.lambda_bio},   {"n_c", tc.n_c},
          {"es_improvement", tc.es_improvement},
          {"learning_rate", tc.learning_rate},
          {"beta1", tc.beta1},             {"beta2", tc.beta2},
          {"max_epochs", tc.max_epochs},   {"split_fraction", tc.split_fraction}};
}

void sr_from_json(const json& j, SrConfig& sc, const std::string& context) {
  sc.population = get_or<int>(j, "population", sc.population, context);
  sc.generations = get_or<int>(j, "generations", sc.generations, context);
  sc.max_complexity = get_or<int>(j, "max_complexity", sc.max_complexity, context);
  sc.parsimony = get_or<double>(j, "parsimony", sc.parsimony, context);
  sc.use_div = get_or<bool>(j, "use_div", sc.use_div, context);
  sc.use_pow = get_or<bool>(j, "use_pow", sc.use_pow, context);
  sc.const_opt_iters = get_or<int>(j, "const_opt_iters", sc.const_opt_iters, context);
  sc.repeats = get_or<int>(j, "repeats", sc.repeats, context);
}

json sr_to_json(const SrConfig& sc) {
  return {{"population", sc.population},   {"generations", sc.generations},
          {"max_complexity", sc.max_complexity},
          {"parsimony", sc.parsimony},     {"use_div", sc.use_div},
          {"use_pow", sc.use_pow},         {"const_opt_iters", sc.const_opt_iters},
          {"repeats", sc.repeats}};
}

void solve_from_json(const json& j, SolveSpec& sp, const std::string& context) {
  sp.safety = get_or<double>(j, "safety", sp.safety, context);
  if (j.contains("max_dt")) sp.max_dt = field_as<double>(j, "max_dt", context);
  sp.max_value = get_or<double>(j, "max_value", sp.max_value, context);
  sp.max_steps = get_or<long>(j, "max_steps", sp.max_steps, context);
}

json solve_to_json(const SolveSpec& sp) {
  json j = {{"safety", sp.safety}, {"max_value", sp.max_value},
            {"max_steps", sp.max_steps}};
  if (std::isfinite(sp.max_dt)) j["max_dt"] = sp.max_dt;
  return j;
}

json scaling_to_json(const Scaling& sc) {
  return {{"length", sc.length}, {"time", sc.time}, {"density", sc.density}};
}

Scaling scaling_from_json(const json& j, const std::string& context) {
  Scaling sc;
  sc.length = field_as<double>(j, "length", context);
  sc.time = field_as<double>(j, "time", context);
  sc.density = field_as<double>(j, "density", context);
  return sc;
}

// ---- stage plumbing ----

struct StageClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

void refuse_existing(const std::vector<fs::path>& outputs, bool force) {
  if (force) return;
  std::string existing;
  for (const fs::path& p : outputs)
    if (fs::exists(p)) existing += "\n  " + p.string();
  if (!existing.empty())
    throw InputError("outputs already exist (pass --force to overwrite):" + existing);
}

void record_stage(const RunConfig& cfg, const std::string& stage, double seconds,
                  const std::vector<std::string>& outputs,
                  const json& extra = json::object()) {
  const fs::path mpath = cfg.out_dir / "manifest.json";
  json j = fs::exists(mpath) ? parse_json(io::read_file(mpath), mpath.string())
                             : json::object();
  j["version"] = kToolVersion;
  j["config"] = json::parse(run_config_to_json(cfg));
  j["schemes"] = {
      {"pde_residual", "expanded collocation form"},
      {"solver", "cell-centered finite volume, RK4, no-flux boundaries"},
      {"es_rule", "smallest patience with median validation loss within "
                  "tolerance of the best patience's"}};
  json seeds;
  seeds["base"] = cfg.seed;
  seeds["noise"] = derive_seed(cfg.seed, kTagNoise);
  seeds["sample"] = derive_seed(cfg.seed, kTagSample);
  seeds["sr_diffusion"] = derive_seed(cfg.seed, kTagSrDiffusion);
  seeds["sr_growth"] = derive_seed(cfg.seed, kTagSrGrowth);
  json split_seeds = json::array();
  for (int i = 0; i < cfg.n_splits; ++i)
    split_seeds.push_back(derive_seed(cfg.seed, kTagTrainSplit + std::uint64_t(i)));
  seeds["train_splits"] = split_seeds;
  j["seeds"] = seeds;
  json entry = extra;
  entry["seconds"] = seconds;
  entry["outputs"] = outputs;
  j["stages"][stage] = entry;
  io::atomic_write(mpath, j.dump(2) + "\n");
}

std::string rel_name(const RunConfig& cfg, const fs::path& p) {
  return fs::relative(p, cfg.out_dir).string();
}

fs::path density_path(const RunConfig& cfg) { return cfg.out_dir / "density.csv"; }
fs::path preferred_path(const RunConfig& cfg) {
  return cfg.out_dir / "preferred_es.json";
}
fs::path sr_model_path(const RunConfig& cfg, CurveKind kind) {
  return cfg.out_dir /
         (kind == CurveKind::kDiffusion ? "sr_D_model.json" : "sr_G_model.json");
}

DensityField load_density(const RunConfig& cfg) {
  const fs::path p = density_path(cfg);
  if (!fs::exists(p))
    throw InputError(p.string() + " not found; run the preprocess stage first");
  return io::read_density_csv(p);
}

PreferredEs load_preferred(const RunConfig& cfg) {
  const fs::path p = preferred_path(cfg);
  if (!fs::exists(p))
    throw InputError(p.string() + " not found; run the train stage first");
  return preferred_es_from_json(io::read_file(p), p.string());
}

std::vector<Checkpoint> load_checkpoints(const RunConfig& cfg, int patience) {
  std::vector<Checkpoint> out;
  out.reserve(std::size_t(cfg.n_splits));
  for (int i = 0; i < cfg.n_splits; ++i) {
    const fs::path p = checkpoint_path(cfg, i, patience);
    if (!fs::exists(p))
      throw InputError(p.string() + " not found; run the train stage first");
    out.push_back(checkpoint_from_json(io::read_file(p), p.string()));
  }
  return out;
}

double best_total_val(const BinnModel& model) {
  double best = std::numeric_limits<double>::infinity();
  for (const EpochTrace& e : model.trace) best = std::min(best, e.total_val);
  return best;
}

std::string trace_csv(const BinnModel& model) {
  std::ostringstream os;
  os << "epoch,train_data,train_pde,val_data,val_pde,total_val\n";
  for (const EpochTrace& e : model.trace)
    os << e.epoch << ',' << io::fmt(e.train_data) << ',' << io::fmt(e.train_pde)
       << ',' << io::fmt(e.val_data) << ',' << io::fmt(e.val_pde) << ','
       << io::fmt(e.total_val) << '\n';
  return os.str();
}

void write_candidates_csv(const std::vector<Candidate>& cands, const fs::path& path) {
  std::ostringstream os;
  os << "seed,complexity,sq_error,template,expression\n";
  for (const Candidate& c : cands)
    os << c.seed << ',' << c.expr.complexity() << ',' << io::fmt(c.sq_error) << ','
       << canonical_template(c.expr) << ',' << expr_to_string(c.expr) << '\n';
  io::atomic_write(path, os.str());
}

// Runs body(i) for i in [0, n) on up to `jobs` threads; the first exception
// wins and is rethrown after all workers finish.
void run_jobs(int n, int jobs, const std::function<void(int)>& body) {
  jobs = std::clamp(jobs, 1, n);
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(jobs));
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

// ---- config ----

void RunConfig::validate() const {
  const int modes = int(!points_csv.empty()) + int(!density_csv.empty()) +
                    int(synth.has_value());
  if (modes != 1)
    throw InputError(
        "config: exactly one input mode (points_csv, density_csv or synth) "
        "must be set");
  if (!points_csv.empty() && !fs::exists(points_csv))
    throw InputError("config: points_csv does not exist: " + points_csv);
  if (!density_csv.empty() && !fs::exists(density_csv))
    throw InputError("config: density_csv does not exist: " + density_csv);
  if (!(bin_size > 0.0)) throw InputError("config: bin_size must be positive");
  if (n_splits < 1 || n_splits > 64)
    throw InputError("config: n_splits must be in [1, 64]");
  if (es_patience_sweep.empty())
    throw InputError("config: es_patience_sweep must not be empty");
  for (int p : es_patience_sweep)
    if (p < 1) throw InputError("config: patience values must be >= 1");
  {
    std::vector<int> sorted = es_patience_sweep;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw InputError("config: es_patience_sweep has duplicate entries");
  }
  if (!(preferred_es_tolerance >= 0.0))
    throw InputError("config: preferred_es_tolerance must be >= 0");
  TrainConfig tc = train;
  tc.es_patience = es_patience_sweep.front();
  tc.validate();
  sr.validate();
  if (!(solve.safety > 0.0 && solve.safety <= 1.0))
    throw InputError("config: solve.safety must be in (0, 1]");
  if (!(solve.max_dt > 0.0)) throw InputError("config: solve.max_dt must be positive");
  if (!(solve.max_value > 0.0))
    throw InputError("config: solve.max_value must be positive");
  if (solve.max_steps < 1) throw InputError("config: solve.max_steps must be >= 1");
  if (out_dir.empty()) throw InputError("config: out_dir must not be empty");

  if (synth.has_value()) {
    const SynthSpec& sp = *synth;
    sp.domain.validate();
    if (sp.n_x1 < 1 || sp.n_x2 < 1)
      throw InputError("config: synth grid needs at least one bin per axis");
    if (sp.times.empty()) throw InputError("config: synth.times must not be empty");
    for (std::size_t s = 0; s < sp.times.size(); ++s) {
      if (sp.times[s] < sp.domain.t_min || sp.times[s] > sp.domain.t_max)
        throw InputError("config: synth.times must lie in the domain t range");
      if (s > 0 && !(sp.times[s] > sp.times[s - 1]))
        throw InputError("config: synth.times must be strictly increasing");
    }
    if (!(sp.diffusion.u_ref > 0.0) || !(sp.growth.u_ref > 0.0))
      throw InputError("config: synth u_ref values must be positive");
    parse_expression(sp.diffusion.expr);
    parse_expression(sp.growth.expr);
    if (sp.bumps.empty())
      throw InputError("config: synth.ic needs at least one bump");
    if (sp.noise_gamma < 0.0 || sp.noise_omega < 0.0)
      throw InputError("config: synth noise parameters must be >= 0");
  }
  if (points_domain.has_value()) points_domain->validate();
}

RunConfig run_config_from_json(const std::string& text, const std::string& context) {
  const json j = parse_json(text, context);
  RunConfig c;
  const json& input = need(j, "input", context);
  c.points_csv = get_or<std::string>(input, "points_csv", "", context + ".input");
  c.density_csv = get_or<std::string>(input, "density_csv", "", context + ".input");
  if (input.contains("synth"))
    c.synth = synth_from_json(input.at("synth"), context + ".input.synth");
  if (input.contains("domain"))
    c.points_domain =
        domain_from_json(input.at("domain"), context + ".input.domain");

  c.bin_size = get_or<double>(j, "bin_size", c.bin_size, context);
  if (j.contains("train")) train_from_json(j.at("train"), c.train, context + ".train");
  c.es_patience_sweep = get_or<std::vector<int>>(j, "es_patience_sweep",
                                                 c.es_patience_sweep, context);
  c.n_splits = get_or<int>(j, "n_splits", c.n_splits, context);
  c.preferred_es_tolerance =
      get_or<double>(j, "preferred_es_tolerance", c.preferred_es_tolerance, context);
  if (j.contains("sr")) sr_from_json(j.at("sr"), c.sr, context + ".sr");
  if (j.contains("solve")) solve_from_json(j.at("solve"), c.solve, context + ".solve");
  c.out_dir = get_or<std::string>(j, "out_dir", c.out_dir.string(), context);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, context);
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json input;
  if (!c.points_csv.empty()) input["points_csv"] = c.points_csv;
  if (!c.density_csv.empty()) input["density_csv"] = c.density_csv;
  if (c.synth.has_value()) input["synth"] = synth_to_json(*c.synth);
  if (c.points_domain.has_value()) input["domain"] = domain_to_json(*c.points_domain);

  json j;
  j["input"] = input;
  j["bin_size"] = c.bin_size;
  j["train"] = train_to_json(c.train);
  j["es_patience_sweep"] = c.es_patience_sweep;
  j["n_splits"] = c.n_splits;
  j["preferred_es_tolerance"] = c.preferred_es_tolerance;
  j["sr"] = sr_to_json(c.sr);
  j["solve"] = solve_to_json(c.solve);
  j["out_dir"] = c.out_dir.string();
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

std::string apply_config_override(const std::string& json_text,
                                  const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InputError("--set expects key=value, got: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json j = parse_json(json_text, "config");
  json* cur = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot - pos);
    if (key.empty()) throw InputError("--set: empty path component in " + path);
    if (dot == std::string::npos) {
      json v;
      try {
        v = json::parse(value);
      } catch (const json::exception&) {
        v = value;  // unquoted strings (paths, expressions)
      }
      (*cur)[key] = v;
      break;
    }
    cur = &((*cur)[key]);
    pos = dot + 1;
  }
  return j.dump(2) + "\n";
}

// ---- checkpoints ----

std::string checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["split"] = c.split;
  j["patience"] = c.patience;
  j["best_total_val"] = c.best_total_val;
  j["seed"] = c.model.seed;
  j["stopped_epoch"] = c.model.stopped_epoch;
  j["scaling"] = scaling_to_json(c.model.scaling);
  j["tv_split"] = {{"fraction", c.model.split.fraction},
                   {"seed", c.model.split.seed},
                   {"train_idx", c.model.split.train_idx},
                   {"val_idx", c.model.split.val_idx}};
  j["u_net"] = json::parse(network_to_json(c.model.u_net));
  j["d_net"] = json::parse(network_to_json(c.model.d_net));
  j["g_net"] = json::parse(network_to_json(c.model.g_net));
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text, const std::string& context) {
  const json j = parse_json(text, context);
  Checkpoint c;
  c.split = field_as<int>(j, "split", context);
  c.patience = field_as<int>(j, "patience", context);
  c.best_total_val = field_as<double>(j, "best_total_val", context);
  c.model.seed = field_as<std::uint64_t>(j, "seed", context);
  c.model.stopped_epoch = field_as<int>(j, "stopped_epoch", context);
  c.model.scaling = scaling_from_json(need(j, "scaling", context), context + ".scaling");
  const json& tv = need(j, "tv_split", context);
  c.model.split.fraction = field_as<double>(tv, "fraction", context + ".tv_split");
  c.model.split.seed = field_as<std::uint64_t>(tv, "seed", context + ".tv_split");
  c.model.split.train_idx =
      field_as<std::vector<std::uint32_t>>(tv, "train_idx", context + ".tv_split");
  c.model.split.val_idx =
      field_as<std::vector<std::uint32_t>>(tv, "val_idx", context + ".tv_split");
  c.model.u_net = network_from_json(need(j, "u_net", context).dump(), context + ".u_net");
  c.model.d_net = network_from_json(need(j, "d_net", context).dump(), context + ".d_net");
  c.model.g_net = network_from_json(need(j, "g_net", context).dump(), context + ".g_net");
  return c;
}

std::filesystem::path checkpoint_path(const RunConfig& cfg, int split, int patience) {
  return cfg.out_dir / "models" /
         ("split" + std::to_string(split) + "_p" + std::to_string(patience) + ".json");
}

PreferredEs preferred_es_from_json(const std::string& text, const std::string& context) {
  const json j = parse_json(text, context);
  PreferredEs p;
  p.patience = field_as<int>(j, "patience", context);
  p.patiences = field_as<std::vector<int>>(j, "patiences", context);
  p.median_val_loss = field_as<std::vector<double>>(j, "median_val_loss", context);
  if (p.patiences.size() != p.median_val_loss.size())
    throw InputError(context + ": patiences and median_val_loss sizes differ");
  return p;
}

// ---- stages ----

void cmd_synth(const RunConfig& cfg, bool force) {
  if (!cfg.synth.has_value())
    throw InputError("synth: config has no input.synth section");
  const SynthSpec& sp = *cfg.synth;
  StageClock clock;
  fs::create_directories(cfg.out_dir);

  const fs::path clean_path = cfg.out_dir / "synth_clean.csv";
  const fs::path noisy_path = cfg.out_dir / "synth_noisy.csv";
  const fs::path points_path = cfg.out_dir / "points.csv";
  std::vector<fs::path> outputs{clean_path, noisy_path};
  if (sp.emit_points) outputs.push_back(points_path);
  refuse_existing(outputs, force);

  TrueModel model;
  Scaling d_ref, g_ref;
  d_ref.density = sp.diffusion.u_ref;
  g_ref.density = sp.growth.u_ref;
  model.D = rate_symbolic(parse_expression(sp.diffusion.expr), d_ref);
  model.G = rate_symbolic(parse_expression(sp.growth.expr), g_ref);
  model.ic = bumps_ic(sp.domain, sp.n_x1, sp.n_x2, sp.domain.t_min, sp.bumps,
                      sp.voids);
  model.descriptor = "D(u/" + io::fmt(sp.diffusion.u_ref) + ") = " +
                     sp.diffusion.expr + "; G(u/" + io::fmt(sp.growth.u_ref) +
                     ") = " + sp.growth.expr;

  const DensityField clean = generate_clean(model, sp.times, cfg.solve);
  NoiseSpec noise{sp.noise_gamma, sp.noise_omega, derive_seed(cfg.seed, kTagNoise)};
  const DensityField noisy = apply_noise(clean, noise);

  io::write_density_csv(clean, clean_path);
  io::write_density_csv(noisy, noisy_path);
  std::vector<std::string> names{rel_name(cfg, clean_path), rel_name(cfg, noisy_path)};
  if (sp.emit_points) {
    const PointCloud cloud = sample_points(noisy, derive_seed(cfg.seed, kTagSample));
    io::write_points_csv(cloud, points_path);
    names.push_back(rel_name(cfg, points_path));
  }
  record_stage(cfg, "synth", clock.seconds(), names,
               {{"model", model.descriptor}});
}

void cmd_preprocess(const RunConfig& cfg, bool force) {
  StageClock clock;
  fs::create_directories(cfg.out_dir);
  const fs::path out_path = density_path(cfg);
  refuse_existing({out_path}, force);

  DensityField field;
  if (!cfg.density_csv.empty()) {
    field = io::read_density_csv(cfg.density_csv);
  } else if (cfg.synth.has_value() && !cfg.synth->emit_points) {
    const fs::path src = cfg.out_dir / "synth_noisy.csv";
    if (!fs::exists(src))
      throw InputError(src.string() + " not found; run the synth stage first");
    field = io::read_density_csv(src);
  } else {
    fs::path src;
    Domain domain;
    bool have_domain = false;
    if (cfg.synth.has_value()) {
      src = cfg.out_dir / "points.csv";
      if (!fs::exists(src))
        throw InputError(src.string() + " not found; run the synth stage first");
      domain = cfg.synth->domain;
      have_domain = true;
    } else {
      src = cfg.points_csv;
      if (cfg.points_domain.has_value()) {
        domain = *cfg.points_domain;
        have_domain = true;
      }
    }
    const PointCloud cloud = io::read_points_csv(src);
    if (cloud.records.empty()) {
      if (!have_domain)
        throw InputError(src.string() +
                         ": empty point cloud and no input.domain to bin into");
      std::cerr << "warning: " << src.string()
                << " has no records; writing an all-zero density tensor\n";
      field = DensityField(domain, bin_count(domain.extent_x1(), cfg.bin_size),
                           bin_count(domain.extent_x2(), cfg.bin_size),
                           cfg.bin_size, cfg.bin_size, {domain.t_min});
    } else {
      if (!have_domain) {
        domain = Domain{0, 0, 0, 0, 0, 0};
        auto lo = [](double a, double b) { return std::min(a, b); };
        auto hi = [](double a, double b) { return std::max(a, b); };
        domain.x1_min = domain.x1_max = cloud.records.front().x1;
        domain.x2_min = domain.x2_max = cloud.records.front().x2;
        for (const PointRecord& r : cloud.records) {
          domain.x1_min = lo(domain.x1_min, r.x1);
          domain.x1_max = hi(domain.x1_max, r.x1);
          domain.x2_min = lo(domain.x2_min, r.x2);
          domain.x2_max = hi(domain.x2_max, r.x2);
        }
        domain.t_min = cloud.frame_times.front();
        domain.t_max = cloud.frame_times.back();
      }
      field = bin_points(cloud, domain, cfg.bin_size);
    }
  }
  io::write_density_csv(field, out_path);
  record_stage(cfg, "preprocess", clock.seconds(), {rel_name(cfg, out_path)},
               {{"shape", {field.n_x1(), field.n_x2(), field.n_t()}}});
}

void cmd_train(const RunConfig& cfg, bool force, int jobs) {
  StageClock clock;
  const DensityField field = load_density(cfg);
  fs::create_directories(cfg.out_dir / "models");
  fs::create_directories(cfg.out_dir / "traces");

  const fs::path summary_path = cfg.out_dir / "train_summary.csv";
  std::vector<fs::path> outputs{summary_path, preferred_path(cfg)};
  for (int i = 0; i < cfg.n_splits; ++i)
    for (int p : cfg.es_patience_sweep) {
      outputs.push_back(checkpoint_path(cfg, i, p));
      outputs.push_back(cfg.out_dir / "traces" /
                        ("split" + std::to_string(i) + "_p" + std::to_string(p) +
                         ".csv"));
    }
  refuse_existing(outputs, force);

  std::vector<std::vector<TrainResult>> results(std::size_t(cfg.n_splits));
  run_jobs(cfg.n_splits, jobs, [&](int i) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, kTagTrainSplit + std::uint64_t(i));
    results[std::size_t(i)] = train_multi(field, tc, cfg.es_patience_sweep);
  });

  std::ostringstream summary;
  summary << "split,patience,stopped_epoch,best_total_val\n";
  json walls = json::array();
  for (int i = 0; i < cfg.n_splits; ++i) {
    json split_walls = json::object();
    for (const TrainResult& r : results[std::size_t(i)]) {
      Checkpoint c{i, r.patience, best_total_val(r.model), r.model};
      io::atomic_write(checkpoint_path(cfg, i, r.patience), checkpoint_to_json(c));
      io::atomic_write(cfg.out_dir / "traces" /
                           ("split" + std::to_string(i) + "_p" +
                            std::to_string(r.patience) + ".csv"),
                       trace_csv(r.model));
      summary << i << ',' << r.patience << ',' << r.model.stopped_epoch << ','
              << io::fmt(c.best_total_val) << '\n';
      split_walls[std::to_string(r.patience)] = r.wall_seconds;
    }
    walls.push_back(split_walls);
  }
  io::atomic_write(summary_path, summary.str());

  // Preferred patience: smallest whose median validation loss is within
  // tolerance of the best median.
  std::vector<int> patiences = cfg.es_patience_sweep;
  std::sort(patiences.begin(), patiences.end());
  std::vector<double> medians;
  for (int p : patiences) {
    std::vector<double> vals;
    for (int i = 0; i < cfg.n_splits; ++i)
      for (const TrainResult& r : results[std::size_t(i)])
        if (r.patience == p) vals.push_back(best_total_val(r.model));
    medians.push_back(percentile(std::move(vals), 50.0));
  }
  const double best = *std::min_element(medians.begin(), medians.end());
  int chosen = patiences.back();
  for (std::size_t k = 0; k < patiences.size(); ++k)
    if (medians[k] <= best * (1.0 + cfg.preferred_es_tolerance)) {
      chosen = patiences[k];
      break;
    }
  json pj;
  pj["patience"] = chosen;
  pj["patiences"] = patiences;
  pj["median_val_loss"] = medians;
  pj["tolerance"] = cfg.preferred_es_tolerance;
  io::atomic_write(preferred_path(cfg), pj.dump(2) + "\n");

  std::vector<std::string> names;
  for (const fs::path& p : outputs) names.push_back(rel_name(cfg, p));
  record_stage(cfg, "train", clock.seconds(), names,
               {{"wall_seconds_per_split", walls},
                {"preferred_patience", chosen}});
}

void cmd_ensemble_sr(const RunConfig& cfg, bool force) {
  StageClock clock;
  const DensityField field = load_density(cfg);
  const PreferredEs pes = load_preferred(cfg);

  const fs::path curve_d_path = cfg.out_dir / "curve_D.csv";
  const fs::path curve_g_path = cfg.out_dir / "curve_G.csv";
  const fs::path support_path = cfg.out_dir / "support.json";
  const fs::path cand_d_path = cfg.out_dir / "sr_D_candidates.csv";
  const fs::path cand_g_path = cfg.out_dir / "sr_G_candidates.csv";
  refuse_existing({curve_d_path, curve_g_path, support_path,
                   sr_model_path(cfg, CurveKind::kDiffusion), cand_d_path,
                   sr_model_path(cfg, CurveKind::kGrowth), cand_g_path},
                  force);

  std::vector<Checkpoint> checkpoints = load_checkpoints(cfg, pes.patience);
  std::vector<BinnModel> models;
  models.reserve(checkpoints.size());
  for (Checkpoint& c : checkpoints) models.push_back(std::move(c.model));

  const EnsemblePair pair = ensemble_curves(field, models);
  write_curve_csv(pair.diffusion, curve_d_path);
  write_curve_csv(pair.growth, curve_g_path);
  json support;
  support["lo"] = pair.bounds.lo;
  support["hi"] = pair.bounds.hi;
  json intervals = json::array();
  for (const auto& [lo, hi] : pair.bounds.split_intervals)
    intervals.push_back({lo, hi});
  support["split_intervals"] = intervals;
  io::atomic_write(support_path, support.dump(2) + "\n");

  const auto fit_one = [&](const EnsembleCurve& curve, CurveKind kind,
                           std::uint64_t tag, const fs::path& cand_path) {
    const auto cands = sr_fit_repeats(curve, cfg.sr, derive_seed(cfg.seed, tag));
    write_candidates_csv(cands, cand_path);
    const SymbolicModel m = select_best(cands);
    io::atomic_write(sr_model_path(cfg, kind), symbolic_model_to_json(m) + "\n");
    return m;
  };
  const SymbolicModel dm =
      fit_one(pair.diffusion, CurveKind::kDiffusion, kTagSrDiffusion, cand_d_path);
  const SymbolicModel gm =
      fit_one(pair.growth, CurveKind::kGrowth, kTagSrGrowth, cand_g_path);

  record_stage(cfg, "ensemble-sr", clock.seconds(),
               {rel_name(cfg, curve_d_path), rel_name(cfg, curve_g_path),
                rel_name(cfg, support_path),
                rel_name(cfg, sr_model_path(cfg, CurveKind::kDiffusion)),
                rel_name(cfg, cand_d_path),
                rel_name(cfg, sr_model_path(cfg, CurveKind::kGrowth)),
                rel_name(cfg, cand_g_path)},
               {{"selected_D", dm.expression}, {"selected_G", gm.expression}});
}

void cmd_evaluate(const RunConfig& cfg, bool force) {
  StageClock clock;
  const DensityField field = load_density(cfg);

  const fs::path counts_path = cfg.out_dir / "counts.csv";
  const fs::path metrics_path = cfg.out_dir / "metrics.csv";
  refuse_existing({counts_path, metrics_path}, force);

  CountCurves curves;
  curves.times = field.times();
  curves.n_data = count_from_solve(field);

  const bool have_models = fs::exists(preferred_path(cfg));
  if (have_models) {
    const PreferredEs pes = load_preferred(cfg);
    std::vector<Checkpoint> checkpoints = load_checkpoints(cfg, pes.patience);
    std::size_t best = 0;
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
      if (checkpoints[i].best_total_val < checkpoints[best].best_total_val)
        best = i;
    const BinnModel& m = checkpoints[best].model;

    curves.n_u = count_from_net(m.u_net, m.scaling, field, curves.times);
    const DensityField ic = ic_from_density_net(m.u_net, m.scaling, field);
    const SolveResult fwd =
        solve_rd(rate_diffusion_net(m.d_net, m.scaling),
                 rate_growth_net(m.g_net, m.scaling), ic, curves.times, cfg.solve);
    curves.n_fwd = count_from_solve(fwd.field);

    const fs::path dpath = sr_model_path(cfg, CurveKind::kDiffusion);
    const fs::path gpath = sr_model_path(cfg, CurveKind::kGrowth);
    if (fs::exists(dpath) && fs::exists(gpath)) {
      const SymbolicModel dm =
          symbolic_model_from_json(io::read_file(dpath), dpath.string());
      const SymbolicModel gm =
          symbolic_model_from_json(io::read_file(gpath), gpath.string());
      const SolveResult sr_solve =
          solve_rd(rate_symbolic(parse_expression(dm.expression), m.scaling),
                   rate_symbolic(parse_expression(gm.expression), m.scaling), ic,
                   curves.times, cfg.solve);
      curves.n_sr = count_from_solve(sr_solve.field);
    } else {
      std::cerr << "warning: SR model files not found; omitting the N_SR curve\n";
    }
  } else {
    std::cerr << "warning: no trained models found; emitting N_data only\n";
  }

  write_count_curves_csv(curves, counts_path);
  std::ostringstream ms;
  ms << "curve,rel_l2,final_err\n";
  for (const CurveMetrics& m : compare(curves))
    ms << m.name << ',' << io::fmt(m.rel_l2) << ',' << io::fmt(m.final_err) << '\n';
  io::atomic_write(metrics_path, ms.str());

  record_stage(cfg, "evaluate", clock.seconds(),
               {rel_name(cfg, counts_path), rel_name(cfg, metrics_path)});
}

void cmd_run_all(const RunConfig& cfg, bool force, int jobs) {
  if (cfg.synth.has_value()) cmd_synth(cfg, force);
  cmd_preprocess(cfg, force);
  cmd_train(cfg, force, jobs);
  cmd_ensemble_sr(cfg, force);
  cmd_evaluate(cfg, force);
}

}  // namespace rdbinn
