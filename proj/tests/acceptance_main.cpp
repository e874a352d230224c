// Acceptance suite: one PASS/FAIL line per criterion, exit code = number of
// failures. Optional arguments select a subset, e.g. "acceptance C2 C6".
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rdbinn/binn.hpp"
#include "rdbinn/ensemble.hpp"
#include "rdbinn/eval.hpp"
#include "rdbinn/grid.hpp"
#include "rdbinn/io.hpp"
#include "rdbinn/mlp.hpp"
#include "rdbinn/rng.hpp"
#include "rdbinn/solver.hpp"
#include "rdbinn/sr.hpp"
#include "rdbinn/synth.hpp"

using namespace rdbinn;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Relative agreement with a floor so true zeros compare by magnitude.
double rel_err(double got, double want, double floor_abs) {
  return std::abs(got - want) /
         std::max({std::abs(got), std::abs(want), floor_abs});
}

double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

// ---------------------------------------------------------------- C1

bool run_c1(std::string& detail) {
  Timer timer;
  Rng rng(101);
  double worst_param = 0.0, worst_d1 = 0.0, worst_d2 = 0.0;

  for (int trial = 0; trial < 50; ++trial) {
    const auto rand_widths = [&](int max_depth) {
      std::vector<int> w(1 + rng.below(std::size_t(max_depth)));
      for (int& x : w) x = 2 + int(rng.below(7));  // widths 2..8
      return w;
    };
    Network u = make_mlp(3, rand_widths(2), Activation::kSiLU,
                         Activation::kSoftplus);
    Network dn = make_mlp(1, rand_widths(2), Activation::kSiLU,
                          Activation::kSoftplus);
    Network gn = make_mlp(1, rand_widths(2), Activation::kSiLU,
                          Activation::kLinear);
    init_params(u, rng);
    init_params(dn, rng);
    init_params(gn, rng);

    Domain dom{0.0, 1.2, 0.0, 0.9, 0.0, 1.5};
    DensityField field(dom, 4, 3, 0.3, 0.3, {0.0, 0.75, 1.5});
    for (auto& v : field.values()) v = rng.uniform(0.0, 20.0);
    const Scaling sc = make_scaling(field);
    std::vector<std::uint32_t> idx(field.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::vector<ScaledPoint> pts;
    for (int k = 0; k < 6; ++k)
      pts.push_back({rng.uniform01(), rng.uniform01(), rng.uniform01()});

    TrainConfig data_only, pde_only, both;
    data_only.lambda_pde = 0.0;
    pde_only.lambda_data = 0.0;
    both.lambda_data = 0.7;
    both.lambda_pde = 1.3;

    std::vector<double> gu(u.param_count()), gd(dn.param_count()),
        gg(gn.param_count());
    for (const TrainConfig& cfg : {data_only, pde_only, both}) {
      loss_and_gradients(u, dn, gn, field, sc, idx, pts, cfg, gu, gd, gg);
      const auto check_net = [&](Network& net, const std::vector<double>& grad) {
        for (std::size_t i = 0; i < net.param_count(); ++i) {
          const double keep = net.params[i];
          const double h = 1e-5 * std::max(1.0, std::abs(keep));
          net.params[i] = keep + h;
          const double lp = total_loss(u, dn, gn, field, sc, idx, pts, cfg).total;
          net.params[i] = keep - h;
          const double lm = total_loss(u, dn, gn, field, sc, idx, pts, cfg).total;
          net.params[i] = keep;
          worst_param = std::max(
              worst_param, rel_err(grad[i], (lp - lm) / (2.0 * h), 1e-8));
        }
      };
      check_net(u, gu);
      check_net(dn, gd);
      check_net(gn, gg);
    }

    // input first/second derivatives of the three surrogates
    Evaluator ev_u(u), ev_d(dn), ev_g(gn);
    DualWork<3> w3;
    DualWork<1> w1;
    const double x0[3] = {rng.uniform01(), rng.uniform01(), rng.uniform01()};
    {
      std::vector<ad::Dual<3>> x(3);
      for (int k = 0; k < 3; ++k) {
        x[k].v = x0[k];
        x[k].d1[k] = 1.0;
      }
      const ad::Dual<3> out = eval_dual<3>(u, x, w3);
      for (int k = 0; k < 3; ++k) {
        const double h1 = 1e-4, h2 = 1e-3;
        double xp[3] = {x0[0], x0[1], x0[2]}, xm[3] = {x0[0], x0[1], x0[2]};
        xp[k] += h1;
        xm[k] -= h1;
        const double d1 = (ev_u(xp) - ev_u(xm)) / (2.0 * h1);
        xp[k] = x0[k] + h2;
        xm[k] = x0[k] - h2;
        const double d2 =
            (ev_u(xp) - 2.0 * ev_u(std::span<const double>(x0, 3)) + ev_u(xm)) /
            (h2 * h2);
        worst_d1 = std::max(worst_d1, rel_err(out.d1[k], d1, 1e-7));
        worst_d2 = std::max(worst_d2, rel_err(out.d2[k], d2, 1e-5));
      }
    }
    for (Network* net : {&dn, &gn}) {
      Evaluator ev(*net);
      std::vector<ad::Dual<1>> x(1);
      x[0].v = x0[0];
      x[0].d1[0] = 1.0;
      const ad::Dual<1> out = eval_dual<1>(*net, x, w1);
      const double h1 = 1e-4, h2 = 1e-3;
      const double d1 = (ev.eval1(x0[0] + h1) - ev.eval1(x0[0] - h1)) / (2.0 * h1);
      const double d2 = (ev.eval1(x0[0] + h2) - 2.0 * ev.eval1(x0[0]) +
                         ev.eval1(x0[0] - h2)) /
                        (h2 * h2);
      worst_d1 = std::max(worst_d1, rel_err(out.d1[0], d1, 1e-7));
      worst_d2 = std::max(worst_d2, rel_err(out.d2[0], d2, 1e-5));
    }
  }

  const double secs = timer.seconds();
  detail = "50 nets: param grad rel " + fmt("%.1e", worst_param) +
           " (<1e-4), input d1 " + fmt("%.1e", worst_d1) + " (<1e-5), d2 " +
           fmt("%.1e", worst_d2) + " (<1e-3), " + fmt("%.1f", secs) + "s (<60s)";
  return worst_param < 1e-4 && worst_d1 < 1e-5 && worst_d2 < 1e-3 && secs < 60.0;
}

// ---------------------------------------------------------------- C2

bool run_c2(std::string& detail) {
  Timer timer;

  // (a) mass conservation with G = 0 under no-flux boundaries
  Domain dom{0.0, 1.5, 0.0, 1.1, 0.0, 2.0};
  DensityField ic(dom, 24, 18, 1.5 / 24, 1.1 / 18, {0.0});
  Rng rng(202);
  for (auto& v : ic.values()) v = rng.uniform(0.0, 25.0);
  double m0 = 0.0;
  for (double v : ic.values()) m0 += v;
  RateFn D;
  D.kind = RateFn::Kind::kSymbolic;
  D.f = [](double u) { return 0.01 + 0.004 * u; };
  const SolveResult cons = solve_rd(D, rate_constant(0.0), ic, {0.5, 1.0, 2.0});
  double mass_drift = 0.0;
  for (int s = 0; s < cons.field.n_t(); ++s)
    mass_drift =
        std::max(mass_drift, std::abs(total_count(cons.field, s) - m0) / m0);

  // (b) spatially uniform logistic growth vs the closed form
  const double r = 0.9, cap = 38.0, u0 = 7.0;
  DensityField uic(dom, 6, 5, 0.25, 0.22, {0.0});
  for (auto& v : uic.values()) v = u0;
  RateFn G;
  G.kind = RateFn::Kind::kSymbolic;
  G.f = [=](double u) { return r * (1.0 - u / cap); };
  SolveSpec lspec;
  lspec.max_dt = 0.05;
  const std::vector<double> ltimes = {0.5, 1.0, 2.0};
  const SolveResult logi = solve_rd(rate_constant(0.0), G, uic, ltimes, lspec);
  double logistic_err = 0.0;
  for (std::size_t s = 0; s < ltimes.size(); ++s) {
    const double e = std::exp(r * ltimes[s]);
    const double want = cap * u0 * e / (cap + u0 * (e - 1.0));
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 5; ++j)
        logistic_err = std::max(
            logistic_err, std::abs(logi.field.at(i, j, int(s)) - want) / want);
  }

  // (c) observed spatial convergence order from self-convergence against a
  // block-averaged fine reference
  Domain sq{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  RateFn Dc;
  Dc.kind = RateFn::Kind::kSymbolic;
  Dc.f = [](double u) { return 0.01 + 0.05 * u; };
  const auto ic_on = [&](int n) {
    DensityField f(sq, n, n, 1.0 / n, 1.0 / n, {0.0});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        f.at(i, j, 0) = 1.0 + 0.3 * std::cos(M_PI * f.center_x1(i)) *
                                  std::cos(2.0 * M_PI * f.center_x2(j));
    return f;
  };
  const DensityField fine_ic = ic_on(80);
  const auto restrict_frame = [](const DensityField& fine, int factor) {
    const int n = fine.n_x1() / factor;
    std::vector<double> out(std::size_t(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b)
            acc += fine.at(i * factor + a, j * factor + b, 0);
        out[std::size_t(i) * n + j] = acc / (factor * factor);
      }
    return out;
  };
  const auto coarse_solve = [&](int factor) {
    const int n = 80 / factor;
    DensityField f(sq, n, n, 1.0 / n, 1.0 / n, {0.0});
    f.values() = restrict_frame(fine_ic, factor);
    return solve_rd(Dc, rate_constant(0.0), f, {1.0});
  };
  const SolveResult ref = coarse_solve(1);
  const auto err_at = [&](int factor) {
    const auto want = restrict_frame(ref.field, factor);
    const SolveResult got = coarse_solve(factor);
    double acc = 0.0;
    for (std::size_t k = 0; k < want.size(); ++k)
      acc += (got.field.values()[k] - want[k]) * (got.field.values()[k] - want[k]);
    return std::sqrt(acc / double(want.size()));
  };
  const double e10 = err_at(8), e20 = err_at(4);
  const double order = std::log2(e10 / e20);

  const double secs = timer.seconds();
  detail = "mass drift " + fmt("%.1e", mass_drift) + " (<1e-8), logistic err " +
           fmt("%.1e", logistic_err) + " (<1e-4), order " + fmt("%.2f", order) +
           " (>=1.8), " + fmt("%.1f", secs) + "s (<120s)";
  return mass_drift < 1e-8 && logistic_err < 1e-4 && order >= 1.8 &&
         secs < 120.0;
}

// ------------------------------------------------- round-trip (C3, C4, C5)

constexpr std::uint64_t kRoundTripSeed = 7;

struct RoundTrip {
  DensityField field;     // noisy 15x11x9 observations
  TrueModel truth;        // planted model (geometry consumed by generate)
  std::vector<double> times;
  std::vector<std::vector<TrainResult>> results;  // [split][patience]
  double train_seconds = 0.0;
};

SrConfig acceptance_sr_config() {
  SrConfig sr;
  sr.population = 120;
  sr.generations = 100;
  sr.repeats = 10;
  return sr;
}

RoundTrip build_round_trip() {
  RoundTrip rt;
  Domain dom{0.0, 1.5, 0.0, 1.1, 0.0, 2.0};
  const std::vector<Bump> bumps = {{0.45, 0.30, 0.22, 16.0},
                                   {1.05, 0.75, 0.28, 14.0},
                                   {0.35, 0.85, 0.18, 10.0}};
  const std::vector<Bump> voids = {{0.80, 0.45, 0.25, 0.8}};
  DensityField ic = bumps_ic(dom, 15, 11, 0.0, bumps, voids);

  const double u_ref = 40.0;  // also the carrying capacity: G = 1 - u/u_ref
  rt.truth = reference_model(std::move(ic), u_ref, u_ref);
  for (int s = 0; s < 9; ++s) rt.times.push_back(0.25 * s);
  const DensityField clean = generate_clean(rt.truth, rt.times);

  NoiseSpec noise{0.0, 0.1 * clean.max_value(),
                  derive_seed(kRoundTripSeed, 10)};
  rt.field = apply_noise(clean, noise);

  TrainConfig tc;
  tc.n_c = 256;
  const std::vector<int> patiences = {500, 1000, 2000};
  Timer timer;
  rt.results.resize(5);
  for (int i = 0; i < 5; ++i) {
    tc.seed = derive_seed(kRoundTripSeed, 100 + std::uint64_t(i));
    rt.results[std::size_t(i)] = train_multi(rt.field, tc, patiences);
  }
  rt.train_seconds = timer.seconds();
  return rt;
}

std::vector<BinnModel> models_at(const RoundTrip& rt, int patience) {
  std::vector<BinnModel> models;
  for (const auto& split : rt.results)
    for (const TrainResult& r : split)
      if (r.patience == patience) models.push_back(r.model);
  return models;
}

double best_val_of(const BinnModel& m) {
  double best = std::numeric_limits<double>::infinity();
  for (const EpochTrace& e : m.trace) best = std::min(best, e.total_val);
  return best;
}

bool run_c3(const RoundTrip& rt, std::string& detail,
            EnsemblePair& pair_out, SymbolicModel& dm_out,
            SymbolicModel& gm_out) {
  const std::vector<BinnModel> models = models_at(rt, 500);
  pair_out = ensemble_curves(rt.field, models);
  const EnsemblePair& pair = pair_out;
  const Scaling sc = make_scaling(rt.field);

  // monotonicity over the central 90% of the support
  const double span = pair.bounds.hi - pair.bounds.lo;
  const double lo = pair.bounds.lo + 0.05 * span;
  const double hi = pair.bounds.hi - 0.05 * span;
  const double slack = 1e-12;
  bool g_dec = true, d_inc = true;
  const auto central = [&](const EnsembleCurve& c, std::size_t k) {
    return c.U[k] >= lo && c.U[k] <= hi && c.U[k - 1] >= lo && c.U[k - 1] <= hi;
  };
  for (std::size_t k = 1; k < pair.growth.U.size(); ++k)
    if (central(pair.growth, k) &&
        pair.growth.values[k] - pair.growth.values[k - 1] > slack)
      g_dec = false;
  for (std::size_t k = 1; k < pair.diffusion.U.size(); ++k)
    if (central(pair.diffusion, k) &&
        pair.diffusion.values[k] - pair.diffusion.values[k - 1] < -slack)
      d_inc = false;

  // SR template recovery on both ensemble curves
  const SrConfig sr = acceptance_sr_config();
  dm_out = select_best(
      sr_fit_repeats(pair.diffusion, sr, derive_seed(kRoundTripSeed, 12)));
  gm_out = select_best(
      sr_fit_repeats(pair.growth, sr, derive_seed(kRoundTripSeed, 13)));
  const std::string want_d =
      canonical_template(normalize(parse_expression("0.01 + 0.02*exp(2*U)")));
  const std::string want_g =
      canonical_template(normalize(parse_expression("1.0 - 1.0*U")));
  const bool tpl_ok =
      dm_out.template_key == want_d && gm_out.template_key == want_g;

  // growth-curve accuracy over the support, relative to the true scale
  double sup_err = 0.0, sup_true = 0.0, ptwise = 0.0;
  for (std::size_t k = 0; k < pair.growth.U.size(); ++k) {
    const double gt = rt.truth.G(pair.growth.U[k] * sc.density);
    const double err = std::abs(pair.growth.values[k] - gt);
    sup_err = std::max(sup_err, err);
    sup_true = std::max(sup_true, std::abs(gt));
    ptwise = std::max(ptwise, err / std::max(std::abs(gt), 1e-12));
  }
  const double g_rel = sup_err / sup_true;

  detail = std::string("G dec ") + (g_dec ? "yes" : "NO") + ", D inc " +
           (d_inc ? "yes" : "NO") + ", templates " +
           (tpl_ok ? "match" : "D=" + dm_out.template_key +
                                   " G=" + gm_out.template_key) +
           ", G err " + fmt("%.1f", 100.0 * g_rel) + "% of scale (<15%, ptwise " +
           fmt("%.0f", 100.0 * ptwise) + "%), train " +
           fmt("%.0f", rt.train_seconds) + "s (<1800s)";
  return g_dec && d_inc && tpl_ok && g_rel < 0.15 &&
         rt.train_seconds < 1800.0;
}

bool run_c4(const RoundTrip& rt, const SymbolicModel& dm,
            const SymbolicModel& gm, std::string& detail) {
  const std::vector<BinnModel> models = models_at(rt, 500);
  std::size_t best = 0;
  for (std::size_t i = 1; i < models.size(); ++i)
    if (best_val_of(models[i]) < best_val_of(models[best])) best = i;
  const BinnModel& m = models[best];

  CountCurves curves;
  curves.times = rt.times;
  curves.n_data = count_from_solve(rt.field);
  curves.n_u = count_from_net(m.u_net, m.scaling, rt.field, rt.times);
  const DensityField ic = ic_from_density_net(m.u_net, m.scaling, rt.field);
  curves.n_fwd = count_from_solve(
      solve_rd(rate_diffusion_net(m.d_net, m.scaling),
               rate_growth_net(m.g_net, m.scaling), ic, rt.times)
          .field);
  curves.n_sr = count_from_solve(
      solve_rd(rate_symbolic(parse_expression(dm.expression), m.scaling),
               rate_symbolic(parse_expression(gm.expression), m.scaling), ic,
               rt.times)
          .field);

  const std::vector<CurveMetrics> metrics = compare(curves);
  double fwd_vs_sr = 0.0, norm = 0.0;
  for (std::size_t s = 0; s < curves.n_fwd.size(); ++s) {
    fwd_vs_sr += (curves.n_fwd[s] - curves.n_sr[s]) *
                 (curves.n_fwd[s] - curves.n_sr[s]);
    norm += curves.n_sr[s] * curves.n_sr[s];
  }
  fwd_vs_sr = std::sqrt(fwd_vs_sr) / std::sqrt(norm);

  bool ok = fwd_vs_sr < 0.05;
  detail.clear();
  for (const CurveMetrics& cm : metrics) {
    ok = ok && cm.rel_l2 < 0.10;
    detail += cm.name + " relL2 " + fmt("%.3f", cm.rel_l2) + ", ";
  }
  detail += "fwd vs SR " + fmt("%.3f", fwd_vs_sr) + " (<0.05; others <0.10)";
  return ok;
}

bool run_c5(const RoundTrip& rt, std::string& detail) {
  const std::vector<int> patiences = {500, 1000, 2000};
  std::vector<double> med_wall, med_val;
  for (int p : patiences) {
    std::vector<double> walls, vals;
    for (const auto& split : rt.results)
      for (const TrainResult& r : split)
        if (r.patience == p) {
          walls.push_back(r.wall_seconds);
          vals.push_back(best_val_of(r.model));
        }
    med_wall.push_back(median(walls));
    med_val.push_back(median(vals));
  }
  const bool wall_up = med_wall[0] < med_wall[1] && med_wall[1] < med_wall[2];
  const double improvement = (med_val[0] - med_val[2]) / med_val[0];

  detail = "median wall " + fmt("%.1f", med_wall[0]) + "/" +
           fmt("%.1f", med_wall[1]) + "/" + fmt("%.1f", med_wall[2]) +
           "s strictly up: " + (wall_up ? "yes" : "NO") +
           ", val improvement 500 to 2000 " + fmt("%.1f", 100.0 * improvement) +
           "% (<10%)";
  return wall_up && improvement < 0.10;
}

// ---------------------------------------------------------------- C6

bool run_c6(std::string& detail) {
  Timer timer;
  struct Planted {
    const char* text;
    CurveKind kind;
  };
  const std::vector<Planted> planted = {
      {"0.01 + 0.02*exp(2*U)", CurveKind::kDiffusion},
      {"0.05 + 0.04*exp(3*U)", CurveKind::kDiffusion},
      {"0.004 + 0.03*square(U)*exp(1.5*U)", CurveKind::kDiffusion},
      {"0.8 - 0.5*U", CurveKind::kGrowth},
      {"1.2 - 0.7*U", CurveKind::kGrowth},
      {"1.1 - 0.6*U - 0.35*U*sqrt(U)", CurveKind::kGrowth},
  };
  const SrConfig sr = acceptance_sr_config();

  std::ostringstream os;
  bool all_ok = true;
  for (std::size_t pi = 0; pi < planted.size(); ++pi) {
    const Expr truth = normalize(parse_expression(planted[pi].text));
    std::vector<double> want;
    for (const ExprNode& n : truth.nodes)
      if (n.op == ExprOp::kConst) want.push_back(n.value);
    std::sort(want.begin(), want.end());

    EnsembleCurve curve;
    curve.kind = planted[pi].kind;
    for (int k = 0; k < 33; ++k) {
      const double u = double(k) / 32.0;
      curve.U.push_back(u);
      curve.values.push_back(expr_eval(truth, u));
      curve.weights.push_back(1.0 / 33.0);
    }

    int recovered = 0;
    for (int run = 0; run < 10; ++run) {
      const SymbolicModel m = select_best(sr_fit_repeats(
          curve, sr, derive_seed(0xC6, 100 * std::uint64_t(run) + pi)));
      if (m.template_key != canonical_template(truth)) continue;
      std::vector<double> got;
      const Expr e = parse_expression(m.expression);
      for (const ExprNode& n : e.nodes)
        if (n.op == ExprOp::kConst) got.push_back(n.value);
      std::sort(got.begin(), got.end());
      if (got.size() != want.size()) continue;
      bool coeffs_ok = true;
      for (std::size_t k = 0; k < got.size(); ++k)
        if (std::abs(got[k] - want[k]) > 0.05 * std::abs(want[k]))
          coeffs_ok = false;
      if (coeffs_ok) ++recovered;
    }
    all_ok = all_ok && recovered >= 8;
    os << recovered << "/10 ";
  }
  const double secs = timer.seconds();
  detail = "recovered " + os.str() + "(each >=8/10), " + fmt("%.0f", secs) +
           "s (<600s)";
  return all_ok && secs < 600.0;
}

// ---------------------------------------------------------------- C7

#ifndef RDBINN_CLI_PATH
#define RDBINN_CLI_PATH "rd-binn"
#endif

bool run_c7(std::string& detail) {
  const fs::path base = fs::temp_directory_path() / "rdbinn_acceptance_c7";
  fs::remove_all(base);
  fs::create_directories(base);

  const std::string config = R"({
  "input": {
    "synth": {
      "domain": {"x1": [0, 1.0], "x2": [0, 0.8], "t": [0, 1.0]},
      "n_x1": 10, "n_x2": 8,
      "times": [0, 0.25, 0.5, 0.75, 1.0],
      "diffusion": {"expr": "0.05 + 0.05*U", "u_ref": 16},
      "growth": {"expr": "0.6 - 0.4*U", "u_ref": 16},
      "ic": {"bumps": [{"x1": 0.4, "x2": 0.35, "sigma": 0.2, "amplitude": 20}]},
      "noise": {"gamma": 0, "omega": 0.5}
    }
  },
  "train": {"n_c": 64, "max_epochs": 60},
  "es_patience_sweep": [10, 20],
  "n_splits": 2,
  "sr": {"population": 24, "generations": 10, "repeats": 2, "const_opt_iters": 8},
  "seed": 11
}
)";
  io::atomic_write(base / "config.json", config);

  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(RDBINN_CLI_PATH) + " run-all --config " +
                            (base / "config.json").string() + " --out " +
                            (base / run).string() + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      detail = "run-all exited nonzero on run " + std::string(run);
      return false;
    }
  }

  std::vector<fs::path> csvs;
  for (const auto& e : fs::recursive_directory_iterator(base / "a"))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      csvs.push_back(fs::relative(e.path(), base / "a"));
  std::sort(csvs.begin(), csvs.end());

  int identical = 0;
  std::string first_diff;
  for (const fs::path& rel : csvs) {
    if (!fs::exists(base / "b" / rel)) {
      if (first_diff.empty()) first_diff = rel.string() + " missing";
      continue;
    }
    if (io::read_file(base / "a" / rel) == io::read_file(base / "b" / rel))
      ++identical;
    else if (first_diff.empty())
      first_diff = rel.string() + " differs";
  }
  detail = std::to_string(identical) + "/" + std::to_string(csvs.size()) +
           " CSV outputs byte-identical across two run-all executions";
  if (!first_diff.empty()) detail += " (" + first_diff + ")";
  return !csvs.empty() && identical == int(csvs.size());
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) only.insert(argv[i]);
  const auto wanted = [&](const char* id) {
    return only.empty() || only.count(id) > 0;
  };

  int failures = 0;
  const auto report = [&](const char* id, bool pass, const std::string& detail) {
    std::printf("%s %s %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
  };

  std::string detail;
  if (wanted("C1")) {
    const bool ok = run_c1(detail);
    report("C1", ok, detail);
  }
  if (wanted("C2")) {
    const bool ok = run_c2(detail);
    report("C2", ok, detail);
  }
  if (wanted("C3") || wanted("C4") || wanted("C5")) {
    const RoundTrip rt = build_round_trip();
    EnsemblePair pair;
    SymbolicModel dm, gm;
    const bool c3 = run_c3(rt, detail, pair, dm, gm);
    if (wanted("C3")) report("C3", c3, detail);
    if (wanted("C4")) {
      const bool ok = run_c4(rt, dm, gm, detail);
      report("C4", ok, detail);
    }
    if (wanted("C5")) {
      const bool ok = run_c5(rt, detail);
      report("C5", ok, detail);
    }
  }
  if (wanted("C6")) {
    const bool ok = run_c6(detail);
    report("C6", ok, detail);
  }
  if (wanted("C7")) {
    const bool ok = run_c7(detail);
    report("C7", ok, detail);
  }
  return failures;
}
