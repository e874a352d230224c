#include "rdbinn/binn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "rdbinn/autodiff.hpp"
#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"
#include "rdbinn/optim.hpp"
#include "rdbinn/rng.hpp"

namespace rdbinn {

namespace {

// Stream tags for deriving independent RNG streams from one job seed.
constexpr std::uint64_t kTagInit = 1;
constexpr std::uint64_t kTagSplit = 2;
constexpr std::uint64_t kTagColloc = 3;
constexpr std::uint64_t kTagValColloc = 4;

struct Entry {
  double x1, x2, t, y;  // scaled coordinates and scaled target density
};

std::vector<Entry> make_entries(const DensityField& f, const Scaling& sc,
                                std::span<const std::uint32_t> idx) {
  const Domain& d = f.domain();
  std::vector<Entry> out;
  out.reserve(idx.size());
  for (std::uint32_t k : idx) {
    int i, j, s;
    f.unflatten_index(k, i, j, s);
    out.push_back({(f.center_x1(i) - d.x1_min) / sc.length,
                   (f.center_x2(j) - d.x2_min) / sc.length,
                   (f.times()[std::size_t(s)] - d.t_min) / sc.time,
                   f.at(i, j, s) / sc.density});
  }
  return out;
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kSiLU: return z * ad::sigmoid(z);
    case Activation::kSoftplus:
      return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    case Activation::kLinear: return z;
  }
  return z;
}

double activate_deriv(Activation a, double z) {
  switch (a) {
    case Activation::kSiLU: {
      const double s = ad::sigmoid(z);
      return s + z * s * (1.0 - s);
    }
    case Activation::kSoftplus: return ad::sigmoid(z);
    case Activation::kLinear: return 1.0;
  }
  return 1.0;
}

// Plain batched forward/backward for the data term. The PDE term needs the
// reverse-over-forward tape; the data term only needs first-order reverse,
// which this hand-rolled pass does several times faster.
class DataBackprop {
 public:
  explicit DataBackprop(const Network& net) : net_(&net) {
    const auto& ls = net.layers;
    acts_.resize(ls.size() + 1);
    pres_.resize(ls.size());
    deltas_.resize(ls.size());
    offsets_.resize(ls.size());
    acts_[0].resize(net.input_dim());
    std::size_t off = 0;
    for (std::size_t l = 0; l < ls.size(); ++l) {
      acts_[l + 1].resize(ls[l].out);
      pres_[l].resize(ls[l].out);
      deltas_[l].resize(ls[l].out);
      offsets_[l] = off;
      off += std::size_t(ls[l].in + 1) * ls[l].out;
    }
  }

  double forward(const double* x) {
    const auto& ls = net_->layers;
    for (int i = 0; i < net_->input_dim(); ++i) acts_[0][std::size_t(i)] = x[i];
    for (std::size_t l = 0; l < ls.size(); ++l) {
      const LayerSpec& L = ls[l];
      const double* wp = net_->params.data() + offsets_[l];
      const double* a = acts_[l].data();
      for (int n = 0; n < L.out; ++n, wp += L.in + 1) {
        double acc = wp[L.in];
        for (int j = 0; j < L.in; ++j) acc += wp[j] * a[j];
        pres_[l][std::size_t(n)] = acc;
        acts_[l + 1][std::size_t(n)] = activate(L.act, acc);
      }
    }
    return acts_.back()[0];
  }

  // Accumulates d(seed * output)/d(params) for the sample last forwarded.
  void backward(double seed, std::span<double> grad) {
    const auto& ls = net_->layers;
    const int nl = static_cast<int>(ls.size());
    deltas_[nl - 1][0] = seed * activate_deriv(ls[nl - 1].act, pres_[nl - 1][0]);
    for (int l = nl - 1; l >= 0; --l) {
      const LayerSpec& L = ls[std::size_t(l)];
      const double* a = acts_[std::size_t(l)].data();
      double* gw = grad.data() + offsets_[std::size_t(l)];
      for (int n = 0; n < L.out; ++n, gw += L.in + 1) {
        const double dn = deltas_[std::size_t(l)][std::size_t(n)];
        for (int j = 0; j < L.in; ++j) gw[j] += dn * a[j];
        gw[L.in] += dn;
      }
      if (l > 0) {
        auto& dprev = deltas_[std::size_t(l) - 1];
        std::fill(dprev.begin(), dprev.end(), 0.0);
        const double* wp = net_->params.data() + offsets_[std::size_t(l)];
        for (int n = 0; n < L.out; ++n, wp += L.in + 1) {
          const double dn = deltas_[std::size_t(l)][std::size_t(n)];
          for (int j = 0; j < L.in; ++j) dprev[std::size_t(j)] += dn * wp[j];
        }
        for (int j = 0; j < ls[std::size_t(l) - 1].out; ++j)
          dprev[std::size_t(j)] *=
              activate_deriv(ls[std::size_t(l) - 1].act, pres_[std::size_t(l) - 1][std::size_t(j)]);
      }
    }
  }

 private:
  const Network* net_;
  std::vector<std::vector<double>> acts_, pres_, deltas_;
  std::vector<std::size_t> offsets_;
};

double bio_loss_hook() { return 0.0; }  // the paper's L_bio term, identically zero

using Tape3 = ad::Tape<3>;
using Id3 = Tape3::Id;

// Residual subgraph for one collocation point. `uhat` carries directional
// duals for axes (x1, x2, t); D and G consume the full dual of uhat so
// their d1 components realize D'(u) u_x and friends.
Id3 build_residual(Tape3& t, const Network& u_net, Id3 bu, const Network& d_net,
                   Id3 bd, const Network& g_net, Id3 bg, const ScaledPoint& p) {
  const Id3 x = t.input(p.x1, 0);
  t.input(p.x2, 1);
  t.input(p.t, 2);
  const Id3 uhat = tape_forward(t, u_net, bu, x);
  const Id3 dhat = tape_forward(t, d_net, bd, uhat);
  const Id3 ghat = tape_forward(t, g_net, bg, uhat);
  const Id3 u_t = t.extract_d1(uhat, 2);
  const Id3 u_x1 = t.extract_d1(uhat, 0);
  const Id3 u_x2 = t.extract_d1(uhat, 1);
  const Id3 u_x1x1 = t.extract_d2(uhat, 0);
  const Id3 u_x2x2 = t.extract_d2(uhat, 1);
  const Id3 dv = t.extract_value(dhat);
  const Id3 dpx1 = t.extract_d1(dhat, 0);  // D'(u) u_x1
  const Id3 dpx2 = t.extract_d1(dhat, 1);  // D'(u) u_x2
  const Id3 gv = t.extract_value(ghat);
  const Id3 uv = t.extract_value(uhat);
  const Id3 div = t.add(t.add(t.mul(dpx1, u_x1), t.mul(dv, u_x1x1)),
                        t.add(t.mul(dpx2, u_x2), t.mul(dv, u_x2x2)));
  return t.sub(t.sub(u_t, div), t.mul(gv, uv));
}

}  // namespace

TvSplit tv_split(const DensityField& field, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw InputError("tv_split: fraction must lie strictly between 0 and 1");
  const std::size_t total = field.size();
  if (total < 2) throw InputError("tv_split: field has fewer than 2 entries");
  std::vector<std::uint32_t> all(total);
  std::iota(all.begin(), all.end(), 0u);
  Rng rng(seed);
  rng.shuffle(all);
  std::size_t n_train = static_cast<std::size_t>(std::llround(fraction * double(total)));
  n_train = std::clamp<std::size_t>(n_train, 1, total - 1);
  TvSplit s;
  s.fraction = fraction;
  s.seed = seed;
  s.train_idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val_idx.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return s;
}

void TrainConfig::validate() const {
  if (lambda_data < 0.0 || lambda_pde < 0.0 || lambda_bio < 0.0)
    throw InputError("train config: loss weights must be >= 0");
  if (!(es_improvement > 0.0 && es_improvement < 1.0))
    throw InputError("train config: es_improvement must lie in (0,1)");
  if (es_patience < 0) throw InputError("train config: es_patience must be >= 0");
  if (n_c < 0) throw InputError("train config: n_c must be >= 0");
  if (!(learning_rate > 0.0)) throw InputError("train config: learning rate must be > 0");
  if (max_epochs < 1) throw InputError("train config: max_epochs must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw InputError("train config: split_fraction must lie in (0,1)");
}

int TrainConfig::effective_n_c(std::size_t n_entries) const {
  if (n_c > 0) return n_c;
  const std::size_t v = std::min<std::size_t>(10 * n_entries, 10000);
  return static_cast<int>(std::max<std::size_t>(v, 1));
}

std::vector<ScaledPoint> sample_collocation(const Domain& domain, int n_c,
                                            std::uint64_t seed) {
  domain.validate();
  if (n_c < 1) throw InputError("sample_collocation: n_c must be >= 1");
  Rng rng(seed);
  std::vector<ScaledPoint> pts;
  pts.reserve(std::size_t(n_c));
  for (int k = 0; k < n_c; ++k) {
    ScaledPoint p;
    p.x1 = rng.uniform01();
    p.x2 = rng.uniform01();
    p.t = rng.uniform01();
    pts.push_back(p);
  }
  return pts;
}

ScaledPoint map_to_scaled(const ScaledPoint& unit, const Domain& domain,
                          const Scaling& sc) {
  return {unit.x1 * domain.extent_x1() / sc.length,
          unit.x2 * domain.extent_x2() / sc.length, unit.t};
}

double data_loss_with(const Predictor& predict, const DensityField& field,
                      const Scaling& sc, std::span<const std::uint32_t> idx) {
  if (idx.empty()) throw InputError("data_loss: empty index set");
  const auto entries = make_entries(field, sc, idx);
  double acc = 0.0;
  for (const Entry& e : entries) {
    const double diff = predict(e.x1, e.x2, e.t) - e.y;
    acc += diff * diff;
  }
  return acc / double(entries.size());
}

double data_loss(const Network& u_net, const DensityField& field, const Scaling& sc,
                 std::span<const std::uint32_t> idx) {
  if (idx.empty()) throw InputError("data_loss: empty index set");
  const auto entries = make_entries(field, sc, idx);
  Evaluator ev(u_net);
  double acc = 0.0;
  for (const Entry& e : entries) {
    const double x[3] = {e.x1, e.x2, e.t};
    const double diff = ev(std::span<const double>(x, 3)) - e.y;
    acc += diff * diff;
  }
  return acc / double(entries.size());
}

double pde_residual(const Network& u_net, const Network& d_net, const Network& g_net,
                    const ScaledPoint& p, ResidualWork& work) {
  std::array<ad::Dual<3>, 3> x{};
  x[0].v = p.x1;
  x[0].d1[0] = 1.0;
  x[1].v = p.x2;
  x[1].d1[1] = 1.0;
  x[2].v = p.t;
  x[2].d1[2] = 1.0;
  const ad::Dual<3> u = eval_dual<3>(u_net, x, work.wu);
  const std::array<ad::Dual<3>, 1> uin = {u};
  const ad::Dual<3> D = eval_dual<3>(d_net, uin, work.wd);
  const ad::Dual<3> G = eval_dual<3>(g_net, uin, work.wg);
  const double div = D.d1[0] * u.d1[0] + D.v * u.d2[0] +
                     D.d1[1] * u.d1[1] + D.v * u.d2[1];
  return u.d1[2] - div - G.v * u.v;
}

double pde_residual(const Network& u_net, const Network& d_net, const Network& g_net,
                    const ScaledPoint& p) {
  ResidualWork work;
  return pde_residual(u_net, d_net, g_net, p, work);
}

double pde_loss(const Network& u_net, const Network& d_net, const Network& g_net,
                std::span<const ScaledPoint> points) {
  if (points.empty()) throw InputError("pde_loss: empty collocation set");
  ResidualWork work;
  double acc = 0.0;
  for (const ScaledPoint& p : points) {
    const double r = pde_residual(u_net, d_net, g_net, p, work);
    acc += r * r;
  }
  return acc / double(points.size());
}

LossBreakdown total_loss(const Network& u_net, const Network& d_net,
                         const Network& g_net, const DensityField& field,
                         const Scaling& sc, std::span<const std::uint32_t> idx,
                         std::span<const ScaledPoint> points, const TrainConfig& cfg) {
  if (cfg.lambda_pde > 0.0 && points.empty())
    throw InputError("total_loss: PDE weight is positive but no collocation points given");
  LossBreakdown lb;
  lb.data = data_loss(u_net, field, sc, idx);
  lb.pde = points.empty() ? 0.0 : pde_loss(u_net, d_net, g_net, points);
  lb.bio = bio_loss_hook();
  lb.total = cfg.lambda_data * lb.data + cfg.lambda_pde * lb.pde + cfg.lambda_bio * lb.bio;
  return lb;
}

LossBreakdown loss_and_gradients(const Network& u_net, const Network& d_net,
                                 const Network& g_net, const DensityField& field,
                                 const Scaling& sc,
                                 std::span<const std::uint32_t> idx,
                                 std::span<const ScaledPoint> points,
                                 const TrainConfig& cfg, std::span<double> grad_u,
                                 std::span<double> grad_d, std::span<double> grad_g) {
  if (idx.empty()) throw InputError("loss_and_gradients: empty index set");
  if (cfg.lambda_pde > 0.0 && points.empty())
    throw InputError("loss_and_gradients: PDE weight is positive but no collocation points given");
  if (grad_u.size() != u_net.param_count() || grad_d.size() != d_net.param_count() ||
      grad_g.size() != g_net.param_count())
    throw InputError("loss_and_gradients: gradient buffer size mismatch");
  std::fill(grad_u.begin(), grad_u.end(), 0.0);
  std::fill(grad_d.begin(), grad_d.end(), 0.0);
  std::fill(grad_g.begin(), grad_g.end(), 0.0);

  LossBreakdown lb;

  // Data term.
  {
    const auto entries = make_entries(field, sc, idx);
    DataBackprop bp(u_net);
    const double inv_n = 1.0 / double(entries.size());
    double acc = 0.0;
    for (const Entry& e : entries) {
      const double x[3] = {e.x1, e.x2, e.t};
      const double diff = bp.forward(x) - e.y;
      acc += diff * diff;
      if (cfg.lambda_data != 0.0)
        bp.backward(2.0 * cfg.lambda_data * diff * inv_n, grad_u);
    }
    lb.data = acc * inv_n;
  }

  // PDE term.
  if (!points.empty()) {
    Tape3 tape;
    tape.reserve(u_net.param_count() + d_net.param_count() + g_net.param_count() + 1024);
    const Id3 bu = tape_params(tape, u_net);
    const Id3 bd = tape_params(tape, d_net);
    const Id3 bg = tape_params(tape, g_net);
    const Id3 mark = tape.mark();
    const double inv_n = 1.0 / double(points.size());
    double acc = 0.0;
    for (const ScaledPoint& p : points) {
      tape.rewind(mark);
      const Id3 r = build_residual(tape, u_net, bu, d_net, bd, g_net, bg, p);
      const double rv = tape.value(r);
      acc += rv * rv;
      if (cfg.lambda_pde != 0.0)
        tape.backward(r, 2.0 * cfg.lambda_pde * rv * inv_n, mark);
    }
    lb.pde = acc * inv_n;
    for (std::size_t i = 0; i < grad_u.size(); ++i)
      grad_u[i] += tape.adjoint_value(bu + static_cast<Id3>(i));
    for (std::size_t i = 0; i < grad_d.size(); ++i)
      grad_d[i] += tape.adjoint_value(bd + static_cast<Id3>(i));
    for (std::size_t i = 0; i < grad_g.size(); ++i)
      grad_g[i] += tape.adjoint_value(bg + static_cast<Id3>(i));
  }

  lb.bio = bio_loss_hook();
  lb.total = cfg.lambda_data * lb.data + cfg.lambda_pde * lb.pde + cfg.lambda_bio * lb.bio;
  return lb;
}

namespace {

struct Snapshot {
  std::vector<double> u, d, g;
};

}  // namespace

std::vector<TrainResult> train_multi(const DensityField& field, const TrainConfig& cfg,
                                     std::span<const int> patiences) {
  cfg.validate();
  if (patiences.empty()) throw InputError("train: no patience values given");
  const Scaling sc = make_scaling(field);
  const Domain& domain = field.domain();

  TvSplit split = tv_split(field, cfg.split_fraction, derive_seed(cfg.seed, kTagSplit));

  Network u_net = make_density_net();
  Network d_net = make_diffusion_net();
  Network g_net = make_growth_net();
  {
    Rng init_rng(derive_seed(cfg.seed, kTagInit));
    init_params(u_net, init_rng);
    init_params(d_net, init_rng);
    init_params(g_net, init_rng);
  }

  const int n_c = cfg.effective_n_c(field.size());
  const std::uint64_t colloc_seed = derive_seed(cfg.seed, kTagColloc);

  // Fixed validation collocation set, disjoint stream from training draws.
  std::vector<ScaledPoint> val_points =
      sample_collocation(domain, n_c, derive_seed(cfg.seed, kTagValColloc));
  for (auto& p : val_points) p = map_to_scaled(p, domain, sc);

  Adam opt_u(u_net.param_count(), cfg.learning_rate, cfg.beta1, cfg.beta2);
  Adam opt_d(d_net.param_count(), cfg.learning_rate, cfg.beta1, cfg.beta2);
  Adam opt_g(g_net.param_count(), cfg.learning_rate, cfg.beta1, cfg.beta2);
  std::vector<double> grad_u(u_net.param_count()), grad_d(d_net.param_count()),
      grad_g(g_net.param_count());

  std::vector<TrainResult> results(patiences.size());
  std::vector<bool> done(patiences.size(), false);
  std::size_t n_done = 0;

  std::vector<EpochTrace> trace;
  double best = std::numeric_limits<double>::infinity();
  Snapshot best_snap;
  int since_improvement = 0;
  double cum_wall = 0.0;

  auto finalize = [&](std::size_t k, int epoch) {
    TrainResult& r = results[k];
    r.patience = patiences[k];
    r.wall_seconds = cum_wall;
    BinnModel& m = r.model;
    m.u_net = u_net;
    m.d_net = d_net;
    m.g_net = g_net;
    m.u_net.params = best_snap.u;
    m.d_net.params = best_snap.d;
    m.g_net.params = best_snap.g;
    m.scaling = sc;
    m.split = split;
    m.trace.assign(trace.begin(), trace.begin() + epoch);
    m.stopped_epoch = epoch;
    m.seed = cfg.seed;
    done[k] = true;
    ++n_done;
  };

  for (int epoch = 1; epoch <= cfg.max_epochs && n_done < patiences.size(); ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<ScaledPoint> points =
        sample_collocation(domain, n_c, derive_seed(colloc_seed, std::uint64_t(epoch)));
    for (auto& p : points) p = map_to_scaled(p, domain, sc);

    const LossBreakdown lb =
        loss_and_gradients(u_net, d_net, g_net, field, sc, split.train_idx, points,
                           cfg, grad_u, grad_d, grad_g);
    if (!std::isfinite(lb.total))
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         ": train loss data=" + io::fmt(lb.data) +
                         " pde=" + io::fmt(lb.pde));

    opt_u.step(u_net.params, grad_u);
    opt_d.step(d_net.params, grad_d);
    opt_g.step(g_net.params, grad_g);

    const double vd = data_loss(u_net, field, sc, split.val_idx);
    const double vp = pde_loss(u_net, d_net, g_net, val_points);
    const double total_val =
        cfg.lambda_data * vd + cfg.lambda_pde * vp + cfg.lambda_bio * bio_loss_hook();
    if (!std::isfinite(total_val))
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         ": validation loss data=" + io::fmt(vd) + " pde=" + io::fmt(vp));

    trace.push_back({epoch, lb.data, lb.pde, vd, vp, total_val});
    cum_wall += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (total_val < (1.0 - cfg.es_improvement) * best) {
      best = total_val;
      best_snap.u = u_net.params;
      best_snap.d = d_net.params;
      best_snap.g = g_net.params;
      since_improvement = 0;
    } else {
      ++since_improvement;
    }

    for (std::size_t k = 0; k < patiences.size(); ++k)
      if (!done[k] && since_improvement >= patiences[k]) finalize(k, epoch);
  }

  // Patience never reached within max_epochs: stop at the cap.
  for (std::size_t k = 0; k < patiences.size(); ++k)
    if (!done[k]) finalize(k, static_cast<int>(trace.size()));

  return results;
}

BinnModel train(const DensityField& field, const TrainConfig& cfg) {
  const int patiences[1] = {cfg.es_patience};
  auto results = train_multi(field, cfg, patiences);
  return std::move(results[0].model);
}

}  // namespace rdbinn
