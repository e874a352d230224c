#pragma once
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rdbinn/grid.hpp"
#include "rdbinn/mlp.hpp"

namespace rdbinn {

// Fixed random partition of grid entries (flat indices) into training and
// validation sets.
struct TvSplit {
  std::vector<std::uint32_t> train_idx, val_idx;
  double fraction = 0.8;
  std::uint64_t seed = 0;
};

// |train| = round(fraction * total); deterministic per seed.
TvSplit tv_split(const DensityField& field, double fraction, std::uint64_t seed);

struct TrainConfig {
  double lambda_data = 1.0;
  double lambda_pde = 1.0;
  double lambda_bio = 0.0;  // no-op hook; the bio loss is identically zero
  int n_c = 0;              // collocation points per epoch; 0 -> 10*entries, max 10000
  int es_patience = 500;
  double es_improvement = 0.05;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int max_epochs = 20000;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
  int effective_n_c(std::size_t n_entries) const;
};

struct EpochTrace {
  int epoch;  // 1-based
  double train_data, train_pde;
  double val_data, val_pde;
  double total_val;
};

struct BinnModel {
  Network u_net, d_net, g_net;
  Scaling scaling;
  TvSplit split;
  std::vector<EpochTrace> trace;
  int stopped_epoch = 0;
  std::uint64_t seed = 0;
};

// A point in scaled coordinates (x and t nondimensionalized by Scaling).
struct ScaledPoint {
  double x1, x2, t;
};

// Uniform i.i.d. samples in the unit cube [0,1)^3; callers map them onto
// the scaled data extents (map_to_scaled) before evaluating residuals.
std::vector<ScaledPoint> sample_collocation(const Domain& domain, int n_c,
                                            std::uint64_t seed);

ScaledPoint map_to_scaled(const ScaledPoint& unit, const Domain& domain,
                          const Scaling& sc);

// Mean squared scaled-density misfit over the given entries.
double data_loss(const Network& u_net, const DensityField& field, const Scaling& sc,
                 std::span<const std::uint32_t> idx);

// Same objective with an arbitrary predictor (scaled coords -> scaled
// density) substituted for the network.
using Predictor = std::function<double(double, double, double)>;
double data_loss_with(const Predictor& predict, const DensityField& field,
                      const Scaling& sc, std::span<const std::uint32_t> idx);

// PDE residual at one scaled point, expanded form:
//   r = u_t - D'(u)(u_x1^2 + u_x2^2) - D(u)(u_x1x1 + u_x2x2) - G(u) u
// with u, D, G the network surrogates, all in scaled units.
struct ResidualWork {
  DualWork<3> wu, wd, wg;
};
double pde_residual(const Network& u_net, const Network& d_net, const Network& g_net,
                    const ScaledPoint& p, ResidualWork& work);
double pde_residual(const Network& u_net, const Network& d_net, const Network& g_net,
                    const ScaledPoint& p);

// Mean squared residual over the points; empty point set is an error.
double pde_loss(const Network& u_net, const Network& d_net, const Network& g_net,
                std::span<const ScaledPoint> points);

struct LossBreakdown {
  double data = 0.0, pde = 0.0, bio = 0.0;
  double total = 0.0;
};

// Weighted training objective over one entry subset and one collocation set.
LossBreakdown total_loss(const Network& u_net, const Network& d_net,
                         const Network& g_net, const DensityField& field,
                         const Scaling& sc, std::span<const std::uint32_t> idx,
                         std::span<const ScaledPoint> points, const TrainConfig& cfg);

// The per-epoch gradient evaluation used by train(): total loss plus
// d(total)/d(theta) for all three networks. Exposed so the optimization
// step can be validated against finite differences.
LossBreakdown loss_and_gradients(const Network& u_net, const Network& d_net,
                                 const Network& g_net, const DensityField& field,
                                 const Scaling& sc,
                                 std::span<const std::uint32_t> idx,
                                 std::span<const ScaledPoint> points,
                                 const TrainConfig& cfg, std::span<double> grad_u,
                                 std::span<double> grad_d, std::span<double> grad_g);

// One trained model per requested patience. Training with the same seed and
// different patiences walks an identical epoch sequence, so one pass at the
// largest patience yields every smaller-patience result exactly; per-result
// wall_seconds is the cumulative epoch time up to that result's stop.
struct TrainResult {
  int patience = 0;
  BinnModel model;
  double wall_seconds = 0.0;
};

std::vector<TrainResult> train_multi(const DensityField& field, const TrainConfig& cfg,
                                     std::span<const int> patiences);

BinnModel train(const DensityField& field, const TrainConfig& cfg);

}  // namespace rdbinn
