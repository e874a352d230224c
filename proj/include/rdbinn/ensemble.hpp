#pragma once
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "rdbinn/binn.hpp"
#include "rdbinn/grid.hpp"

namespace rdbinn {

// Shared density support: the intersection of every split's central 90%
// interval of training densities (scaled units).
struct SupportBounds {
  double lo = 0.0, hi = 1.0;
  std::vector<std::pair<double, double>> split_intervals;
};

// Percentile with linear interpolation between order statistics
// (quantile type 7). p in [0, 100].
double percentile(std::vector<double> values, double p);

// lo = max over splits of the 5th percentile, hi = min of the 95th, taken
// over each split's training densities. Empty intersection is an error.
SupportBounds support_bounds(const DensityField& field,
                             std::span<const BinnModel> models);

// One split's weight at each grid point: a 32-bin histogram of the split's
// training densities over [0,1], normalized to a probability mass, linearly
// interpolated between bin centers, then renormalized over the grid.
std::vector<double> density_weights(const DensityField& field, const BinnModel& model,
                                    std::span<const double> grid);

enum class CurveKind { kDiffusion, kGrowth };

struct EnsembleCurve {
  std::vector<double> U;       // scaled density grid, strictly increasing
  std::vector<double> values;  // physical units: mm^2/day or 1/day
  std::vector<double> weights; // per-point aggregate weight
  CurveKind kind = CurveKind::kDiffusion;
};

struct EnsemblePair {
  EnsembleCurve diffusion, growth;
  SupportBounds bounds;
};

// Sum(w_i x_i) / Sum(w_i); the per-point cross-split combination rule.
double weighted_mean(std::span<const double> values, std::span<const double> weights);

// Density-weighted cross-split average of the diffusion and growth
// surrogates on an n_g-point grid spanning the shared support. Grid points
// where every split has zero weight are dropped with a warning on stderr.
EnsemblePair ensemble_curves(const DensityField& field,
                             std::span<const BinnModel> models, int n_g = 128);

// CSV with the value units in the column name:
// U,D_mm2_per_day,weight or U,G_per_day,weight.
void write_curve_csv(const EnsembleCurve& curve, const std::filesystem::path& path);
EnsembleCurve read_curve_csv(const std::filesystem::path& path);

}  // namespace rdbinn
