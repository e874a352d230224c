#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rdbinn/grid.hpp"
#include "rdbinn/solver.hpp"

namespace rdbinn {

// Ground-truth reaction-diffusion model for synthetic data generation.
struct TrueModel {
  RateFn D;         // mm^2/day
  RateFn G;         // 1/day
  DensityField ic;  // single frame; supplies the grid geometry
  std::string descriptor;
};

// Heteroscedastic observation noise u_data = u + omega * u^gamma * eps,
// eps ~ N(0,1); gamma = 0 reduces to additive homoscedastic noise.
struct NoiseSpec {
  double gamma = 0.0;
  double omega = 0.0;
  std::uint64_t seed = 0;
};

// Forward-solves the model from its initial frame; output frame s holds the
// solution at times[s]. All values stay >= 0 (solver clamps undershoots).
DensityField generate_clean(const TrueModel& model, const std::vector<double>& times,
                            const SolveSpec& spec = {});

// Applies the noise model bin-wise, clamping negatives to zero. Draw order
// is the field's flat storage order, so outputs are seed-deterministic.
DensityField apply_noise(const DensityField& field, const NoiseSpec& spec);

// Emits round(value) points per bin and frame, placed uniformly inside the
// bin. Binning the output on the same grid recovers round(values) exactly.
PointCloud sample_points(const DensityField& field, std::uint64_t seed);

struct Bump {
  double x1, x2;    // center, mm
  double sigma;     // mm
  double amplitude; // cells per bin (voids: dimensionless depth in (0,1])
};

// Sum of Gaussian bumps multiplied by (1 - sum of Gaussian void masks),
// clamped to be non-negative; mimics clustered colonies next to nearly
// cell-free regions.
DensityField bumps_ic(const Domain& domain, int n1, int n2, double t0,
                      std::span<const Bump> bumps, std::span<const Bump> voids);

// The acceptance-test ground truth: D(u) = 0.01 + 0.02 e^{2u/u_ref} mm^2/day,
// G(u) = 1.0 (1 - u/K) 1/day.
TrueModel reference_model(DensityField ic, double u_ref, double carrying_capacity);

}  // namespace rdbinn
