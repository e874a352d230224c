#pragma once
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rdbinn/grid.hpp"
#include "rdbinn/mlp.hpp"

namespace rdbinn {

// Density-dependent rate in physical units (mm^2/day for diffusion, 1/day
// for growth). MLP-backed rates convert through Scaling at this boundary so
// the solver itself never sees nondimensional quantities.
struct RateFn {
  enum class Kind { kConstant, kSymbolic, kMlp };
  Kind kind = Kind::kConstant;
  std::string descriptor;  // for run manifests
  std::function<double(double)> f;

  double operator()(double u) const { return f(u); }
};

RateFn rate_constant(double v);
// D role: D_phys(u) = unscale_diffusion(net(u / u_max)).
RateFn rate_diffusion_net(const Network& net, const Scaling& sc);
// G role: G_phys(u) = unscale_growth(net(u / u_max)).
RateFn rate_growth_net(const Network& net, const Scaling& sc);

struct SolveSpec {
  double safety = 0.9;  // fraction of the diffusion stability limit
  double max_dt = std::numeric_limits<double>::infinity();
  double max_value = 1e12;  // blow-up detection threshold
  long max_steps = 10'000'000;
};

struct SolveResult {
  DensityField field;
  double clamped_mass = 0.0;        // total count removed by negativity clamps
  double max_step_clamp_frac = 0.0; // worst per-step clamped fraction of mass
  long steps = 0;
  double max_diffusion_seen = 0.0;
};

// Explicit RK4 on a cell-centered finite-volume discretization of
//   du/dt = div(D(u) grad u) + G(u) u
// with no-flux boundaries. `initial` supplies the grid geometry and its
// frame 0 the starting state at time initial.times()[0]; `times` are the
// requested output instants (nondecreasing, >= start). The time step obeys
// dt <= safety*min(dx^2)/(4*maxD), a reaction bound and max_dt, recomputed
// every step. Requires uniform bins along both axes.
SolveResult solve_rd(const RateFn& D, const RateFn& G, const DensityField& initial,
                     const std::vector<double>& times, const SolveSpec& spec = {});

// Density-net snapshot at the geometry's t_min, unscaled to cells per bin.
DensityField ic_from_density_net(const Network& u_net, const Scaling& sc,
                                 const DensityField& geometry);

}  // namespace rdbinn
