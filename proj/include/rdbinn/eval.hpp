#pragma once
#include <filesystem>
#include <string>
#include <vector>

#include "rdbinn/grid.hpp"
#include "rdbinn/mlp.hpp"
#include "rdbinn/solver.hpp"
#include "rdbinn/sr.hpp"

namespace rdbinn {

// The total-cell-count trajectories produced by the three evaluation modes,
// next to the observed counts. An empty vector marks a mode that was not
// run; a present curve has one entry per time.
struct CountCurves {
  std::vector<double> times;
  std::vector<double> n_data;  // binned observations
  std::vector<double> n_u;     // summed density-net predictions
  std::vector<double> n_fwd;   // forward solve with the MLP rates
  std::vector<double> n_sr;    // forward solve with the symbolic rates

  // Lengths of present curves must equal times; times nonempty.
  void validate() const;
};

struct CurveMetrics {
  std::string name;      // "N_u", "N_fwd" or "N_SR"
  double rel_l2 = 0.0;   // ||C - N_data||_2 / ||N_data||_2
  double final_err = 0.0;  // |C(t_end) - N_data(t_end)| / N_data(t_end)
};

// Mode (i): the count the density net implies at each requested time,
// summing unscaled predictions over the geometry's bin centers.
std::vector<double> count_from_net(const Network& u_net, const Scaling& sc,
                                   const DensityField& geometry,
                                   const std::vector<double>& times);

// Modes (ii)/(iii): per-frame totals of a solved field.
std::vector<double> count_from_solve(const DensityField& field);

// Metrics for every curve present next to n_data, in N_u, N_fwd, N_SR
// order. Requires n_data (with nonzero norm and final value).
std::vector<CurveMetrics> compare(const CountCurves& curves);

// Rate backed by a fitted expression. The expression maps scaled density
// (u / u_max) to a rate already in physical units, so only the input is
// rescaled here.
RateFn rate_symbolic(const Expr& expr, const Scaling& sc);

// CSV "t,N_data,N_u,N_fwd,N_SR"; absent curves leave their column blank.
std::string count_curves_to_csv(const CountCurves& curves);
CountCurves count_curves_from_csv(const std::string& text, const std::string& context);
void write_count_curves_csv(const CountCurves& curves, const std::filesystem::path& path);
CountCurves read_count_curves_csv(const std::filesystem::path& path);

}  // namespace rdbinn
