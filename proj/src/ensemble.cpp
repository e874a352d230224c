#include "rdbinn/ensemble.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"
#include "rdbinn/mlp.hpp"

namespace rdbinn {

namespace {

constexpr int kHistBins = 32;

std::vector<double> training_densities(const DensityField& field, const BinnModel& m) {
  std::vector<double> u;
  u.reserve(m.split.train_idx.size());
  for (std::uint32_t k : m.split.train_idx)
    u.push_back(field.values()[k] / m.scaling.density);
  return u;
}

// Probability mass per histogram bin over [0,1].
std::array<double, kHistBins> histogram_mass(std::span<const double> u) {
  std::array<double, kHistBins> mass{};
  for (double v : u) {
    int b = static_cast<int>(std::floor(v * kHistBins));
    b = std::clamp(b, 0, kHistBins - 1);
    mass[std::size_t(b)] += 1.0;
  }
  for (double& m : mass) m /= double(u.size());
  return mass;
}

double interp_mass(const std::array<double, kHistBins>& mass, double x) {
  const double w = 1.0 / kHistBins;
  const double pos = x / w - 0.5;  // position in bin-center coordinates
  if (pos <= 0.0) return mass[0];
  if (pos >= kHistBins - 1) return mass[kHistBins - 1];
  const int b = static_cast<int>(std::floor(pos));
  const double f = pos - b;
  return mass[std::size_t(b)] * (1.0 - f) + mass[std::size_t(b) + 1] * f;
}

}  // namespace

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("percentile: empty sample");
  if (p < 0.0 || p > 100.0) throw InputError("percentile: p outside [0,100]");
  std::sort(values.begin(), values.end());
  const double h = (double(values.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const double f = h - double(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - f) + values[lo + 1] * f;
}

SupportBounds support_bounds(const DensityField& field,
                             std::span<const BinnModel> models) {
  if (models.empty()) throw InputError("support_bounds: no models");
  SupportBounds b;
  b.lo = -std::numeric_limits<double>::infinity();
  b.hi = std::numeric_limits<double>::infinity();
  for (const BinnModel& m : models) {
    std::vector<double> u = training_densities(field, m);
    if (u.size() < 2) throw InputError("support_bounds: degenerate training set");
    const double p5 = percentile(u, 5.0);
    const double p95 = percentile(std::move(u), 95.0);
    b.split_intervals.emplace_back(p5, p95);
    b.lo = std::max(b.lo, p5);
    b.hi = std::min(b.hi, p95);
  }
  if (!(b.lo < b.hi)) {
    std::ostringstream oss;
    oss << "support_bounds: central-90% intervals have empty intersection (lo="
        << io::fmt(b.lo) << " >= hi=" << io::fmt(b.hi) << ")";
    throw InputError(oss.str());
  }
  return b;
}

std::vector<double> density_weights(const DensityField& field, const BinnModel& model,
                                    std::span<const double> grid) {
  if (grid.empty()) throw InputError("density_weights: empty grid");
  const std::vector<double> u = training_densities(field, model);
  if (u.empty()) throw InputError("density_weights: model has no training entries");
  const auto mass = histogram_mass(u);
  std::vector<double> w(grid.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    w[k] = interp_mass(mass, grid[k]);
    sum += w[k];
  }
  if (sum <= 0.0)
    throw InputError("density_weights: training distribution has no mass on the grid");
  for (double& x : w) x /= sum;
  return w;
}

double weighted_mean(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size() || values.empty())
    throw InputError("weighted_mean: size mismatch or empty input");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += weights[i] * values[i];
    den += weights[i];
  }
  if (den <= 0.0) throw InputError("weighted_mean: zero total weight");
  return num / den;
}

EnsemblePair ensemble_curves(const DensityField& field,
                             std::span<const BinnModel> models, int n_g) {
  if (models.empty()) throw InputError("ensemble_curves: no models");
  if (n_g < 2) throw InputError("ensemble_curves: n_g must be >= 2");

  EnsemblePair out;
  out.bounds = support_bounds(field, models);

  std::vector<double> grid(static_cast<std::size_t>(n_g));
  for (int k = 0; k < n_g; ++k)
    grid[std::size_t(k)] =
        out.bounds.lo + (out.bounds.hi - out.bounds.lo) * double(k) / double(n_g - 1);

  const std::size_t ns = models.size();
  std::vector<std::vector<double>> w(ns);
  std::vector<std::vector<double>> pd(ns), pg(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    const BinnModel& m = models[s];
    w[s] = density_weights(field, m, grid);
    Evaluator ed(m.d_net), eg(m.g_net);
    pd[s].resize(grid.size());
    pg[s].resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
      pd[s][k] = m.scaling.unscale_diffusion(ed.eval1(grid[k]));
      pg[s][k] = m.scaling.unscale_growth(eg.eval1(grid[k]));
    }
  }

  out.diffusion.kind = CurveKind::kDiffusion;
  out.growth.kind = CurveKind::kGrowth;
  int dropped = 0;
  std::vector<double> vals(ns), wts(ns);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double agg = 0.0;
    for (std::size_t s = 0; s < ns; ++s) agg += w[s][k];
    if (agg <= 0.0) {
      ++dropped;
      continue;
    }
    for (std::size_t s = 0; s < ns; ++s) wts[s] = w[s][k];
    for (std::size_t s = 0; s < ns; ++s) vals[s] = pd[s][k];
    out.diffusion.U.push_back(grid[k]);
    out.diffusion.values.push_back(weighted_mean(vals, wts));
    out.diffusion.weights.push_back(agg / double(ns));
    for (std::size_t s = 0; s < ns; ++s) vals[s] = pg[s][k];
    out.growth.U.push_back(grid[k]);
    out.growth.values.push_back(weighted_mean(vals, wts));
    out.growth.weights.push_back(agg / double(ns));
  }
  if (dropped > 0)
    std::cerr << "warning: dropped " << dropped
              << " ensemble grid points with zero aggregate weight\n";
  if (out.diffusion.U.empty())
    throw NumericError("ensemble_curves: every grid point had zero aggregate weight");
  return out;
}

namespace {

const char* value_column(CurveKind kind) {
  return kind == CurveKind::kDiffusion ? "D_mm2_per_day" : "G_per_day";
}

}  // namespace

void write_curve_csv(const EnsembleCurve& curve, const std::filesystem::path& path) {
  std::ostringstream oss;
  oss << "U," << value_column(curve.kind) << ",weight\n";
  for (std::size_t k = 0; k < curve.U.size(); ++k)
    oss << io::fmt(curve.U[k]) << ',' << io::fmt(curve.values[k]) << ','
        << io::fmt(curve.weights[k]) << '\n';
  io::atomic_write(path, oss.str());
}

EnsembleCurve read_curve_csv(const std::filesystem::path& path) {
  const auto lines = io::read_lines(path);
  if (lines.empty()) throw InputError("empty curve file " + path.string());
  const auto header = io::split_csv_line(lines[0]);
  EnsembleCurve curve;
  if (header == std::vector<std::string>{"U", "D_mm2_per_day", "weight"})
    curve.kind = CurveKind::kDiffusion;
  else if (header == std::vector<std::string>{"U", "G_per_day", "weight"})
    curve.kind = CurveKind::kGrowth;
  else
    throw InputError("unrecognized curve header in " + path.string());
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = io::split_csv_line(lines[n]);
    const std::string ctx = path.string() + " line " + std::to_string(n + 1);
    if (cols.size() != 3) throw InputError("expected 3 columns at " + ctx);
    curve.U.push_back(io::parse_double(cols[0], ctx));
    curve.values.push_back(io::parse_double(cols[1], ctx));
    curve.weights.push_back(io::parse_double(cols[2], ctx));
  }
  if (curve.U.empty()) throw InputError("curve file has no rows: " + path.string());
  return curve;
}

}  // namespace rdbinn
