#include <doctest.h>

#include <cmath>
#include <vector>

#include "rdbinn/grid.hpp"
#include "rdbinn/rng.hpp"
#include "rdbinn/synth.hpp"

using namespace rdbinn;

namespace {

DensityField flat_field(const Domain& d, int n1, int n2, double value,
                        std::vector<double> times) {
  DensityField f(d, n1, n2, d.extent_x1() / n1, d.extent_x2() / n2,
                 std::move(times));
  for (auto& v : f.values()) v = value;
  return f;
}

double frame_sum(const DensityField& f, int s) {
  double total = 0.0;
  for (int i = 0; i < f.n_x1(); ++i)
    for (int j = 0; j < f.n_x2(); ++j) total += f.at(i, j, s);
  return total;
}

}  // namespace

TEST_CASE("stationary model reproduces the initial condition") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 2.0};
  TrueModel m;
  m.D = rate_constant(0.0);
  m.G = rate_constant(0.0);
  m.ic = flat_field(d, 5, 4, 0.0, {0.0});
  Rng rng(8);
  for (auto& v : m.ic.values()) v = rng.uniform(0.0, 12.0);
  DensityField out = generate_clean(m, {0.0, 1.0, 2.0});
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j) CHECK(out.at(i, j, s) == m.ic.at(i, j, 0));
}

TEST_CASE("pure exponential growth matches e^{rt} counts") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 2.0};
  const double r = 0.9;
  TrueModel m;
  m.D = rate_constant(0.0);
  m.G = rate_constant(r);
  m.ic = flat_field(d, 5, 4, 3.0, {0.0});
  DensityField out = generate_clean(m, {0.5, 1.3, 2.0});
  const double n0 = frame_sum(m.ic, 0);
  const std::vector<double> times = {0.5, 1.3, 2.0};
  for (int s = 0; s < 3; ++s) {
    const double want = n0 * std::exp(r * times[std::size_t(s)]);
    CHECK(std::abs(frame_sum(out, s) - want) / want < 0.005);
  }
}

TEST_CASE("diffusion-only generation conserves counts") {
  Domain d{0.0, 1.5, 0.0, 1.0, 0.0, 1.0};
  TrueModel m;
  m.D = rate_constant(0.05);
  m.G = rate_constant(0.0);
  m.ic = flat_field(d, 15, 10, 0.0, {0.0});
  Rng rng(9);
  for (auto& v : m.ic.values()) v = rng.uniform(0.0, 9.0);
  const double n0 = frame_sum(m.ic, 0);
  DensityField out = generate_clean(m, {0.5, 1.0});
  for (int s = 0; s < 2; ++s)
    CHECK(std::abs(frame_sum(out, s) - n0) / n0 < 1e-8);
}

TEST_CASE("zero noise amplitude is the identity") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  DensityField f = flat_field(d, 4, 4, 0.0, {0.0, 1.0});
  Rng rng(10);
  for (auto& v : f.values()) v = rng.uniform(0.0, 50.0);
  NoiseSpec spec;
  spec.omega = 0.0;
  spec.seed = 1234;
  DensityField out = apply_noise(f, spec);
  CHECK(out.values() == f.values());
}

TEST_CASE("additive noise variance matches omega^2 away from the clamp") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  DensityField f = flat_field(d, 50, 50, 100.0, {0.0, 0.5, 1.0, 1.5});
  NoiseSpec spec;
  spec.gamma = 0.0;
  spec.omega = 0.5;
  spec.seed = 42;
  DensityField out = apply_noise(f, spec);
  double sum = 0.0, sumsq = 0.0;
  const std::size_t n = f.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double diff = out.values()[k] - f.values()[k];
    sum += diff;
    sumsq += diff * diff;
  }
  const double mean = sum / double(n);
  const double var = sumsq / double(n) - mean * mean;
  CHECK(std::abs(var - 0.25) / 0.25 < 0.05);
  CHECK(std::abs(mean) < 0.02);
}

TEST_CASE("gamma=0 noise variance is independent of the density level") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  NoiseSpec spec;
  spec.gamma = 0.0;
  spec.omega = 0.8;
  spec.seed = 77;
  for (double level : {50.0, 200.0}) {
    DensityField f = flat_field(d, 40, 40, level, {0.0, 1.0});
    DensityField out = apply_noise(f, spec);
    double sumsq = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double diff = out.values()[k] - level;
      sumsq += diff * diff;
    }
    const double var = sumsq / double(f.size());
    CHECK(std::abs(var - 0.64) / 0.64 < 0.1);
  }
}

TEST_CASE("multiplicative noise vanishes on an empty field") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  DensityField f = flat_field(d, 6, 6, 0.0, {0.0});
  NoiseSpec spec;
  spec.gamma = 1.0;
  spec.omega = 2.0;
  spec.seed = 3;
  DensityField out = apply_noise(f, spec);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("noise is seed-deterministic") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  DensityField f = flat_field(d, 8, 8, 20.0, {0.0});
  NoiseSpec spec;
  spec.gamma = 0.0;
  spec.omega = 1.0;
  spec.seed = 99;
  DensityField a = apply_noise(f, spec);
  DensityField b = apply_noise(f, spec);
  CHECK(a.values() == b.values());
  spec.seed = 100;
  DensityField c = apply_noise(f, spec);
  CHECK(a.values() != c.values());
}

TEST_CASE("noisy densities never go negative") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  DensityField f = flat_field(d, 20, 20, 0.5, {0.0});
  NoiseSpec spec;
  spec.gamma = 0.0;
  spec.omega = 3.0;
  spec.seed = 5;
  DensityField out = apply_noise(f, spec);
  for (double v : out.values()) CHECK(v >= 0.0);
}

TEST_CASE("empty field samples an empty cloud") {
  Domain d{0.0, 1.0, 0.0, 1.0, 0.0, 1.0};
  DensityField f = flat_field(d, 4, 4, 0.0, {0.0, 1.0});
  PointCloud cloud = sample_points(f, 1);
  CHECK(cloud.records.empty());
  CHECK(cloud.frame_times == f.times());
}

TEST_CASE("a single occupied bin yields exactly its points") {
  Domain d{0.0, 0.5, 0.0, 0.4, 0.0, 1.0};
  DensityField f = flat_field(d, 5, 4, 0.0, {0.0, 1.0});
  f.at(2, 3, 0) = 5.0;
  PointCloud cloud = sample_points(f, 7);
  REQUIRE(cloud.records.size() == 5u);
  for (const auto& rec : cloud.records) {
    CHECK(rec.t == 0.0);
    CHECK(rec.x1 >= 0.2);
    CHECK(rec.x1 < 0.3);
    CHECK(rec.x2 >= 0.3);
    CHECK(rec.x2 < 0.4);
  }
}

TEST_CASE("binning sampled points recovers the rounded field") {
  Domain d{0.0, 1.5, 0.0, 1.1, 0.0, 4.0 / 3.0};
  std::vector<double> times;
  for (int s = 0; s < 9; ++s) times.push_back(s / 6.0);
  DensityField f = flat_field(d, 15, 11, 0.0, times);
  Rng rng(31);
  for (auto& v : f.values()) v = std::floor(rng.uniform(0.0, 8.0));
  PointCloud cloud = sample_points(f, 55);
  DensityField back = bin_points(cloud, d, 0.1);
  REQUIRE(back.size() == f.size());
  CHECK(back.values() == f.values());
}

TEST_CASE("reference model grows monotonically below carrying capacity") {
  Domain d{0.0, 1.5, 0.0, 1.1, 0.0, 4.0 / 3.0};
  const std::vector<Bump> bumps = {{0.4, 0.3, 0.2, 30.0},
                                   {1.1, 0.8, 0.25, 25.0},
                                   {0.7, 0.9, 0.15, 20.0}};
  const std::vector<Bump> voids = {{1.2, 0.2, 0.3, 1.0}};
  DensityField ic = bumps_ic(d, 15, 11, 0.0, bumps, voids);
  CHECK(ic.max_value() > 10.0);
  double min_v = 1e300;
  for (double v : ic.values()) min_v = std::min(min_v, v);
  CHECK(min_v < 0.5);  // the void really is nearly empty

  TrueModel m = reference_model(std::move(ic), 40.0, 60.0);
  std::vector<double> times;
  for (int s = 0; s < 9; ++s) times.push_back(s / 6.0);
  DensityField out = generate_clean(m, times);
  double prev = frame_sum(out, 0);
  for (int s = 1; s < 9; ++s) {
    const double cur = frame_sum(out, s);
    CHECK(cur > prev);
    prev = cur;
  }
}
