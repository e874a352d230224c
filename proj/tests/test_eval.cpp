#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include "rdbinn/errors.hpp"
#include "rdbinn/eval.hpp"
#include "rdbinn/grid.hpp"
#include "rdbinn/mlp.hpp"
#include "rdbinn/rng.hpp"
#include "rdbinn/solver.hpp"
#include "rdbinn/sr.hpp"
#include "rdbinn/synth.hpp"

using namespace rdbinn;

namespace {

DensityField geometry_15x11(std::vector<double> times) {
  Domain d{0.0, 1.5, 0.0, 1.1, 0.0, 2.0};
  return DensityField(d, 15, 11, 0.1, 0.1, std::move(times));
}

}  // namespace

TEST_CASE("count_from_net: the zero-parameter net gives 165 ln2 u_max") {
  Network net = make_density_net();
  net.params.assign(net.param_count(), 0.0);
  Scaling sc{1.5, 2.0, 7.3};
  DensityField g = geometry_15x11({0.0});
  const auto counts = count_from_net(net, sc, g, {0.0, 1.0, 2.0});
  REQUIRE(counts.size() == 3);
  const double expected = 165.0 * std::log(2.0) * 7.3;
  for (double c : counts) CHECK(c == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("count_from_net: single time gives a length-1 curve") {
  Network net = make_density_net();
  net.params.assign(net.param_count(), 0.0);
  const auto counts =
      count_from_net(net, Scaling{1.5, 2.0, 1.0}, geometry_15x11({0.0}), {0.5});
  CHECK(counts.size() == 1);
}

TEST_CASE("count_from_net matches a hand-rolled sum on a random net") {
  Network net = make_density_net();
  Rng rng(17);
  init_params(net, rng);
  Scaling sc{1.5, 2.0, 12.0};
  DensityField g = geometry_15x11({0.0});
  const Domain& d = g.domain();
  const double t = 1.3;

  Evaluator ev(net);
  double sum = 0.0;
  for (int i = 0; i < g.n_x1(); ++i)
    for (int j = 0; j < g.n_x2(); ++j) {
      const double x[3] = {(g.center_x1(i) - d.x1_min) / sc.length,
                           (g.center_x2(j) - d.x2_min) / sc.length,
                           (t - d.t_min) / sc.time};
      sum += ev(std::span<const double>(x, 3));
    }

  const auto counts = count_from_net(net, sc, g, {t});
  REQUIRE(counts.size() == 1);
  CHECK(counts[0] == doctest::Approx(sum * sc.density).epsilon(1e-12));
}

TEST_CASE("count_from_solve sums each frame") {
  Domain d{0.0, 0.3, 0.0, 0.2, 0.0, 1.0};
  DensityField f(d, 3, 2, 0.1, 0.1, {0.0, 1.0});
  double v = 1.0;
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) f.at(i, j, s) = v++;
  const auto counts = count_from_solve(f);
  REQUIRE(counts.size() == 2);
  CHECK(counts[0] == doctest::Approx(total_count(f, 0)));
  CHECK(counts[1] == doctest::Approx(total_count(f, 1)));
  CHECK(counts[0] == doctest::Approx(1.0 + 2 + 3 + 4 + 5 + 6));
  CHECK(counts[1] == doctest::Approx(7.0 + 8 + 9 + 10 + 11 + 12));
}

TEST_CASE("compare: exact copy scores zero, 1.1x scores 0.1") {
  CountCurves c;
  c.times = {0.0, 1.0, 2.0};
  c.n_data = {100.0, 150.0, 230.0};
  c.n_u = c.n_data;
  c.n_sr = {110.0, 165.0, 253.0};
  const auto m = compare(c);
  REQUIRE(m.size() == 2);
  CHECK(m[0].name == "N_u");
  CHECK(m[0].rel_l2 == 0.0);
  CHECK(m[0].final_err == 0.0);
  CHECK(m[1].name == "N_SR");
  CHECK(m[1].rel_l2 == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(m[1].final_err == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("compare matches the direct formulas on random curves") {
  Rng rng(5);
  CountCurves c;
  for (int k = 0; k < 7; ++k) {
    c.times.push_back(k);
    c.n_data.push_back(rng.uniform(10.0, 20.0));
    c.n_fwd.push_back(rng.uniform(10.0, 20.0));
  }
  const auto m = compare(c);
  REQUIRE(m.size() == 1);
  CHECK(m[0].name == "N_fwd");

  double num = 0.0, den = 0.0;
  for (int k = 0; k < 7; ++k) {
    num += (c.n_fwd[std::size_t(k)] - c.n_data[std::size_t(k)]) *
           (c.n_fwd[std::size_t(k)] - c.n_data[std::size_t(k)]);
    den += c.n_data[std::size_t(k)] * c.n_data[std::size_t(k)];
  }
  CHECK(m[0].rel_l2 == doctest::Approx(std::sqrt(num / den)).epsilon(1e-12));
  CHECK(m[0].final_err ==
        doctest::Approx(std::abs(c.n_fwd.back() - c.n_data.back()) / c.n_data.back())
            .epsilon(1e-12));

  // Both metrics are ratios: a common rescale changes nothing.
  CountCurves scaled = c;
  for (auto* v : {&scaled.n_data, &scaled.n_fwd})
    for (double& x : *v) x *= 7.0;
  const auto ms = compare(scaled);
  CHECK(ms[0].rel_l2 == doctest::Approx(m[0].rel_l2).epsilon(1e-12));
  CHECK(ms[0].final_err == doctest::Approx(m[0].final_err).epsilon(1e-12));
}

TEST_CASE("compare rejects missing or degenerate N_data") {
  CountCurves c;
  c.times = {0.0, 1.0};
  c.n_u = {1.0, 2.0};
  CHECK_THROWS_AS(compare(c), InputError);
  c.n_data = {0.0, 0.0};
  CHECK_THROWS_AS(compare(c), InputError);
  c.n_u = {1.0};  // length mismatch
  c.n_data = {1.0, 2.0};
  CHECK_THROWS_AS(compare(c), InputError);
}

TEST_CASE("rate_symbolic rescales the input only") {
  const Expr e = parse_expression("0.01 + 0.02*exp(2*U)");
  Scaling sc{1.5, 2.0, 5.0};
  const RateFn r = rate_symbolic(e, sc);
  CHECK(r.kind == RateFn::Kind::kSymbolic);
  CHECK(r.descriptor == "0.01 + 0.02*exp(2*U)");
  CHECK(r(0.0) == doctest::Approx(0.03).epsilon(1e-14));
  CHECK(r(5.0) == doctest::Approx(0.01 + 0.02 * std::exp(2.0)).epsilon(1e-14));
  CHECK(r(2.5) == doctest::Approx(0.01 + 0.02 * std::exp(1.0)).epsilon(1e-14));
}

TEST_CASE("planted symbolic rates reproduce the clean generator's counts") {
  Domain d{0.0, 1.2, 0.0, 0.9, 0.0, 1.5};
  const Bump bumps[] = {{0.35, 0.30, 0.22, 24.0}, {0.85, 0.60, 0.18, 18.0}};
  DensityField ic = bumps_ic(d, 12, 9, 0.0, bumps, {});
  const double u0 = ic.max_value();
  REQUIRE(u0 > 0.0);

  TrueModel model;
  model.D = rate_constant(0.0);
  model.D.descriptor = "0.01 + 0.02 exp(2 u/u0)";
  model.D.f = [u0](double u) { return 0.01 + 0.02 * std::exp(2.0 * u / u0); };
  model.G = rate_constant(0.0);
  model.G.descriptor = "0.8 - 0.5 u/u0";
  model.G.f = [u0](double u) { return 0.8 - 0.5 * u / u0; };
  model.ic = ic;

  const std::vector<double> times{0.0, 0.5, 1.0, 1.5};
  const DensityField clean = generate_clean(model, times);
  const auto n_ref = count_from_solve(clean);

  Scaling sc{1.2, 1.5, u0};
  const RateFn d_sr = rate_symbolic(parse_expression("0.01 + 0.02*exp(2*U)"), sc);
  const RateFn g_sr = rate_symbolic(parse_expression("0.8 - 0.5*U"), sc);
  const SolveResult r = solve_rd(d_sr, g_sr, ic, times);
  const auto n_sr = count_from_solve(r.field);

  REQUIRE(n_sr.size() == n_ref.size());
  for (std::size_t s = 0; s < n_ref.size(); ++s) {
    REQUIRE(n_ref[s] > 0.0);
    CHECK(std::abs(n_sr[s] - n_ref[s]) / n_ref[s] < 1e-4);
  }
}

TEST_CASE("count curves CSV round-trips with blank absent columns") {
  CountCurves c;
  c.times = {0.0, 0.5, 1.25};
  c.n_data = {100.0, 130.5, 171.25};
  c.n_fwd = {99.0, 131.0, 170.0};
  const std::string text = count_curves_to_csv(c);
  CHECK(text ==
        "t,N_data,N_u,N_fwd,N_SR\n"
        "0,100,,99,\n"
        "0.5,130.5,,131,\n"
        "1.25,171.25,,170,\n");

  const CountCurves back = count_curves_from_csv(text, "test");
  CHECK(back.times == c.times);
  CHECK(back.n_data == c.n_data);
  CHECK(back.n_u.empty());
  CHECK(back.n_fwd == c.n_fwd);
  CHECK(back.n_sr.empty());

  const auto path = std::filesystem::temp_directory_path() / "rdbinn_counts_test.csv";
  write_count_curves_csv(c, path);
  const CountCurves file_back = read_count_curves_csv(path);
  CHECK(file_back.n_data == c.n_data);
  CHECK(file_back.n_fwd == c.n_fwd);
  std::filesystem::remove(path);
}

TEST_CASE("count curves CSV rejects malformed input") {
  CHECK_THROWS_AS(count_curves_from_csv("t,N_data\n", "test"), InputError);
  CHECK_THROWS_AS(
      count_curves_from_csv("t,N_data,N_u,N_fwd,N_SR\n0,1,2\n", "test"), InputError);
  // A column filled in some rows and blank in others is not a curve.
  CHECK_THROWS_AS(count_curves_from_csv(
                      "t,N_data,N_u,N_fwd,N_SR\n0,1,2,,\n1,2,,,\n", "test"),
                  InputError);
  CHECK_THROWS_AS(count_curves_from_csv(
                      "t,N_data,N_u,N_fwd,N_SR\n0,abc,,,\n", "test"),
                  InputError);
}
