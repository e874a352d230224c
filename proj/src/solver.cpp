#include "rdbinn/solver.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"

namespace rdbinn {

RateFn rate_constant(double v) {
  RateFn r;
  r.kind = RateFn::Kind::kConstant;
  r.descriptor = io::fmt(v);
  r.f = [v](double) { return v; };
  return r;
}

RateFn rate_diffusion_net(const Network& net, const Scaling& sc) {
  RateFn r;
  r.kind = RateFn::Kind::kMlp;
  r.descriptor = "diffusion-mlp";
  auto ev = std::make_shared<Evaluator>(net);
  r.f = [ev, sc](double u) { return sc.unscale_diffusion(ev->eval1(sc.scale_density(u))); };
  return r;
}

RateFn rate_growth_net(const Network& net, const Scaling& sc) {
  RateFn r;
  r.kind = RateFn::Kind::kMlp;
  r.descriptor = "growth-mlp";
  auto ev = std::make_shared<Evaluator>(net);
  r.f = [ev, sc](double u) { return sc.unscale_growth(ev->eval1(sc.scale_density(u))); };
  return r;
}

namespace {

void require_uniform_bins(const DensityField& f) {
  const double tol1 = 1e-6 * f.bin_size_x1();
  const double tol2 = 1e-6 * f.bin_size_x2();
  if (std::abs(f.bin_width_x1(f.n_x1() - 1) - f.bin_size_x1()) > tol1 ||
      std::abs(f.bin_width_x2(f.n_x2() - 1) - f.bin_size_x2()) > tol2)
    throw InputError("solver requires uniform bins; the domain extent is not a "
                     "multiple of the bin size");
}

struct Workspace {
  int n1, n2;
  double dx1, dx2;
  const RateFn* D;
  const RateFn* G;
  double max_D = 0.0;
  double max_absG = 0.0;

  // du/dt of the conservative scheme; also refreshes max_D / max_absG.
  void rhs(const std::vector<double>& u, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    max_D = 0.0;
    max_absG = 0.0;
    auto idx = [this](int i, int j) { return i * n2 + j; };
    for (int i = 0; i + 1 < n1; ++i)
      for (int j = 0; j < n2; ++j) {
        const double ul = u[idx(i, j)], ur = u[idx(i + 1, j)];
        const double d = (*D)(0.5 * (ul + ur));
        max_D = std::max(max_D, d);
        const double flux = d * (ur - ul) / dx1;
        out[idx(i, j)] += flux / dx1;
        out[idx(i + 1, j)] -= flux / dx1;
      }
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j + 1 < n2; ++j) {
        const double ul = u[idx(i, j)], ur = u[idx(i, j + 1)];
        const double d = (*D)(0.5 * (ul + ur));
        max_D = std::max(max_D, d);
        const double flux = d * (ur - ul) / dx2;
        out[idx(i, j)] += flux / dx2;
        out[idx(i, j + 1)] -= flux / dx2;
      }
    for (int c = 0; c < n1 * n2; ++c) {
      const double g = (*G)(u[c]);
      max_absG = std::max(max_absG, std::abs(g));
      out[c] += g * u[c];
    }
  }
};

}  // namespace

SolveResult solve_rd(const RateFn& D, const RateFn& G, const DensityField& initial,
                     const std::vector<double>& times, const SolveSpec& spec) {
  require_uniform_bins(initial);
  if (initial.n_t() < 1) throw InputError("solver: initial field has no frame");
  const double t0 = initial.times()[0];
  for (std::size_t s = 0; s < times.size(); ++s) {
    if (times[s] < t0 - 1e-12)
      throw InputError("solver: output time before the initial time");
    if (s > 0 && times[s] < times[s - 1])
      throw InputError("solver: output times must be nondecreasing");
  }

  const int n1 = initial.n_x1(), n2 = initial.n_x2();
  const int n_cells = n1 * n2;
  Workspace ws{n1, n2, initial.bin_size_x1(), initial.bin_size_x2(), &D, &G};

  std::vector<double> u(n_cells);
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) u[i * n2 + j] = initial.at(i, j, 0);

  SolveResult res;
  res.field = DensityField(initial.domain(), n1, n2, initial.bin_size_x1(),
                           initial.bin_size_x2(), times);

  std::vector<double> k1(n_cells), k2(n_cells), k3(n_cells), k4(n_cells),
      stage(n_cells);

  const double t_end = times.empty() ? t0 : times.back();
  const double span = std::max(t_end - t0, 1.0);
  const double dx2min = std::min(ws.dx1 * ws.dx1, ws.dx2 * ws.dx2);

  double t = t0;
  std::size_t next_out = 0;
  auto emit_due_frames = [&]() {
    while (next_out < times.size() && times[next_out] <= t + 1e-12 * span) {
      for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j)
          res.field.at(i, j, static_cast<int>(next_out)) = u[i * n2 + j];
      ++next_out;
    }
  };
  emit_due_frames();

  while (next_out < times.size()) {
    if (res.steps >= spec.max_steps)
      throw NumericError("solver: step budget exhausted at t=" + io::fmt(t));

    ws.rhs(u, k1);
    res.max_diffusion_seen = std::max(res.max_diffusion_seen, ws.max_D);

    double dt = spec.max_dt;
    if (ws.max_D > 0.0) dt = std::min(dt, spec.safety * dx2min / (4.0 * ws.max_D));
    if (ws.max_absG > 0.0) dt = std::min(dt, 0.1 / ws.max_absG);
    dt = std::min(dt, times[next_out] - t);
    dt = std::min(dt, t_end - t);
    if (!(dt > 0.0) || dt < 1e-14 * span)
      throw NumericError("solver: time step underflow at step " +
                         std::to_string(res.steps) + " (max D = " +
                         io::fmt(ws.max_D) + ", t = " + io::fmt(t) + ")");

    for (int c = 0; c < n_cells; ++c) stage[c] = u[c] + 0.5 * dt * k1[c];
    ws.rhs(stage, k2);
    for (int c = 0; c < n_cells; ++c) stage[c] = u[c] + 0.5 * dt * k2[c];
    ws.rhs(stage, k3);
    for (int c = 0; c < n_cells; ++c) stage[c] = u[c] + dt * k3[c];
    ws.rhs(stage, k4);

    double clamp_step = 0.0, total = 0.0;
    bool finite = true;
    for (int c = 0; c < n_cells; ++c) {
      double v = u[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
      if (!std::isfinite(v) || std::abs(v) > spec.max_value) finite = false;
      if (v < 0.0) {
        clamp_step -= v;
        v = 0.0;
      }
      u[c] = v;
      total += v;
    }
    if (!finite)
      throw NumericError("solver: solution blew up at step " +
                         std::to_string(res.steps) + " (max D = " +
                         io::fmt(ws.max_D) + ", t = " + io::fmt(t) + ")");
    res.clamped_mass += clamp_step;
    if (total > 0.0)
      res.max_step_clamp_frac = std::max(res.max_step_clamp_frac, clamp_step / total);

    t += dt;
    ++res.steps;
    emit_due_frames();
  }
  return res;
}

DensityField ic_from_density_net(const Network& u_net, const Scaling& sc,
                                 const DensityField& geometry) {
  const Domain& d = geometry.domain();
  DensityField out(d, geometry.n_x1(), geometry.n_x2(), geometry.bin_size_x1(),
                   geometry.bin_size_x2(), {d.t_min});
  Evaluator ev(u_net);
  for (int i = 0; i < geometry.n_x1(); ++i)
    for (int j = 0; j < geometry.n_x2(); ++j) {
      const double x[3] = {(geometry.center_x1(i) - d.x1_min) / sc.length,
                           (geometry.center_x2(j) - d.x2_min) / sc.length, 0.0};
      out.at(i, j, 0) = sc.unscale_density(ev(std::span<const double>(x, 3)));
    }
  return out;
}

}  // namespace rdbinn
