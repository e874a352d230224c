#include "rdbinn/synth.hpp"

#include <cmath>

#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"
#include "rdbinn/rng.hpp"

namespace rdbinn {

DensityField generate_clean(const TrueModel& model, const std::vector<double>& times,
                            const SolveSpec& spec) {
  for (double t : times)
    if (t < model.ic.domain().t_min - 1e-12 || t > model.ic.domain().t_max + 1e-12)
      throw InputError("generate_clean: output time " + io::fmt(t) +
                       " outside the domain");
  SolveResult r = solve_rd(model.D, model.G, model.ic, times, spec);
  return std::move(r.field);
}

DensityField apply_noise(const DensityField& field, const NoiseSpec& spec) {
  if (spec.omega < 0.0) throw InputError("apply_noise: omega must be >= 0");
  DensityField out = field;
  if (spec.omega == 0.0) return out;
  Rng rng(spec.seed);
  for (auto& v : out.values()) {
    const double scale = spec.gamma == 0.0 ? 1.0 : std::pow(v, spec.gamma);
    v = std::max(0.0, v + spec.omega * scale * rng.normal());
  }
  return out;
}

PointCloud sample_points(const DensityField& field, std::uint64_t seed) {
  PointCloud cloud;
  cloud.frame_times = field.times();
  Rng rng(seed);
  const Domain& d = field.domain();
  for (int i = 0; i < field.n_x1(); ++i) {
    const double x1_lo = d.x1_min + i * field.bin_size_x1();
    const double w1 = field.bin_width_x1(i);
    for (int j = 0; j < field.n_x2(); ++j) {
      const double x2_lo = d.x2_min + j * field.bin_size_x2();
      const double w2 = field.bin_width_x2(j);
      for (int s = 0; s < field.n_t(); ++s) {
        const long n = std::llround(field.at(i, j, s));
        for (long k = 0; k < n; ++k) {
          PointRecord rec;
          rec.x1 = x1_lo + w1 * rng.uniform01();
          rec.x2 = x2_lo + w2 * rng.uniform01();
          rec.t = field.times()[std::size_t(s)];
          cloud.records.push_back(rec);
        }
      }
    }
  }
  return cloud;
}

DensityField bumps_ic(const Domain& domain, int n1, int n2, double t0,
                      std::span<const Bump> bumps, std::span<const Bump> voids) {
  DensityField f(domain, n1, n2, domain.extent_x1() / n1, domain.extent_x2() / n2,
                 {t0});
  for (int i = 0; i < n1; ++i)
    for (int j = 0; j < n2; ++j) {
      const double x = f.center_x1(i), y = f.center_x2(j);
      double u = 0.0;
      for (const Bump& b : bumps) {
        const double r2 = (x - b.x1) * (x - b.x1) + (y - b.x2) * (y - b.x2);
        u += b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
      }
      double mask = 1.0;
      for (const Bump& v : voids) {
        const double r2 = (x - v.x1) * (x - v.x1) + (y - v.x2) * (y - v.x2);
        mask -= v.amplitude * std::exp(-r2 / (2.0 * v.sigma * v.sigma));
      }
      f.at(i, j, 0) = std::max(0.0, u * std::max(0.0, mask));
    }
  return f;
}

TrueModel reference_model(DensityField ic, double u_ref, double carrying_capacity) {
  if (u_ref <= 0.0 || carrying_capacity <= 0.0)
    throw InputError("reference_model: scales must be positive");
  TrueModel m;
  m.ic = std::move(ic);
  m.D.kind = RateFn::Kind::kSymbolic;
  m.D.descriptor = "0.01 + 0.02*exp(2*U/" + io::fmt(u_ref) + ")";
  m.D.f = [u_ref](double u) { return 0.01 + 0.02 * std::exp(2.0 * u / u_ref); };
  m.G.kind = RateFn::Kind::kSymbolic;
  m.G.descriptor = "1.0*(1 - U/" + io::fmt(carrying_capacity) + ")";
  m.G.f = [carrying_capacity](double u) { return 1.0 - u / carrying_capacity; };
  m.descriptor = "reference reaction-diffusion model";
  return m;
}

}  // namespace rdbinn
