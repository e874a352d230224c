#include "rdbinn/eval.hpp"

#include <cmath>
#include <cstddef>
#include <sstream>

#include "rdbinn/errors.hpp"
#include "rdbinn/io.hpp"

namespace rdbinn {
namespace {

void check_curve(const CountCurves& c, const std::vector<double>& v, const char* name) {
  if (!v.empty() && v.size() != c.times.size())
    throw InputError(std::string(name) + " has " + std::to_string(v.size()) +
                     " entries for " + std::to_string(c.times.size()) + " times");
}

}  // namespace

void CountCurves::validate() const {
  if (times.empty()) throw InputError("count curves: no times");
  check_curve(*this, n_data, "N_data");
  check_curve(*this, n_u, "N_u");
  check_curve(*this, n_fwd, "N_fwd");
  check_curve(*this, n_sr, "N_SR");
}

std::vector<double> count_from_net(const Network& u_net, const Scaling& sc,
                                   const DensityField& geometry,
                                   const std::vector<double>& times) {
  const Domain& d = geometry.domain();
  Evaluator ev(u_net);
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) {
    double sum = 0.0;
    const double ts = (t - d.t_min) / sc.time;
    for (int i = 0; i < geometry.n_x1(); ++i) {
      const double x1 = (geometry.center_x1(i) - d.x1_min) / sc.length;
      for (int j = 0; j < geometry.n_x2(); ++j) {
        const double x[3] = {x1, (geometry.center_x2(j) - d.x2_min) / sc.length, ts};
        sum += ev(std::span<const double>(x, 3));
      }
    }
    out.push_back(sc.unscale_density(sum));
  }
  return out;
}

std::vector<double> count_from_solve(const DensityField& field) {
  std::vector<double> out;
  out.reserve(std::size_t(field.n_t()));
  for (int s = 0; s < field.n_t(); ++s) out.push_back(total_count(field, s));
  return out;
}

std::vector<CurveMetrics> compare(const CountCurves& curves) {
  curves.validate();
  if (curves.n_data.empty()) throw InputError("compare: N_data is required");
  double norm = 0.0;
  for (double v : curves.n_data) norm += v * v;
  norm = std::sqrt(norm);
  const double final_ref = curves.n_data.back();
  if (norm == 0.0 || final_ref == 0.0)
    throw InputError("compare: N_data is degenerate (zero norm or final value)");

  std::vector<CurveMetrics> out;
  const auto add = [&](const std::vector<double>& c, const char* name) {
    if (c.empty()) return;
    double diff = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      const double e = c[k] - curves.n_data[k];
      diff += e * e;
    }
    out.push_back({name, std::sqrt(diff) / norm,
                   std::abs(c.back() - final_ref) / final_ref});
  };
  add(curves.n_u, "N_u");
  add(curves.n_fwd, "N_fwd");
  add(curves.n_sr, "N_SR");
  return out;
}

RateFn rate_symbolic(const Expr& expr, const Scaling& sc) {
  RateFn r;
  r.kind = RateFn::Kind::kSymbolic;
  r.descriptor = expr_to_string(expr);
  r.f = [expr, density = sc.density](double u) { return expr_eval(expr, u / density); };
  return r;
}

std::string count_curves_to_csv(const CountCurves& curves) {
  curves.validate();
  std::ostringstream os;
  os << "t,N_data,N_u,N_fwd,N_SR\n";
  const auto cell = [&](const std::vector<double>& v, std::size_t k) {
    os << ',';
    if (!v.empty()) os << io::fmt(v[k]);
  };
  for (std::size_t k = 0; k < curves.times.size(); ++k) {
    os << io::fmt(curves.times[k]);
    cell(curves.n_data, k);
    cell(curves.n_u, k);
    cell(curves.n_fwd, k);
    cell(curves.n_sr, k);
    os << '\n';
  }
  return os.str();
}

CountCurves count_curves_from_csv(const std::string& text, const std::string& context) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) ||
      io::split_csv_line(line) !=
          std::vector<std::string>{"t", "N_data", "N_u", "N_fwd", "N_SR"})
    throw InputError(context + ": expected header 't,N_data,N_u,N_fwd,N_SR'");

  CountCurves c;
  std::vector<double>* const cols[4] = {&c.n_data, &c.n_u, &c.n_fwd, &c.n_sr};
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = io::split_csv_line(line);
    if (fields.size() != 5)
      throw InputError(context + ": row " + std::to_string(row + 1) + " has " +
                       std::to_string(fields.size()) + " fields, expected 5");
    c.times.push_back(io::parse_double(fields[0], context + " t"));
    for (int m = 0; m < 4; ++m) {
      if (fields[std::size_t(m) + 1].empty()) continue;
      if (cols[m]->size() != row)
        throw InputError(context + ": column " + std::to_string(m + 2) +
                         " is only partially filled");
      cols[m]->push_back(io::parse_double(fields[std::size_t(m) + 1], context));
    }
    ++row;
  }
  for (const auto* col : cols)
    if (!col->empty() && col->size() != row)
      throw InputError(context + ": a curve column is only partially filled");
  c.validate();
  return c;
}

void write_count_curves_csv(const CountCurves& curves, const std::filesystem::path& path) {
  io::atomic_write(path, count_curves_to_csv(curves));
}

CountCurves read_count_curves_csv(const std::filesystem::path& path) {
  return count_curves_from_csv(io::read_file(path), path.string());
}

}  // namespace rdbinn
