#include "rdbinn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "rdbinn/errors.hpp"

namespace rdbinn {

void Domain::validate() const {
  if (!(x1_max > x1_min) || !(x2_max > x2_min) || !(t_max > t_min)) {
    std::ostringstream oss;
    oss << "degenerate domain: [" << x1_min << "," << x1_max << "]x[" << x2_min
        << "," << x2_max << "]x[" << t_min << "," << t_max << "]";
    throw InputError(oss.str());
  }
}

PointCloud PointCloud::from_records(std::vector<PointRecord> records) {
  PointCloud cloud;
  cloud.records = std::move(records);
  cloud.frame_times.reserve(cloud.records.size());
  for (const auto& r : cloud.records) cloud.frame_times.push_back(r.t);
  std::sort(cloud.frame_times.begin(), cloud.frame_times.end());
  cloud.frame_times.erase(
      std::unique(cloud.frame_times.begin(), cloud.frame_times.end()),
      cloud.frame_times.end());
  return cloud;
}

DensityField::DensityField(Domain domain, int n_x1, int n_x2,
                           double bin_size_x1, double bin_size_x2,
                           std::vector<double> times)
    : domain_(domain),
      n_x1_(n_x1),
      n_x2_(n_x2),
      bin_size_x1_(bin_size_x1),
      bin_size_x2_(bin_size_x2),
      times_(std::move(times)) {
  domain_.validate();
  if (n_x1_ < 1 || n_x2_ < 1 || times_.empty())
    throw InputError("density field needs at least one bin per axis and one time");
  for (std::size_t s = 1; s < times_.size(); ++s)
    if (!(times_[s] > times_[s - 1]))
      throw InputError("density field times must be strictly increasing");
  values_.assign(static_cast<std::size_t>(n_x1_) * n_x2_ * times_.size(), 0.0);
}

std::size_t DensityField::flat_index(int i, int j, int s) const {
  if (i < 0 || i >= n_x1_ || j < 0 || j >= n_x2_ || s < 0 ||
      s >= static_cast<int>(times_.size())) {
    std::ostringstream oss;
    oss << "density index (" << i << "," << j << "," << s << ") out of range "
        << n_x1_ << "x" << n_x2_ << "x" << times_.size();
    throw InputError(oss.str());
  }
  return (static_cast<std::size_t>(i) * n_x2_ + j) * times_.size() + s;
}

void DensityField::unflatten_index(std::size_t flat, int& i, int& j, int& s) const {
  const std::size_t nt = times_.size();
  s = static_cast<int>(flat % nt);
  const std::size_t ij = flat / nt;
  j = static_cast<int>(ij % n_x2_);
  i = static_cast<int>(ij / n_x2_);
}

double DensityField::bin_width_x1(int i) const {
  if (i < n_x1_ - 1) return bin_size_x1_;
  return domain_.extent_x1() - (n_x1_ - 1) * bin_size_x1_;
}

double DensityField::bin_width_x2(int j) const {
  if (j < n_x2_ - 1) return bin_size_x2_;
  return domain_.extent_x2() - (n_x2_ - 1) * bin_size_x2_;
}

double DensityField::center_x1(int i) const {
  return domain_.x1_min + i * bin_size_x1_ + 0.5 * bin_width_x1(i);
}

double DensityField::center_x2(int j) const {
  return domain_.x2_min + j * bin_size_x2_ + 0.5 * bin_width_x2(j);
}

double DensityField::max_value() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, v);
  return m;
}

int bin_count(double extent, double bin_size) {
  if (!(bin_size > 0.0)) throw InputError("bin size must be positive");
  // The 1e-9 slack keeps exact multiples (e.g. 1.5 / 0.1) from spilling
  // into a spurious extra bin.
  return std::max(1, static_cast<int>(std::ceil(extent / bin_size - 1e-9)));
}

namespace {

int locate_bin(double x, double lo, double bin_size, int n) {
  int idx = static_cast<int>(std::floor((x - lo) / bin_size));
  if (idx >= n) idx = n - 1;  // max edge and partial last bin
  if (idx < 0) idx = 0;       // x == lo with rounding below
  return idx;
}

}  // namespace

DensityField bin_points(const PointCloud& points, const Domain& domain,
                        double bin_size) {
  domain.validate();
  const int n1 = bin_count(domain.extent_x1(), bin_size);
  const int n2 = bin_count(domain.extent_x2(), bin_size);
  if (points.frame_times.empty())
    throw InputError("point cloud has no frame times");

  DensityField field(domain, n1, n2, bin_size, bin_size, points.frame_times);

  std::map<double, int> frame_of;
  for (std::size_t s = 0; s < points.frame_times.size(); ++s)
    frame_of[points.frame_times[s]] = static_cast<int>(s);

  std::ostringstream bad;
  int n_bad = 0;
  for (std::size_t r = 0; r < points.records.size(); ++r) {
    const auto& rec = points.records[r];
    const auto frame = frame_of.find(rec.t);
    if (!domain.contains(rec.x1, rec.x2, rec.t) || frame == frame_of.end()) {
      if (n_bad < 10) {
        bad << "\n  record " << r << ": (" << rec.x1 << ", " << rec.x2 << ", "
            << rec.t << ")";
      }
      ++n_bad;
      continue;
    }
    const int i = locate_bin(rec.x1, domain.x1_min, bin_size, n1);
    const int j = locate_bin(rec.x2, domain.x2_min, bin_size, n2);
    field.at(i, j, frame->second) += 1.0;
  }
  if (n_bad > 0) {
    std::ostringstream oss;
    oss << n_bad << " record(s) outside the domain or with unknown frame time:"
        << bad.str();
    if (n_bad > 10) oss << "\n  ...";
    throw InputError(oss.str());
  }
  return field;
}

double total_count(const DensityField& field, int s) {
  if (s < 0 || s >= field.n_t()) {
    std::ostringstream oss;
    oss << "time index " << s << " out of range [0," << field.n_t() << ")";
    throw InputError(oss.str());
  }
  double sum = 0.0;
  for (int i = 0; i < field.n_x1(); ++i)
    for (int j = 0; j < field.n_x2(); ++j) sum += field.at(i, j, s);
  return sum;
}

Scaling make_scaling(const DensityField& field) {
  const double u_max = field.max_value();
  if (!(u_max > 0.0))
    throw InputError("cannot build scaling from an all-zero density field");
  Scaling s;
  s.length = std::max(field.domain().extent_x1(), field.domain().extent_x2());
  s.time = field.domain().extent_t();
  s.density = u_max;
  return s;
}

}  // namespace rdbinn
