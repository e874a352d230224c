#pragma once
#include <cstdint>
#include <vector>

namespace rdbinn {

// Rectangular spatio-temporal observation domain. Lengths in mm, times in days.
struct Domain {
  double x1_min = 0.0, x1_max = 1.0;
  double x2_min = 0.0, x2_max = 1.0;
  double t_min = 0.0, t_max = 1.0;

  double extent_x1() const { return x1_max - x1_min; }
  double extent_x2() const { return x2_max - x2_min; }
  double extent_t() const { return t_max - t_min; }

  bool contains(double x1, double x2, double t) const {
    return x1 >= x1_min && x1 <= x1_max && x2 >= x2_min && x2 <= x2_max &&
           t >= t_min && t <= t_max;
  }

  // Throws InputError when any extent is non-positive.
  void validate() const;
};

struct PointRecord {
  double x1 = 0.0;  // mm
  double x2 = 0.0;  // mm
  double t = 0.0;   // days
};

// Discrete observations (x1, x2, t). frame_times lists the sorted unique
// observation times; every record's t must be one of them.
struct PointCloud {
  std::vector<PointRecord> records;
  std::vector<double> frame_times;

  // Builds the cloud with frame_times derived from the records.
  static PointCloud from_records(std::vector<PointRecord> records);
};

// Binned density tensor, units cells per bin. Storage is row-major over
// (i, j, s) with s fastest: flat index (i*n_x2 + j)*n_t + s.
class DensityField {
 public:
  DensityField() = default;
  DensityField(Domain domain, int n_x1, int n_x2, double bin_size_x1,
               double bin_size_x2, std::vector<double> times);

  double& at(int i, int j, int s) { return values_[flat_index(i, j, s)]; }
  double at(int i, int j, int s) const { return values_[flat_index(i, j, s)]; }

  int n_x1() const { return n_x1_; }
  int n_x2() const { return n_x2_; }
  int n_t() const { return static_cast<int>(times_.size()); }
  std::size_t size() const { return values_.size(); }

  const Domain& domain() const { return domain_; }
  double bin_size_x1() const { return bin_size_x1_; }
  double bin_size_x2() const { return bin_size_x2_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  std::size_t flat_index(int i, int j, int s) const;
  // Inverse of flat_index.
  void unflatten_index(std::size_t flat, int& i, int& j, int& s) const;

  // Bin geometry. The last bin along each axis absorbs the remainder when
  // the extent is not an exact multiple of the bin size.
  double bin_width_x1(int i) const;
  double bin_width_x2(int j) const;
  double center_x1(int i) const;
  double center_x2(int j) const;

  double max_value() const;

 private:
  Domain domain_;
  int n_x1_ = 0, n_x2_ = 0;
  double bin_size_x1_ = 0.0, bin_size_x2_ = 0.0;
  std::vector<double> times_;
  std::vector<double> values_;
};

// Nondimensionalization shared by training, ensembling and reporting.
// length: one scale for both spatial axes; time: the domain's t extent;
// density: the maximum observed density.
struct Scaling {
  double length = 1.0;   // mm
  double time = 1.0;     // days
  double density = 1.0;  // cells per bin

  double scale_density(double u) const { return u / density; }
  double unscale_density(double u) const { return u * density; }
  // Diffusivities carry L^2/T, per-capita growth rates 1/T.
  double scale_diffusion(double d) const { return d * time / (length * length); }
  double unscale_diffusion(double d) const { return d * length * length / time; }
  double scale_growth(double g) const { return g * time; }
  double unscale_growth(double g) const { return g / time; }
};

// Number of bins covering `extent` with nominal width `bin_size`; tolerant
// of the floating-point representation of exact multiples.
int bin_count(double extent, double bin_size);

// Bins a point cloud onto the domain. A record outside the domain or with a
// time missing from frame_times raises InputError listing the offenders.
// Shared bin edges belong to the higher-index bin; the domain's max edge
// belongs to the last bin.
DensityField bin_points(const PointCloud& points, const Domain& domain,
                        double bin_size);

// Total cell count of one frame: sum of the frame's bin values.
double total_count(const DensityField& field, int s);

// Scaling derived from a field: L = larger spatial extent, T = t extent,
// u_max = largest bin value. All-zero fields are rejected.
Scaling make_scaling(const DensityField& field);

}  // namespace rdbinn
