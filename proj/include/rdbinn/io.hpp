#pragma once
#include <filesystem>
#include <string>
#include <vector>

#include "rdbinn/grid.hpp"

namespace rdbinn::io {

// Shortest round-trip decimal representation; locale-free and deterministic.
std::string fmt(double v);

double parse_double(const std::string& s, const std::string& context);

// Writes to <path>.tmp and renames, so interrupted runs never leave a
// partially written file at the target path.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// File content as lines, CR-stripped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Comma-separated fields of one line (no quoting; none of our formats needs it).
std::vector<std::string> split_csv_line(const std::string& line);

// Point cloud CSV: header "x1,x2,t", one record per row.
void write_points_csv(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_points_csv(const std::filesystem::path& path);

// Density CSV: header "i,j,s,value" plus a <stem>.meta.json sidecar holding
// domain, bin sizes and times.
void write_density_csv(const DensityField& field, const std::filesystem::path& path);
DensityField read_density_csv(const std::filesystem::path& path);

std::filesystem::path density_meta_path(const std::filesystem::path& csv_path);

}  // namespace rdbinn::io
