#include "rdbinn/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <system_error>

#include <json.hpp>

#include "rdbinn/errors.hpp"

namespace rdbinn::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw InputError("bad numeric value '" + s + "' in " + context);
  return v;
}

void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out.flush()) throw InputError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream oss;
  oss << in.rdbuf();
  return oss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_points_csv(const PointCloud& cloud, const fs::path& path) {
  std::ostringstream oss;
  oss << "x1,x2,t\n";
  for (const auto& r : cloud.records)
    oss << fmt(r.x1) << ',' << fmt(r.x2) << ',' << fmt(r.t) << '\n';
  atomic_write(path, oss.str());
}

PointCloud read_points_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || split_csv_line(lines[0]) != std::vector<std::string>{"x1", "x2", "t"})
    throw InputError(path.string() + ": expected header 'x1,x2,t'");
  std::vector<PointRecord> records;
  records.reserve(lines.size() - 1);
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto cols = split_csv_line(lines[n]);
    if (cols.size() != 3)
      throw InputError(path.string() + ": line " + std::to_string(n + 1) +
                       " has " + std::to_string(cols.size()) + " columns, want 3");
    const std::string ctx = path.string() + ":" + std::to_string(n + 1);
    records.push_back({parse_double(cols[0], ctx), parse_double(cols[1], ctx),
                       parse_double(cols[2], ctx)});
  }
  return PointCloud::from_records(std::move(records));
}

fs::path density_meta_path(const fs::path& csv_path) {
  fs::path p = csv_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_density_csv(const DensityField& field, const fs::path& path) {
  std::ostringstream oss;
  oss << "i,j,s,value\n";
  for (int i = 0; i < field.n_x1(); ++i)
    for (int j = 0; j < field.n_x2(); ++j)
      for (int s = 0; s < field.n_t(); ++s)
        oss << i << ',' << j << ',' << s << ',' << fmt(field.at(i, j, s)) << '\n';
  atomic_write(path, oss.str());

  json meta;
  meta["domain"] = {{"x1_min", field.domain().x1_min}, {"x1_max", field.domain().x1_max},
                    {"x2_min", field.domain().x2_min}, {"x2_max", field.domain().x2_max},
                    {"t_min", field.domain().t_min},   {"t_max", field.domain().t_max}};
  meta["bin_size_x1"] = field.bin_size_x1();
  meta["bin_size_x2"] = field.bin_size_x2();
  meta["n_x1"] = field.n_x1();
  meta["n_x2"] = field.n_x2();
  meta["times"] = field.times();
  meta["units"] = "cells per bin";
  atomic_write(density_meta_path(path), meta.dump(2) + "\n");
}

DensityField read_density_csv(const fs::path& path) {
  const fs::path meta_path = density_meta_path(path);
  json meta;
  try {
    meta = json::parse(read_file(meta_path));
  } catch (const json::exception& e) {
    throw InputError(meta_path.string() + ": " + e.what());
  }

  Domain domain;
  try {
    const auto& d = meta.at("domain");
    domain = {d.at("x1_min").get<double>(), d.at("x1_max").get<double>(),
              d.at("x2_min").get<double>(), d.at("x2_max").get<double>(),
              d.at("t_min").get<double>(),  d.at("t_max").get<double>()};
    DensityField field(domain, meta.at("n_x1").get<int>(), meta.at("n_x2").get<int>(),
                       meta.at("bin_size_x1").get<double>(),
                       meta.at("bin_size_x2").get<double>(),
                       meta.at("times").get<std::vector<double>>());

    const auto lines = read_lines(path);
    if (lines.empty() ||
        split_csv_line(lines[0]) != std::vector<std::string>{"i", "j", "s", "value"})
      throw InputError(path.string() + ": expected header 'i,j,s,value'");
    for (std::size_t n = 1; n < lines.size(); ++n) {
      if (lines[n].empty()) continue;
      const auto cols = split_csv_line(lines[n]);
      if (cols.size() != 4)
        throw InputError(path.string() + ": line " + std::to_string(n + 1) +
                         " has " + std::to_string(cols.size()) + " columns, want 4");
      const std::string ctx = path.string() + ":" + std::to_string(n + 1);
      const int i = static_cast<int>(parse_double(cols[0], ctx));
      const int j = static_cast<int>(parse_double(cols[1], ctx));
      const int s = static_cast<int>(parse_double(cols[2], ctx));
      field.at(i, j, s) = parse_double(cols[3], ctx);
    }
    return field;
  } catch (const json::exception& e) {
    throw InputError(meta_path.string() + ": " + e.what());
  }
}

}  // namespace rdbinn::io
