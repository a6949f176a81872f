#pragma once
// Output helpers: CSV with 17 significant digits, raw float64 dumps with a
// JSON sidecar.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scglue/errors.hpp"
#include "scglue/grid.hpp"

namespace scglue {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvWriter& row(const std::vector<std::string>& cells) {
    if (cells.size() != header_.size()) throw Error("csv: row width does not match header");
    rows_.push_back(cells);
    return *this;
  }
  CsvWriter& row(const std::vector<double>& cells) {
    std::vector<std::string> s;
    for (double v : cells) s.push_back(format_double(v));
    return row(s);
  }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << str();
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

/// Raw little-endian float64 values, node-major, plus `<path>.json` describing the layout.
template <class Tag>
void write_raw(const std::filesystem::path& path, const Field<Tag>& field, const std::string& name) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  const auto& v = field.values();
  f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  const Grid& g = field.g();
  std::vector<std::size_t> strides;
  for (int a = 0; a < g.dim(); ++a) strides.push_back(g.stride(a));
  nlohmann::json side{{"name", name},
                      {"dtype", "float64"},
                      {"byte_order", "little"},
                      {"dim", g.dim()},
                      {"stored_per_axis", g.nodes_per_axis()},
                      {"first_coordinate", g.coord(0, 0)},
                      {"spacing", g.spacing()},
                      {"strides", strides},
                      {"components", field.components()},
                      {"layout", "values[node * components + c], node = sum_a index_a * strides[a]"}};
  write_json(path.string() + ".json", side);
}

}  // namespace scglue
