#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "sdmbart/geo.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/random.hpp"

namespace testutil {

inline sdm::GridGeometry grid(std::size_t rows, std::size_t cols, double x_ll = 0.0, double y_ll = 0.0,
                              double cell = 1.0) {
  return {rows, cols, x_ll, y_ll, cell};
}

inline sdm::RasterLayer layer_from(const sdm::GridGeometry& g, const std::vector<double>& values) {
  return sdm::RasterLayer(g, values, std::vector<std::uint8_t>(values.size(), 0));
}

/// Layer with value f(row, col).
template <typename F>
sdm::RasterLayer layer_fn(const sdm::GridGeometry& g, F f) {
  sdm::RasterLayer l(g);
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    for (std::size_t c = 0; c < g.n_cols; ++c) l.set(r, c, f(r, c));
  }
  return l;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sdmbart_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

/// Two-covariate matrix where presence depends on x0 only.
inline sdm::ModelMatrix synthetic_matrix(std::size_t n, std::uint64_t seed, double separation = 2.0) {
  sdm::Rng rng(seed);
  sdm::ModelMatrix m;
  m.columns = {"x0", "x1"};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i % 2 == 0 ? 1 : 0;
    const double x0 = rng.normal() + (y == 1 ? separation : 0.0);
    const double x1 = rng.normal();
    m.values.insert(m.values.end(), {x0, x1});
    m.response.push_back(y);
    m.provenance.push_back({i, 0.0, 0.0, std::nullopt, y ? sdm::RowSource::presence : sdm::RowSource::absence});
  }
  m.raw_values = m.values;
  return m;
}

inline std::filesystem::path toy_dir() { return std::filesystem::path(SDMBART_FIXTURES) / "toy"; }

/// Toy fixture config as JSON with every path made absolute.
inline nlohmann::json toy_config_json() {
  std::ifstream in(toy_dir() / "config.json");
  auto doc = nlohmann::json::parse(in);
  const auto abs = [](nlohmann::json& v) { v = (toy_dir() / v.get<std::string>()).string(); };
  for (auto& [var, path] : doc["fit_layers"].items()) abs(path);
  for (auto& [scenario, steps] : doc["projection_layers"].items()) {
    for (auto& [t, vars] : steps.items()) {
      for (auto& [var, path] : vars.items()) abs(path);
    }
  }
  for (auto& sp : doc["species"]) abs(sp["file"]);
  return doc;
}

}  // namespace testutil
