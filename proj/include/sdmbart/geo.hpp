#pragma once

// Gridded environmental layers, study-area polygons, z-score standardization
// and temporal averaging.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdmbart/error.hpp"

namespace sdm {

struct GridGeometry {
  std::size_t n_rows = 1;
  std::size_t n_cols = 1;
  double x_ll = 0.0;
  double y_ll = 0.0;
  double cell_size = 1.0;

  std::size_t cell_count() const { return n_rows * n_cols; }
  double y_top() const { return y_ll + static_cast<double>(n_rows) * cell_size; }
  double x_right() const { return x_ll + static_cast<double>(n_cols) * cell_size; }

  bool operator==(const GridGeometry&) const = default;

  void validate() const {
    if (n_rows < 1 || n_cols < 1) throw Error(ErrorKind::format, "grid must have at least one row and column");
    if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw Error(ErrorKind::format, "cell size must be positive");
    if (!std::isfinite(x_ll) || !std::isfinite(y_ll)) throw Error(ErrorKind::format, "grid origin must be finite");
  }
};

struct CellIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  bool operator==(const CellIndex&) const = default;
};

struct LonLat {
  double lon = 0.0;
  double lat = 0.0;
  bool operator==(const LonLat&) const = default;
};

/// The cell whose extent [x, x + cell) x (y - cell, y] holds the point, with
/// (x, y) the cell's top-left corner.
inline std::optional<CellIndex> cell_index(const GridGeometry& grid, double lon, double lat) {
  if (!std::isfinite(lon) || !std::isfinite(lat)) return std::nullopt;
  const double col = std::floor((lon - grid.x_ll) / grid.cell_size);
  const double row = std::floor((grid.y_top() - lat) / grid.cell_size);
  if (col < 0.0 || row < 0.0) return std::nullopt;
  if (col >= static_cast<double>(grid.n_cols) || row >= static_cast<double>(grid.n_rows)) return std::nullopt;
  return CellIndex{static_cast<std::size_t>(row), static_cast<std::size_t>(col)};
}

inline LonLat cell_center(const GridGeometry& grid, std::size_t row, std::size_t col) {
  return {grid.x_ll + (static_cast<double>(col) + 0.5) * grid.cell_size,
          grid.y_top() - (static_cast<double>(row) + 0.5) * grid.cell_size};
}

class RasterLayer {
 public:
  RasterLayer() : values_(1, 0.0), missing_(1, 0) {}

  explicit RasterLayer(GridGeometry grid, double fill = 0.0)
      : grid_(grid), values_(grid.cell_count(), fill), missing_(grid.cell_count(), 0) {
    grid_.validate();
  }

  RasterLayer(GridGeometry grid, std::vector<double> values, std::vector<std::uint8_t> missing)
      : grid_(grid), values_(std::move(values)), missing_(std::move(missing)) {
    grid_.validate();
    if (values_.size() != grid_.cell_count() || missing_.size() != grid_.cell_count()) {
      throw Error(ErrorKind::format, "raster value count does not match grid dimensions");
    }
  }

  static RasterLayer all_missing(GridGeometry grid) {
    RasterLayer layer(grid);
    std::fill(layer.missing_.begin(), layer.missing_.end(), 1);
    return layer;
  }

  const GridGeometry& grid() const { return grid_; }
  std::size_t n_rows() const { return grid_.n_rows; }
  std::size_t n_cols() const { return grid_.n_cols; }
  std::size_t size() const { return values_.size(); }

  std::size_t flat(std::size_t row, std::size_t col) const { return row * grid_.n_cols + col; }

  double value(std::size_t i) const { return values_[i]; }
  double value(std::size_t row, std::size_t col) const { return values_[flat(row, col)]; }
  bool missing(std::size_t i) const { return missing_[i] != 0; }
  bool missing(std::size_t row, std::size_t col) const { return missing(flat(row, col)); }

  void set(std::size_t i, double v) {
    values_[i] = v;
    missing_[i] = 0;
  }
  void set(std::size_t row, std::size_t col, double v) { set(flat(row, col), v); }
  void set_missing(std::size_t i) {
    values_[i] = 0.0;
    missing_[i] = 1;
  }
  void set_missing(std::size_t row, std::size_t col) { set_missing(flat(row, col)); }

  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> missing_mask() const { return missing_; }

  std::size_t count_present() const {
    return static_cast<std::size_t>(std::count(missing_.begin(), missing_.end(), std::uint8_t{0}));
  }

  /// Equality over meaningful content: geometry, mask, and values of present cells.
  friend bool operator==(const RasterLayer& a, const RasterLayer& b) {
    if (a.grid_ != b.grid_ || a.missing_ != b.missing_) return false;
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
      if (!a.missing_[i] && a.values_[i] != b.values_[i]) return false;
    }
    return true;
  }

 private:
  GridGeometry grid_;
  std::vector<double> values_;
  std::vector<std::uint8_t> missing_;
};

/// Grid-aligned layers keyed by variable name.
class RasterStack {
 public:
  RasterStack() = default;

  void add(const std::string& name, RasterLayer layer) {
    if (layers_.count(name)) throw Error(ErrorKind::schema, "duplicate variable '" + name + "'");
    if (!layers_.empty() && layers_.begin()->second.grid() != layer.grid()) {
      throw Error(ErrorKind::alignment, "variable '" + name + "' is not aligned with the stack grid");
    }
    layers_.emplace(name, std::move(layer));
  }

  bool empty() const { return layers_.empty(); }
  std::size_t size() const { return layers_.size(); }
  bool contains(const std::string& name) const { return layers_.count(name) != 0; }

  const RasterLayer& at(const std::string& name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw Error(ErrorKind::schema, "missing variable '" + name + "'");
    return it->second;
  }
  RasterLayer& at(const std::string& name) {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw Error(ErrorKind::schema, "missing variable '" + name + "'");
    return it->second;
  }

  const GridGeometry& grid() const {
    if (layers_.empty()) throw Error(ErrorKind::schema, "empty raster stack");
    return layers_.begin()->second.grid();
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, layer] : layers_) out.push_back(name);
    return out;
  }

  /// Sub-stack holding only the named variables.
  RasterStack select(const std::vector<std::string>& names) const {
    RasterStack out;
    for (const auto& n : names) out.add(n, at(n));
    return out;
  }

  /// True when some variable is missing at the flat cell index.
  bool any_missing(std::size_t cell) const {
    for (const auto& [name, layer] : layers_) {
      if (layer.missing(cell)) return true;
    }
    return false;
  }

  auto begin() const { return layers_.begin(); }
  auto end() const { return layers_.end(); }
  auto begin() { return layers_.begin(); }
  auto end() { return layers_.end(); }

  friend bool operator==(const RasterStack&, const RasterStack&) = default;

 private:
  std::map<std::string, RasterLayer> layers_;
};

using Timestamp = std::int64_t;

/// Stacks per time step, in increasing timestamp order.
class TimeSeriesStack {
 public:
  void add(Timestamp t, RasterStack stack) {
    if (steps_.count(t)) throw Error(ErrorKind::schema, "duplicate timestamp " + std::to_string(t));
    if (!steps_.empty()) {
      const auto& first = steps_.begin()->second;
      if (first.names() != stack.names()) {
        throw Error(ErrorKind::schema, "timestamp " + std::to_string(t) + " has a different variable set");
      }
      if (first.grid() != stack.grid()) {
        throw Error(ErrorKind::alignment, "timestamp " + std::to_string(t) + " is not grid-aligned");
      }
    }
    steps_.emplace(t, std::move(stack));
  }

  bool empty() const { return steps_.empty(); }
  std::size_t size() const { return steps_.size(); }
  bool contains(Timestamp t) const { return steps_.count(t) != 0; }
  const RasterStack& at(Timestamp t) const {
    auto it = steps_.find(t);
    if (it == steps_.end()) throw Error(ErrorKind::schema, "unknown timestamp " + std::to_string(t));
    return it->second;
  }
  std::vector<Timestamp> timestamps() const {
    std::vector<Timestamp> out;
    for (const auto& [t, s] : steps_) out.push_back(t);
    return out;
  }
  std::vector<std::string> variables() const {
    return steps_.empty() ? std::vector<std::string>{} : steps_.begin()->second.names();
  }

  auto begin() const { return steps_.begin(); }
  auto end() const { return steps_.end(); }

 private:
  std::map<Timestamp, RasterStack> steps_;
};

class ScenarioSet {
 public:
  void add(const std::string& name, TimeSeriesStack series) {
    if (scenarios_.count(name)) throw Error(ErrorKind::schema, "duplicate scenario '" + name + "'");
    if (!scenarios_.empty() && scenarios_.begin()->second.variables() != series.variables()) {
      throw Error(ErrorKind::schema, "scenario '" + name + "' has a different variable set");
    }
    scenarios_.emplace(name, std::move(series));
  }
  bool empty() const { return scenarios_.empty(); }
  std::size_t size() const { return scenarios_.size(); }
  const TimeSeriesStack& at(const std::string& name) const { return scenarios_.at(name); }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [n, s] : scenarios_) out.push_back(n);
    return out;
  }
  auto begin() const { return scenarios_.begin(); }
  auto end() const { return scenarios_.end(); }

 private:
  std::map<std::string, TimeSeriesStack> scenarios_;
};

// ---------------------------------------------------------------------------
// Study area

using Ring = std::vector<LonLat>;

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

struct StudyArea {
  std::vector<Polygon> polygons;

  void validate() const {
    if (polygons.empty()) throw Error(ErrorKind::format, "study area has no polygons");
    auto check = [](const Ring& ring) {
      if (ring.size() < 4) throw Error(ErrorKind::format, "polygon ring needs at least 4 vertices");
      if (!(ring.front() == ring.back())) throw Error(ErrorKind::format, "polygon ring is not closed");
      for (const auto& p : ring) {
        if (!(p.lon >= -180.0 && p.lon <= 180.0 && p.lat >= -90.0 && p.lat <= 90.0)) {
          throw Error(ErrorKind::format, "polygon vertex outside [-180,180]x[-90,90]");
        }
      }
    };
    for (const auto& poly : polygons) {
      check(poly.outer);
      for (const auto& h : poly.holes) check(h);
    }
  }
};

namespace detail {

inline bool on_segment(const LonLat& a, const LonLat& b, double lon, double lat) {
  const double cross = (b.lon - a.lon) * (lat - a.lat) - (b.lat - a.lat) * (lon - a.lon);
  const double scale = std::max({std::abs(b.lon - a.lon), std::abs(b.lat - a.lat), 1.0});
  if (std::abs(cross) > 1e-12 * scale * scale) return false;
  return lon >= std::min(a.lon, b.lon) && lon <= std::max(a.lon, b.lon) && lat >= std::min(a.lat, b.lat) &&
         lat <= std::max(a.lat, b.lat);
}

inline bool on_ring_boundary(const Ring& ring, double lon, double lat) {
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    if (on_segment(ring[i], ring[i + 1], lon, lat)) return true;
  }
  return false;
}

inline int ray_crossings(const Ring& ring, double lon, double lat) {
  int crossings = 0;
  for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
    const auto& a = ring[i];
    const auto& b = ring[j];
    if ((a.lat > lat) != (b.lat > lat)) {
      const double x = a.lon + (lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (lon < x) ++crossings;
    }
  }
  return crossings;
}

}  // namespace detail

/// Even-odd membership; points on any ring edge or vertex count as inside.
inline bool point_in_polygon(const StudyArea& area, double lon, double lat) {
  for (const auto& poly : area.polygons) {
    if (detail::on_ring_boundary(poly.outer, lon, lat)) return true;
    int crossings = detail::ray_crossings(poly.outer, lon, lat);
    for (const auto& hole : poly.holes) {
      if (detail::on_ring_boundary(hole, lon, lat)) return true;
      crossings += detail::ray_crossings(hole, lon, lat);
    }
    if (crossings % 2 == 1) return true;
  }
  return false;
}

namespace detail {

inline Ring ring_from_json(const nlohmann::json& coords) {
  Ring ring;
  for (const auto& p : coords) {
    if (!p.is_array() || p.size() < 2) throw Error(ErrorKind::format, "GeoJSON position must be [lon, lat]");
    ring.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ring;
}

inline Polygon polygon_from_json(const nlohmann::json& rings) {
  if (!rings.is_array() || rings.empty()) throw Error(ErrorKind::format, "GeoJSON polygon has no rings");
  Polygon poly;
  poly.outer = ring_from_json(rings[0]);
  for (std::size_t i = 1; i < rings.size(); ++i) poly.holes.push_back(ring_from_json(rings[i]));
  return poly;
}

inline void collect_geometry(const nlohmann::json& geom, StudyArea& area) {
  const auto type = geom.at("type").get<std::string>();
  if (type == "Polygon") {
    area.polygons.push_back(polygon_from_json(geom.at("coordinates")));
  } else if (type == "MultiPolygon") {
    for (const auto& rings : geom.at("coordinates")) area.polygons.push_back(polygon_from_json(rings));
  } else if (type == "Feature") {
    collect_geometry(geom.at("geometry"), area);
  } else if (type == "FeatureCollection") {
    for (const auto& f : geom.at("features")) collect_geometry(f, area);
  } else {
    throw Error(ErrorKind::format, "unsupported GeoJSON type '" + type + "'");
  }
}

}  // namespace detail

/// Accepts a Polygon or MultiPolygon geometry (bare, or wrapped in a Feature
/// or FeatureCollection).
inline StudyArea study_area_from_geojson(const nlohmann::json& doc) {
  StudyArea area;
  try {
    detail::collect_geometry(doc, area);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("invalid GeoJSON: ") + e.what());
  }
  area.validate();
  return area;
}

inline StudyArea load_study_area(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open study area '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, "'" + path + "': " + e.what());
  }
  return study_area_from_geojson(doc);
}

struct CropResult {
  RasterStack stack;
  bool disjoint = false;  // polygon covered no cell center
};

/// Marks cells whose centers fall outside the area as missing; the grid extent
/// is unchanged.
inline CropResult crop_mask(const RasterStack& stack, const StudyArea& area) {
  CropResult result{stack, false};
  if (stack.empty()) return result;
  const auto& grid = stack.grid();
  std::vector<std::uint8_t> inside(grid.cell_count(), 0);
  bool any_inside = false;
  for (std::size_t r = 0; r < grid.n_rows; ++r) {
    for (std::size_t c = 0; c < grid.n_cols; ++c) {
      const auto p = cell_center(grid, r, c);
      if (point_in_polygon(area, p.lon, p.lat)) {
        inside[r * grid.n_cols + c] = 1;
        any_inside = true;
      }
    }
  }
  for (auto& [name, layer] : result.stack) {
    for (std::size_t i = 0; i < layer.size(); ++i) {
      if (!inside[i]) layer.set_missing(i);
    }
  }
  result.disjoint = !any_inside;
  return result;
}

inline TimeSeriesStack crop_mask(const TimeSeriesStack& series, const StudyArea& area) {
  TimeSeriesStack out;
  for (const auto& [t, stack] : series) out.add(t, crop_mask(stack, area).stack);
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

struct Moments {
  double mean = 0.0;
  double sd = 1.0;
  bool operator==(const Moments&) const = default;
};

/// Mean and sample (n-1) standard deviation. Values are summed in sorted order
/// so the result does not depend on input order.
inline Moments sample_moments(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - mean) * (values[i] - mean);
  std::sort(sq.begin(), sq.end());
  double ss = 0.0;
  for (double v : sq) ss += v;
  return {mean, std::sqrt(ss / (n - 1.0))};
}

struct StandardizationParams {
  std::map<std::string, Moments> variables;

  bool contains(const std::string& name) const { return variables.count(name) != 0; }

  double apply(const std::string& name, double value) const {
    auto it = variables.find(name);
    if (it == variables.end()) return value;
    return (value - it->second.mean) / it->second.sd;
  }

  bool operator==(const StandardizationParams&) const = default;
};

inline Moments checked_moments(const std::string& name, std::vector<double> values) {
  if (values.size() < 2) {
    throw Error(ErrorKind::degenerate_variable, "variable '" + name + "' has fewer than 2 observed values");
  }
  const Moments m = sample_moments(std::move(values));
  if (!(m.sd > 0.0) || !std::isfinite(m.sd)) {
    throw Error(ErrorKind::degenerate_variable, "variable '" + name + "' has zero variance");
  }
  return m;
}

inline RasterLayer apply_moments(const RasterLayer& layer, const Moments& m) {
  RasterLayer out = layer;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out.missing(i)) out.set(i, (layer.value(i) - m.mean) / m.sd);
  }
  return out;
}

/// Per-variable z-scores over the non-missing cells.
inline std::pair<RasterStack, StandardizationParams> zscore_standardize(const RasterStack& stack) {
  StandardizationParams params;
  RasterStack out;
  for (const auto& [name, layer] : stack) {
    std::vector<double> present;
    for (std::size_t i = 0; i < layer.size(); ++i) {
      if (!layer.missing(i)) present.push_back(layer.value(i));
    }
    const Moments m = checked_moments(name, std::move(present));
    params.variables[name] = m;
    out.add(name, apply_moments(layer, m));
  }
  return {std::move(out), std::move(params)};
}

/// Applies previously estimated parameters; variables without parameters pass through.
inline RasterStack apply_standardization(const RasterStack& stack, const StandardizationParams& params) {
  RasterStack out;
  for (const auto& [name, layer] : stack) {
    auto it = params.variables.find(name);
    out.add(name, it == params.variables.end() ? layer : apply_moments(layer, it->second));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Temporal aggregation

/// Cell-wise mean across time steps; a cell missing at any step is missing.
inline RasterStack average_stack(const TimeSeriesStack& series) {
  if (series.empty()) throw Error(ErrorKind::parameter, "cannot average an empty time series");
  const auto n_steps = static_cast<double>(series.size());
  RasterStack out;
  for (const auto& name : series.variables()) {
    const auto& grid = series.begin()->second.grid();
    RasterLayer layer(grid);
    for (std::size_t i = 0; i < grid.cell_count(); ++i) {
      double sum = 0.0;
      bool missing = false;
      for (const auto& [t, stack] : series) {
        const auto& src = stack.at(name);
        if (src.missing(i)) {
          missing = true;
          break;
        }
        sum += src.value(i);
      }
      if (missing) layer.set_missing(i);
      else layer.set(i, sum / n_steps);
    }
    out.add(name, std::move(layer));
  }
  return out;
}

}  // namespace sdm
