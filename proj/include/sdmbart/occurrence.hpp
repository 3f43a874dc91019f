#pragma once

// Occurrence ingestion and preparation: clean -> thin -> pseudo-absences ->
// model matrix.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "sdmbart/error.hpp"
#include "sdmbart/geo.hpp"
#include "sdmbart/numeric_text.hpp"
#include "sdmbart/random.hpp"

namespace sdm {

struct OccurrenceRecord {
  double lon = std::numeric_limits<double>::quiet_NaN();
  double lat = std::numeric_limits<double>::quiet_NaN();
  std::optional<Timestamp> timestamp;
  std::optional<int> label;  // absent for presence-only data
  std::size_t id = 0;        // row position in the source file
  bool pseudo = false;       // generated pseudo-absence

  bool is_presence() const { return !label || *label == 1; }
  auto key() const { return std::tuple(lon, lat, timestamp, label); }
};

// ---------------------------------------------------------------------------
// Occurrence files

namespace detail {

inline std::vector<std::string> split_delimited(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == delim && !quoted) {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ')) f.erase(f.begin());
    while (!f.empty() && (f.back() == ' ')) f.pop_back();
  }
  return out;
}

}  // namespace detail

struct OccurrenceColumns {
  static constexpr const char* lon = "decimalLongitude";
  static constexpr const char* lat = "decimalLatitude";
  static constexpr const char* timestamp = "timestamp";
  static constexpr const char* label = "pa";
};

/// Reads a tab- or comma-delimited occurrence table (delimiter taken from the
/// header line). Unparseable coordinates become NaN and are removed later by
/// cleaning; malformed timestamp or pa values are format errors.
inline std::vector<OccurrenceRecord> read_occurrences(std::istream& in, const std::string& source = "<stream>") {
  std::string header_line;
  if (!std::getline(in, header_line)) throw Error(ErrorKind::format, source + ": missing header row");
  if (header_line.size() >= 3 && header_line.compare(0, 3, "\xEF\xBB\xBF") == 0) header_line.erase(0, 3);
  const char delim = header_line.find('\t') != std::string::npos ? '\t' : ',';
  const auto header = detail::split_delimited(header_line, delim);
  auto find_column = [&](const char* name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto lon_col = find_column(OccurrenceColumns::lon);
  const auto lat_col = find_column(OccurrenceColumns::lat);
  if (!lon_col) throw Error(ErrorKind::format, source + ": missing column " + OccurrenceColumns::lon);
  if (!lat_col) throw Error(ErrorKind::format, source + ": missing column " + OccurrenceColumns::lat);
  const auto time_col = find_column(OccurrenceColumns::timestamp);
  const auto label_col = find_column(OccurrenceColumns::label);

  std::vector<OccurrenceRecord> records;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_delimited(line, delim);
    auto field = [&](std::size_t col) -> std::string { return col < fields.size() ? fields[col] : std::string(); };
    OccurrenceRecord rec;
    rec.id = records.size();
    if (auto v = parse_double(field(*lon_col))) rec.lon = *v;
    if (auto v = parse_double(field(*lat_col))) rec.lat = *v;
    if (time_col) {
      const auto text = field(*time_col);
      if (!text.empty() && text != "NA") {
        auto t = parse_integer<Timestamp>(text);
        if (!t) throw Error(ErrorKind::format, source + ":" + std::to_string(line_no) + ": invalid timestamp '" + text + "'");
        rec.timestamp = *t;
      }
    }
    if (label_col) {
      const auto text = field(*label_col);
      auto pa = parse_integer<int>(text);
      if (!pa || (*pa != 0 && *pa != 1)) {
        throw Error(ErrorKind::format, source + ":" + std::to_string(line_no) + ": pa must be 0 or 1, got '" + text + "'");
      }
      rec.label = *pa;
    }
    records.push_back(rec);
  }
  return records;
}

inline std::vector<OccurrenceRecord> read_occurrences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open occurrence file '" + path.string() + "'");
  return read_occurrences(in, path.string());
}

// ---------------------------------------------------------------------------
// Environment lookup by record timestamp

/// Resolves the covariate stack that applies to a record. A single stack
/// applies to every record; a time series maps timestamped records to their
/// step and undated records to the across-step average.
class Environment {
 public:
  explicit Environment(RasterStack single) : average_(std::move(single)), single_(true) {}
  explicit Environment(TimeSeriesStack series) : series_(std::move(series)), average_(average_stack(series_)) {}

  /// nullptr when the record's timestamp has no matching step.
  const RasterStack* stack_for(const std::optional<Timestamp>& t) const {
    if (single_ || !t) return &average_;
    if (!series_.contains(*t)) return nullptr;
    return &series_.at(*t);
  }

  const GridGeometry& grid() const { return average_.grid(); }
  std::vector<std::string> variables() const { return average_.names(); }
  const RasterStack& average() const { return average_; }
  const TimeSeriesStack& series() const { return series_; }
  bool is_single() const { return single_; }

  Environment select(const std::vector<std::string>& names) const {
    if (single_) return Environment(average_.select(names));
    TimeSeriesStack s;
    for (const auto& [t, stack] : series_) s.add(t, stack.select(names));
    return Environment(std::move(s));
  }

  Environment masked(const StudyArea& area) const {
    if (single_) return Environment(crop_mask(average_, area).stack);
    return Environment(crop_mask(series_, area));
  }

 private:
  TimeSeriesStack series_;
  RasterStack average_;
  bool single_ = false;
};

// ---------------------------------------------------------------------------
// Cleaning

struct CleaningReport {
  std::size_t input = 0;
  std::size_t duplicate = 0;
  std::size_t missing_coordinate = 0;
  std::size_t outside_polygon = 0;
  std::size_t missing_environment = 0;
  std::size_t unmatched_timestamp = 0;
  std::size_t retained = 0;

  std::size_t removed() const {
    return duplicate + missing_coordinate + outside_polygon + missing_environment + unmatched_timestamp;
  }
};

struct CleanResult {
  std::vector<OccurrenceRecord> records;
  CleaningReport report;
};

/// Removal order: missing/out-of-range coordinate, exact duplicate, outside
/// the study area, unmatched timestamp, missing environment (any variable
/// missing, or the point is off the grid).
inline CleanResult clean_occurrences(const std::vector<OccurrenceRecord>& records, const Environment& env,
                                     const StudyArea* area = nullptr) {
  CleanResult out;
  out.report.input = records.size();
  std::set<std::tuple<double, double, std::optional<Timestamp>, std::optional<int>>> seen;
  for (const auto& rec : records) {
    if (!std::isfinite(rec.lon) || !std::isfinite(rec.lat) || rec.lon < -180.0 || rec.lon > 180.0 ||
        rec.lat < -90.0 || rec.lat > 90.0) {
      ++out.report.missing_coordinate;
      continue;
    }
    if (!seen.insert(rec.key()).second) {
      ++out.report.duplicate;
      continue;
    }
    if (area && !point_in_polygon(*area, rec.lon, rec.lat)) {
      ++out.report.outside_polygon;
      continue;
    }
    const RasterStack* stack = env.stack_for(rec.timestamp);
    if (!stack) {
      ++out.report.unmatched_timestamp;
      continue;
    }
    const auto cell = cell_index(stack->grid(), rec.lon, rec.lat);
    if (!cell || stack->any_missing(cell->row * stack->grid().n_cols + cell->col)) {
      ++out.report.missing_environment;
      continue;
    }
    out.records.push_back(rec);
  }
  out.report.retained = out.records.size();
  if (out.records.empty()) throw Error(ErrorKind::empty_data, "no occurrence records remain after cleaning");
  return out;
}

// ---------------------------------------------------------------------------
// Thinning

/// Keeps one uniformly chosen record per (rounded lon, rounded lat, timestamp)
/// bin. Output keeps the original relative order.
inline std::vector<OccurrenceRecord> thin_occurrences(const std::vector<OccurrenceRecord>& records, int decimals,
                                                      std::uint64_t seed) {
  if (decimals < 0) throw Error(ErrorKind::parameter, "thinning decimals must be >= 0");
  using Key = std::tuple<std::int64_t, std::int64_t, std::optional<Timestamp>>;
  auto bin = [&](double v) -> std::int64_t {
    if (decimals > 15) return std::bit_cast<std::int64_t>(v);
    return std::llround(v * std::pow(10.0, decimals));
  };
  std::map<Key, std::vector<std::size_t>> groups;
  std::vector<Key> order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    Key key{bin(records[i].lon), bin(records[i].lat), records[i].timestamp};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> keep;
  keep.reserve(order.size());
  for (const auto& key : order) {
    const auto& members = groups[key];
    keep.push_back(members[members.size() == 1 ? 0 : rng.below(members.size())]);
  }
  std::sort(keep.begin(), keep.end());
  std::vector<OccurrenceRecord> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(records[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Pseudo-absences

struct ValidCells {
  GridGeometry grid;
  std::vector<std::size_t> cells;  // flat indices, ascending
};

/// Key nullopt holds the mask for undated records.
using ValidMask = std::map<std::optional<Timestamp>, ValidCells>;

inline ValidCells valid_cells(const RasterStack& stack) {
  ValidCells out{stack.grid(), {}};
  for (std::size_t i = 0; i < out.grid.cell_count(); ++i) {
    if (!stack.any_missing(i)) out.cells.push_back(i);
  }
  return out;
}

/// Valid-cell masks for every timestamp that occurs in the records.
inline ValidMask valid_mask_for(const std::vector<OccurrenceRecord>& records, const Environment& env) {
  ValidMask mask;
  for (const auto& rec : records) {
    if (mask.count(rec.timestamp)) continue;
    const RasterStack* stack = env.stack_for(rec.timestamp);
    if (!stack) {
      throw Error(ErrorKind::schema, "no environment for timestamp " + std::to_string(rec.timestamp.value_or(0)));
    }
    mask.emplace(rec.timestamp, valid_cells(*stack));
  }
  return mask;
}

/// Per timestamp, as many absences as presences, at distinct valid cell
/// centers not occupied by a presence.
inline std::vector<OccurrenceRecord> generate_pseudo_absences(const std::vector<OccurrenceRecord>& presences,
                                                              const ValidMask& valid_mask, std::uint64_t seed) {
  std::map<std::optional<Timestamp>, std::vector<const OccurrenceRecord*>> by_time;
  for (const auto& rec : presences) {
    if (!rec.is_presence()) throw Error(ErrorKind::parameter, "pseudo-absences require presence-only input");
    by_time[rec.timestamp].push_back(&rec);
  }
  std::vector<OccurrenceRecord> out;
  std::size_t next_id = 0;
  for (const auto& rec : presences) next_id = std::max(next_id, rec.id + 1);

  for (const auto& [t, recs] : by_time) {
    const auto it = valid_mask.find(t);
    const std::string t_name = t ? std::to_string(*t) : std::string("<undated>");
    if (it == valid_mask.end()) throw Error(ErrorKind::infeasible_sampling, "no valid cells for timestamp " + t_name);
    const auto& mask = it->second;
    std::set<std::size_t> occupied;
    for (const auto* rec : recs) {
      if (auto cell = cell_index(mask.grid, rec->lon, rec->lat)) occupied.insert(cell->row * mask.grid.n_cols + cell->col);
    }
    std::vector<std::size_t> candidates;
    for (auto c : mask.cells) {
      if (!occupied.count(c)) candidates.push_back(c);
    }
    if (candidates.size() < recs.size()) {
      throw Error(ErrorKind::infeasible_sampling,
                  "timestamp " + t_name + " has " + std::to_string(candidates.size()) + " free valid cells for " +
                      std::to_string(recs.size()) + " presences");
    }
    // One stream per timestamp keeps timestamps independent of each other.
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t.value_or(std::numeric_limits<Timestamp>::min()))));
    for (std::size_t k = 0; k < recs.size(); ++k) {
      const auto j = k + rng.below(candidates.size() - k);
      std::swap(candidates[k], candidates[j]);
      const auto cell = candidates[k];
      const auto center = cell_center(mask.grid, cell / mask.grid.n_cols, cell % mask.grid.n_cols);
      OccurrenceRecord a;
      a.lon = center.lon;
      a.lat = center.lat;
      a.timestamp = t;
      a.label = 0;
      a.pseudo = true;
      a.id = next_id++;
      out.push_back(a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model matrix

enum class RowSource { presence, absence, pseudo_absence };

inline std::string_view to_string(RowSource s) {
  switch (s) {
    case RowSource::presence: return "presence";
    case RowSource::absence: return "absence";
    case RowSource::pseudo_absence: return "pseudo_absence";
  }
  return "presence";
}

inline std::optional<RowSource> row_source_from_string(std::string_view s) {
  if (s == "presence") return RowSource::presence;
  if (s == "absence") return RowSource::absence;
  if (s == "pseudo_absence") return RowSource::pseudo_absence;
  return std::nullopt;
}

struct RowProvenance {
  std::size_t record_id = 0;
  double lon = 0.0;
  double lat = 0.0;
  std::optional<Timestamp> timestamp;
  RowSource source = RowSource::presence;
  bool operator==(const RowProvenance&) const = default;
};

inline constexpr const char* kLonColumn = "lon";
inline constexpr const char* kLatColumn = "lat";

/// Row-major covariate table plus binary response. `values` are on the model
/// scale (standardized where parameters exist); `raw_values` keep the
/// original scale.
struct ModelMatrix {
  std::vector<std::string> columns;
  std::vector<double> values;
  std::vector<double> raw_values;
  std::vector<int> response;
  std::vector<RowProvenance> provenance;
  StandardizationParams standardization;
  std::size_t dropped_missing = 0;

  std::size_t n_rows() const { return response.size(); }
  std::size_t n_cols() const { return columns.size(); }
  double value(std::size_t i, std::size_t j) const { return values[i * n_cols() + j]; }
  double raw(std::size_t i, std::size_t j) const { return raw_values[i * n_cols() + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * n_cols(), n_cols()}; }

  std::optional<std::size_t> column_index(const std::string& name) const {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      if (columns[j] == name) return j;
    }
    return std::nullopt;
  }

  bool has_coordinates() const { return column_index(kLonColumn) && column_index(kLatColumn); }

  std::size_t count_class(int y) const { return static_cast<std::size_t>(std::count(response.begin(), response.end(), y)); }

  void validate() const {
    std::set<std::string> unique(columns.begin(), columns.end());
    if (unique.size() != columns.size()) throw Error(ErrorKind::schema, "duplicate covariate names");
    if (values.size() != n_rows() * n_cols() || raw_values.size() != values.size() ||
        provenance.size() != n_rows()) {
      throw Error(ErrorKind::schema, "model matrix dimensions are inconsistent");
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw Error(ErrorKind::validation, "non-finite covariate value");
    }
    for (int y : response) {
      if (y != 0 && y != 1) throw Error(ErrorKind::validation, "response must be 0/1");
    }
    if (count_class(1) == 0 || count_class(0) == 0) {
      throw Error(ErrorKind::class_imbalance, "model matrix needs both presences and absences");
    }
  }

  /// Rows in the given order; standardization is carried over unchanged.
  ModelMatrix subset(std::span<const std::size_t> rows) const {
    ModelMatrix out;
    out.columns = columns;
    out.standardization = standardization;
    const auto p = n_cols();
    for (auto i : rows) {
      out.values.insert(out.values.end(), values.begin() + i * p, values.begin() + (i + 1) * p);
      out.raw_values.insert(out.raw_values.end(), raw_values.begin() + i * p, raw_values.begin() + (i + 1) * p);
      out.response.push_back(response[i]);
      out.provenance.push_back(provenance[i]);
    }
    return out;
  }

  /// Data equality; `dropped_missing` is assembly bookkeeping and not compared.
  friend bool operator==(const ModelMatrix& a, const ModelMatrix& b) {
    return a.columns == b.columns && a.values == b.values && a.raw_values == b.raw_values &&
           a.response == b.response && a.provenance == b.provenance && a.standardization == b.standardization;
  }
};

/// Reads each record's covariates from its cell at its timestamp. Coordinate
/// columns (lon, lat) are appended when requested and never standardized.
inline ModelMatrix build_model_matrix(const std::vector<OccurrenceRecord>& records, const Environment& env,
                                      const std::vector<std::string>& predictors, bool include_coords,
                                      bool standardize) {
  const std::vector<std::string> vars = predictors.empty() ? env.variables() : predictors;
  for (const auto& v : vars) {
    if (!env.average().contains(v)) throw Error(ErrorKind::schema, "unknown predictor '" + v + "'");
  }
  ModelMatrix m;
  m.columns = vars;
  if (include_coords) {
    m.columns.push_back(kLonColumn);
    m.columns.push_back(kLatColumn);
  }
  for (const auto& rec : records) {
    const RasterStack* stack = env.stack_for(rec.timestamp);
    const auto cell = stack ? cell_index(stack->grid(), rec.lon, rec.lat) : std::nullopt;
    if (!cell) {
      ++m.dropped_missing;
      continue;
    }
    std::vector<double> row;
    bool missing = false;
    for (const auto& v : vars) {
      const auto& layer = stack->at(v);
      if (layer.missing(cell->row, cell->col)) {
        missing = true;
        break;
      }
      row.push_back(layer.value(cell->row, cell->col));
    }
    if (missing) {
      ++m.dropped_missing;
      continue;
    }
    if (include_coords) {
      row.push_back(rec.lon);
      row.push_back(rec.lat);
    }
    m.raw_values.insert(m.raw_values.end(), row.begin(), row.end());
    m.response.push_back(rec.is_presence() ? 1 : 0);
    m.provenance.push_back({rec.id, rec.lon, rec.lat, rec.timestamp,
                            rec.is_presence() ? RowSource::presence
                                              : (rec.pseudo ? RowSource::pseudo_absence : RowSource::absence)});
  }
  m.values = m.raw_values;
  if (standardize) {
    const auto p = m.n_cols();
    for (std::size_t j = 0; j < vars.size(); ++j) {
      std::vector<double> col;
      for (std::size_t i = 0; i < m.n_rows(); ++i) col.push_back(m.raw_values[i * p + j]);
      m.standardization.variables[vars[j]] = checked_moments(vars[j], std::move(col));
    }
    for (std::size_t i = 0; i < m.n_rows(); ++i) {
      for (std::size_t j = 0; j < vars.size(); ++j) {
        m.values[i * p + j] = m.standardization.apply(vars[j], m.raw_values[i * p + j]);
      }
    }
  }
  if (m.count_class(1) == 0 || m.count_class(0) == 0) {
    throw Error(ErrorKind::class_imbalance, "response has a single class after assembly");
  }
  return m;
}

}  // namespace sdm
