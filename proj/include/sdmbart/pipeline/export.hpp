#pragma once

// On-disk results: ASCII-grid rasters, CSV tables, model artifacts and a
// manifest with SHA-256 content hashes (written last).
//
// Layout under the output directory:
//   rasters/<species>_<variant>_<scenario>_<timestamp>_<summary>.asc
//   rasters/<species>_<variant>_fit_average_<summary>.asc
//   tables/<species>[_<variant>]_<table>.csv, tables/failures.csv
//   models/<species>_<variant>.model
//   manifest.json

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "sdmbart/ascii_grid.hpp"
#include "sdmbart/bart/model_io.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/numeric_text.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/pipeline/pipeline.hpp"

namespace sdm::pipeline {

// ---------------------------------------------------------------------------
// CSV

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw Error(ErrorKind::parameter, "CSV row width differs from header");
    rows_.push_back(std::move(row));
  }

  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    write_row(out, header_);
    for (const auto& r : rows_) write_row(out, r);
    return out;
  }

 private:
  static void write_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      const auto& f = row[i];
      if (f.find_first_of(",\"\n\r") == std::string::npos) {
        out += f;
      } else {
        out += '"';
        for (char c : f) {
          if (c == '"') out += '"';
          out += c;
        }
        out += '"';
      }
    }
    out += '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Parses CSV produced by CsvTable (RFC 4180 quoting).
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c != '\r') {
      field += c;
      any = true;
    }
  }
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string num(double v) { return format_double(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }
inline std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io, "SHA-256 computation failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string path;  // relative, forward slashes
  std::string family;
  std::map<std::string, std::string> keys;  // species, variant, scenario, timestamp, summary
  std::size_t bytes = 0;
  std::optional<std::string> sha256;  // volatile files carry neither hash nor size
};

struct Manifest {
  std::vector<ManifestEntry> files;  // sorted by path

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& f : files) {
      nlohmann::json j{{"path", f.path}, {"family", f.family}};
      for (const auto& [k, v] : f.keys) j[k] = v;
      if (f.sha256) {
        j["bytes"] = f.bytes;
        j["sha256"] = *f.sha256;
      } else {
        j["volatile"] = true;
      }
      arr.push_back(std::move(j));
    }
    return {{"format", "sdmbart-results"}, {"version", 1}, {"files", std::move(arr)}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    for (const auto& f : j.at("files")) {
      ManifestEntry e;
      e.path = f.at("path").get<std::string>();
      e.family = f.at("family").get<std::string>();
      e.bytes = f.value("bytes", std::size_t{0});
      if (f.contains("sha256")) e.sha256 = f.at("sha256").get<std::string>();
      for (const char* k : {"species", "variant", "scenario", "timestamp", "summary"}) {
        if (f.contains(k)) e.keys[k] = f.at(k).get<std::string>();
      }
      m.files.push_back(std::move(e));
    }
    return m;
  }
};

inline Manifest load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::io, "no manifest in '" + dir.string() + "'");
  return Manifest::from_json(nlohmann::json::parse(in));
}

/// Paths whose recorded hash no longer matches the file on disk.
inline std::vector<std::string> verify_manifest(const std::filesystem::path& dir, const Manifest& m) {
  std::vector<std::string> bad;
  for (const auto& f : m.files) {
    std::ifstream in(dir / f.path, std::ios::binary);
    if (!in) {
      bad.push_back(f.path);
      continue;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (f.sha256 && sha256_hex(ss.str()) != *f.sha256) bad.push_back(f.path);
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Tables

inline CsvTable model_matrix_table(const ModelMatrix& m) {
  std::vector<std::string> header{"record_id", "source", "lon", "lat", "timestamp", "pa"};
  for (const auto& c : m.columns) header.push_back("raw:" + c);
  for (const auto& c : m.columns) header.push_back("model:" + c);
  CsvTable t(header);
  for (std::size_t i = 0; i < m.n_rows(); ++i) {
    const auto& p = m.provenance[i];
    std::vector<std::string> row{num(p.record_id), std::string(to_string(p.source)), num(p.lon), num(p.lat),
                                 p.timestamp ? std::to_string(*p.timestamp) : std::string(), std::to_string(m.response[i])};
    for (std::size_t j = 0; j < m.n_cols(); ++j) row.push_back(num(m.raw(i, j)));
    for (std::size_t j = 0; j < m.n_cols(); ++j) row.push_back(num(m.value(i, j)));
    t.add(std::move(row));
  }
  return t;
}

inline CsvTable standardization_table(const StandardizationParams& s) {
  CsvTable t({"variable", "mean", "sd"});
  for (const auto& [name, m] : s.variables) t.add({name, num(m.mean), num(m.sd)});
  return t;
}

/// Rebuilds a model matrix from its two exported tables.
inline ModelMatrix read_model_matrix(const std::string& matrix_csv, const std::string& standardization_csv) {
  const auto rows = parse_csv(matrix_csv);
  if (rows.empty() || rows[0].size() < 6) throw Error(ErrorKind::format, "model matrix table has no header");
  const auto& header = rows[0];
  const std::size_t p = (header.size() - 6) / 2;
  if (header.size() != 6 + 2 * p) throw Error(ErrorKind::format, "model matrix table has an odd covariate layout");
  ModelMatrix m;
  for (std::size_t j = 0; j < p; ++j) {
    const auto& h = header[6 + j];
    if (h.rfind("raw:", 0) != 0 || header[6 + p + j] != "model:" + h.substr(4)) {
      throw Error(ErrorKind::format, "unexpected covariate header '" + h + "'");
    }
    m.columns.push_back(h.substr(4));
  }
  auto need_double = [](const std::string& s) {
    auto v = parse_double(s);
    if (!v) throw Error(ErrorKind::format, "not a number: '" + s + "'");
    return *v;
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) throw Error(ErrorKind::format, "model matrix row " + std::to_string(r) + " has wrong width");
    RowProvenance prov;
    auto id = parse_integer<std::size_t>(row[0]);
    auto src = row_source_from_string(row[1]);
    if (!id || !src) throw Error(ErrorKind::format, "bad provenance in row " + std::to_string(r));
    prov.record_id = *id;
    prov.source = *src;
    prov.lon = need_double(row[2]);
    prov.lat = need_double(row[3]);
    if (!row[4].empty()) {
      auto t = parse_integer<Timestamp>(row[4]);
      if (!t) throw Error(ErrorKind::format, "bad timestamp in row " + std::to_string(r));
      prov.timestamp = *t;
    }
    auto pa = parse_integer<int>(row[5]);
    if (!pa) throw Error(ErrorKind::format, "bad response in row " + std::to_string(r));
    m.provenance.push_back(prov);
    m.response.push_back(*pa);
    for (std::size_t j = 0; j < p; ++j) m.raw_values.push_back(need_double(row[6 + j]));
    for (std::size_t j = 0; j < p; ++j) m.values.push_back(need_double(row[6 + p + j]));
  }
  const auto srows = parse_csv(standardization_csv);
  for (std::size_t r = 1; r < srows.size(); ++r) {
    if (srows[r].size() != 3) throw Error(ErrorKind::format, "standardization row has wrong width");
    m.standardization.variables[srows[r][0]] = {need_double(srows[r][1]), need_double(srows[r][2])};
  }
  return m;
}

inline CsvTable cleaning_table(const SpeciesResult& s) {
  CsvTable t({"step", "records"});
  const auto& c = s.cleaning;
  t.add({"input", num(c.input)});
  t.add({"missing_coordinate", num(c.missing_coordinate)});
  t.add({"duplicate", num(c.duplicate)});
  t.add({"outside_polygon", num(c.outside_polygon)});
  t.add({"unmatched_timestamp", num(c.unmatched_timestamp)});
  t.add({"missing_environment", num(c.missing_environment)});
  t.add({"retained", num(c.retained)});
  t.add({"thinned", num(s.thinned_removed)});
  t.add({"pseudo_absences", num(s.pseudo_absences)});
  for (const auto& v : s.variants) t.add({to_string(v.variant) + ":matrix_dropped_missing", num(v.matrix.dropped_missing)});
  return t;
}

inline CsvTable metrics_table(const VariantResult& v) {
  const auto& e = v.evaluation;
  CsvTable t({"metric", "value"});
  t.add({"cutoff", num(e.cutoff)});
  t.add({"auc", num(e.roc.auc)});
  t.add({"tss", num(e.tss)});
  t.add({"sensitivity", opt(e.metrics.sensitivity)});
  t.add({"specificity", opt(e.metrics.specificity)});
  t.add({"precision", opt(e.metrics.precision)});
  t.add({"f_score", num(e.metrics.f_score)});
  t.add({"accuracy", opt(e.metrics.accuracy)});
  t.add({"tp", num(e.confusion.tp)});
  t.add({"fp", num(e.confusion.fp)});
  t.add({"fn", num(e.confusion.fn)});
  t.add({"tn", num(e.confusion.tn)});
  t.add({"n_train", num(v.model.n_train)});
  t.add({"n_draws", num(v.model.n_draws())});
  t.add({"presences", num(v.matrix.count_class(1))});
  t.add({"absences", num(v.matrix.count_class(0))});
  return t;
}

inline CsvTable roc_table(const eval::RocCurve& roc) {
  CsvTable t({"fpr", "tpr"});
  for (const auto& p : roc.points) t.add({num(p.fpr), num(p.tpr)});
  return t;
}

inline CsvTable fitted_distribution_table(const eval::FittedDistribution& d) {
  CsvTable t({"bin_lower", "bin_upper", "presence", "absence"});
  for (std::size_t b = 0; b < d.bins; ++b) {
    t.add({num(static_cast<double>(b) / static_cast<double>(d.bins)),
           num(static_cast<double>(b + 1) / static_cast<double>(d.bins)), num(d.presence[b]), num(d.absence[b])});
  }
  return t;
}

inline CsvTable cv_table(const eval::CrossValidation& cv) {
  std::vector<std::string> header{"fold"};
  for (const auto& m : eval::cv_metric_names()) header.push_back(m);
  CsvTable t(header);
  auto add = [&](const std::string& label, const eval::MetricMap& values) {
    std::vector<std::string> row{label};
    for (const auto& m : eval::cv_metric_names()) row.push_back(opt(values.at(m)));
    t.add(std::move(row));
  };
  for (std::size_t f = 0; f < cv.folds.size(); ++f) add(std::to_string(f + 1), cv.folds[f]);
  add("mean", cv.mean);
  return t;
}

inline CsvTable cv_folds_table(const eval::CrossValidation& cv) {
  CsvTable t({"row", "fold"});
  for (std::size_t i = 0; i < cv.fold_of.size(); ++i) t.add({num(i + 1), num(cv.fold_of[i] + 1)});
  return t;
}

inline CsvTable importance_table(const eval::VariableImportance& imp) {
  CsvTable t({"variable", "iteration", "importance"});
  for (std::size_t j = 0; j < imp.variables.size(); ++j) {
    for (std::size_t it = 0; it < imp.values[j].size(); ++it) t.add({imp.variables[j], num(it + 1), num(imp.values[j][it])});
  }
  return t;
}

inline CsvTable response_curve_table(const std::vector<eval::ResponseCurve>& curves) {
  CsvTable t({"variable", "value", "mean", "lower", "upper"});
  for (const auto& c : curves) {
    for (std::size_t g = 0; g < c.grid.size(); ++g) t.add({c.variable, num(c.grid[g]), num(c.mean[g]), num(c.lower[g]), num(c.upper[g])});
  }
  return t;
}

inline CsvTable habitat_table(const HabitatAreaSeries& series) {
  CsvTable t({"scenario", "timestamp", "suitable_cells", "suitable_area", "percent_change"});
  for (const auto& [name, pts] : series) {
    for (const auto& p : pts) t.add({name, std::to_string(p.timestamp), num(p.suitable_cells), num(p.suitable_area), opt(p.percent_change)});
  }
  return t;
}

inline CsvTable timing_table(const SpeciesResult& s) {
  CsvTable t({"stage", "seconds"});
  for (const auto& st : s.timing) t.add({st.stage, num(st.seconds)});
  t.add({"total", num(s.wall_seconds)});
  return t;
}

inline CsvTable failures_table(const ResultsBundle& b) {
  CsvTable t({"species", "stage", "kind", "message"});
  for (const auto& s : b.species) {
    if (s.failure) t.add({s.name, s.failure->stage, s.failure->kind, s.failure->message});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Writer

class ResultWriter {
 public:
  explicit ResultWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) {
      throw Error(ErrorKind::io, "cannot create output directory '" + dir_.string() + "'");
    }
  }

  void write(const std::string& rel, const std::string& content, std::string family,
             std::map<std::string, std::string> keys = {}, bool is_volatile = false) {
    const auto full = dir_ / rel;
    std::error_code ec;
    std::filesystem::create_directories(full.parent_path(), ec);
    std::ofstream out(full, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(content.data(), static_cast<std::streamsize>(content.size())) || !out.flush()) {
      throw Error(ErrorKind::io, "cannot write '" + full.string() + "'");
    }
    ManifestEntry e{rel, std::move(family), std::move(keys), content.size(), std::nullopt};
    if (!is_volatile) e.sha256 = sha256_hex(content);
    manifest_.files.push_back(std::move(e));
  }

  Manifest finish() {
    std::sort(manifest_.files.begin(), manifest_.files.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    const auto text = manifest_.to_json().dump(2) + "\n";
    std::ofstream out(dir_ / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out || !(out << text) || !out.flush()) throw Error(ErrorKind::io, "cannot write manifest");
    return manifest_;
  }

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
};

inline std::string raster_name(const std::string& species, Variant v, const std::string& scenario,
                               const std::string& timestamp, const std::string& summary) {
  return "rasters/" + species + "_" + to_string(v) + "_" + scenario + "_" + timestamp + "_" + summary + ".asc";
}

inline std::string averaged_raster_name(const std::string& species, Variant v, const std::string& summary) {
  return raster_name(species, v, "fit", "average", summary);
}

inline std::string table_name(const std::string& species, std::optional<Variant> v, const std::string& table) {
  return "tables/" + species + (v ? "_" + to_string(*v) : std::string()) + "_" + table + ".csv";
}

inline std::string model_name(const std::string& species, Variant v) { return "models/" + species + "_" + to_string(v) + ".model"; }

/// Writes every artifact of the bundle and returns the manifest, which is
/// written last so a complete manifest implies complete results.
inline Manifest export_results(const ResultsBundle& bundle, const std::filesystem::path& dir) {
  ResultWriter w(dir);
  for (const auto& s : bundle.species) {
    const std::map<std::string, std::string> sk{{"species", s.name}};
    w.write(table_name(s.name, std::nullopt, "cleaning"), cleaning_table(s).str(), "cleaning", sk);
    w.write(table_name(s.name, std::nullopt, "timing"), timing_table(s).str(), "timing", sk, true);
    for (const auto& v : s.variants) {
      auto vk = sk;
      vk["variant"] = to_string(v.variant);
      auto table = [&](const std::string& name, const CsvTable& t) {
        w.write(table_name(s.name, v.variant, name), t.str(), name, vk);
      };
      table("model_matrix", model_matrix_table(v.matrix));
      table("standardization", standardization_table(v.matrix.standardization));
      table("metrics", metrics_table(v));
      table("roc", roc_table(v.evaluation.roc));
      table("fitted_distribution", fitted_distribution_table(v.evaluation.fitted));
      if (v.cross_validation) {
        table("cv", cv_table(*v.cross_validation));
        table("cv_folds", cv_folds_table(*v.cross_validation));
      }
      if (v.importance) table("importance", importance_table(*v.importance));
      if (!v.response_curves.empty()) table("response_curves", response_curve_table(v.response_curves));
      table("habitat_area", habitat_table(v.habitat));

      std::ostringstream model_bytes;
      bart::save_model(model_bytes, v.model);
      w.write(model_name(s.name, v.variant), model_bytes.str(), "model", vk);

      auto raster = [&](const PosteriorPrediction& p, const std::string& scenario, const std::string& timestamp) {
        for (const auto& summary : summary_names()) {
          auto k = vk;
          k["scenario"] = scenario;
          k["timestamp"] = timestamp;
          k["summary"] = summary;
          w.write(raster_name(s.name, v.variant, scenario, timestamp, summary), ascii_grid_text(p.summary(summary)),
                  "raster", std::move(k));
        }
      };
      if (v.projection.averaged) raster(*v.projection.averaged, "fit", "average");
      for (const auto& [scenario, steps] : v.projection.scenarios) {
        for (const auto& [t, p] : steps) raster(p, scenario, std::to_string(t));
      }
    }
  }
  w.write("tables/failures.csv", failures_table(bundle).str(), "failures");
  return w.finish();
}

}  // namespace sdm::pipeline
