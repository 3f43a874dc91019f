#pragma once

// Input loading and the pre-flight validation table.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdmbart/ascii_grid.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/geo.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/pipeline/config.hpp"

namespace sdm::pipeline {

struct Inputs {
  Environment environment;
  ScenarioSet scenarios;
  std::optional<StudyArea> area;
};

/// Loads fitting and projection layers and the study area, masking both layer
/// sets by the area when one is given.
inline Inputs load_inputs(const AnalysisConfig& cfg) {
  std::optional<StudyArea> area;
  if (cfg.study_area) area = load_study_area(cfg.resolve(*cfg.study_area).string());

  auto environment = [&]() {
    if (cfg.fit_undated) {
      RasterStack s;
      for (const auto& [var, steps] : cfg.fit_layers) s.add(var, load_ascii_grid(cfg.resolve(steps.at(kUndated))));
      return Environment(std::move(s));
    }
    std::map<Timestamp, RasterStack> by_time;
    for (const auto& [var, steps] : cfg.fit_layers) {
      for (const auto& [t, path] : steps) by_time[t].add(var, load_ascii_grid(cfg.resolve(path)));
    }
    TimeSeriesStack series;
    for (auto& [t, s] : by_time) series.add(t, std::move(s));
    return Environment(std::move(series));
  }();

  ScenarioSet scenarios;
  for (const auto& [name, steps] : cfg.projection_layers) {
    TimeSeriesStack series;
    for (const auto& [t, vars] : steps) {
      RasterStack s;
      for (const auto& [var, path] : vars) s.add(var, load_ascii_grid(cfg.resolve(path)));
      series.add(t, area ? crop_mask(s, *area).stack : std::move(s));
    }
    scenarios.add(name, std::move(series));
  }
  if (area) environment = environment.masked(*area);
  return {std::move(environment), std::move(scenarios), std::move(area)};
}

// ---------------------------------------------------------------------------
// Validation table

enum class Status { ok, warning, error };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::warning: return "warning";
    case Status::error: return "error";
  }
  return "error";
}

struct ValidationRow {
  std::string item;
  std::string check;
  Status status = Status::ok;
  std::string message;
};

struct ValidationTable {
  std::vector<ValidationRow> rows;

  void add(std::string item, std::string check, Status status, std::string message = {}) {
    rows.push_back({std::move(item), std::move(check), status, std::move(message)});
  }

  std::size_t count(Status s) const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.status == s; }));
  }
  bool has_errors() const { return count(Status::error) > 0; }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& r : rows) {
      arr.push_back({{"item", r.item}, {"check", r.check}, {"status", to_string(r.status)}, {"message", r.message}});
    }
    return {{"valid", !has_errors()},
            {"errors", count(Status::error)},
            {"warnings", count(Status::warning)},
            {"rows", std::move(arr)}};
  }
};

namespace detail {

/// Loads a grid into `cache`, adding existence and format rows.
inline const RasterLayer* checked_grid(const AnalysisConfig& cfg, const std::filesystem::path& path,
                                       std::map<std::string, std::optional<RasterLayer>>& cache, ValidationTable& table) {
  const auto key = path.string();
  if (auto it = cache.find(key); it != cache.end()) return it->second ? &*it->second : nullptr;
  auto& slot = cache[key];
  const auto full = cfg.resolve(path);
  if (!std::filesystem::is_regular_file(full)) {
    table.add(key, "file exists", Status::error, "file not found");
    return nullptr;
  }
  try {
    slot = load_ascii_grid(full);
    table.add(key, "raster format", Status::ok);
  } catch (const Error& e) {
    table.add(key, "raster format", Status::error, e.what());
    return nullptr;
  }
  return &*slot;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace detail

/// Checks every input referenced by the config. Never throws for bad inputs
/// and never writes anything; all findings are rows.
inline ValidationTable validate_inputs(const AnalysisConfig& cfg) {
  ValidationTable table;
  std::map<std::string, std::optional<RasterLayer>> cache;

  table.add("config", "species", cfg.species.empty() ? Status::error : Status::ok,
            std::to_string(cfg.species.size()) + " species");
  table.add("config", "environmental variables", cfg.fit_layers.empty() ? Status::error : Status::ok,
            detail::join(cfg.fit_variables()));
  try {
    cfg.sampler.validate();
    table.add("config", "sampler", Status::ok);
  } catch (const Error& e) {
    table.add("config", "sampler", Status::error, e.what());
  }
  if (cfg.evaluation.cross_validation && cfg.evaluation.cv_folds < 2) {
    table.add("config", "cross-validation folds", Status::error, "cv_folds must be >= 2");
  }
  if (cfg.evaluation.response_curves && cfg.evaluation.pdp_grid_size < 2) {
    table.add("config", "response curve grid", Status::error, "pdp_grid_size must be >= 2");
  }
  if (cfg.evaluation.importance && cfg.evaluation.importance_iterations < 1) {
    table.add("config", "importance iterations", Status::error, "importance_iterations must be >= 1");
  }

  // Fitting layers: parseable, aligned, same timestamps for every variable.
  std::optional<GridGeometry> fit_grid;
  std::string fit_grid_source;
  bool fit_aligned = true;
  std::optional<std::set<Timestamp>> fit_times;
  for (const auto& [var, steps] : cfg.fit_layers) {
    std::set<Timestamp> times;
    for (const auto& [t, path] : steps) {
      times.insert(t);
      const auto* layer = detail::checked_grid(cfg, path, cache, table);
      if (!layer) continue;
      if (!fit_grid) {
        fit_grid = layer->grid();
        fit_grid_source = path.string();
      } else if (layer->grid() != *fit_grid) {
        fit_aligned = false;
        table.add(path.string(), "grid alignment", Status::error, "grid differs from " + fit_grid_source);
      }
    }
    if (!fit_times) {
      fit_times = times;
    } else if (*fit_times != times) {
      table.add("fit_layers." + var, "timestamp coverage", Status::error,
                "timestamps differ from the other fitting variables");
    }
  }
  if (fit_grid && fit_aligned) table.add("fit_layers", "grid alignment", Status::ok);

  // Study area.
  if (cfg.study_area) {
    const auto key = cfg.study_area->string();
    const auto full = cfg.resolve(*cfg.study_area);
    if (!std::filesystem::is_regular_file(full)) {
      table.add(key, "file exists", Status::error, "file not found");
    } else {
      try {
        const auto area = load_study_area(full.string());
        table.add(key, "polygon format", Status::ok);
        if (fit_grid) {
          bool any = false;
          for (std::size_t r = 0; r < fit_grid->n_rows && !any; ++r) {
            for (std::size_t c = 0; c < fit_grid->n_cols && !any; ++c) {
              const auto p = cell_center(*fit_grid, r, c);
              any = point_in_polygon(area, p.lon, p.lat);
            }
          }
          table.add(key, "overlap", any ? Status::ok : Status::error,
                    any ? "" : "study area contains no cell of the fitting grid");
        }
      } catch (const Error& e) {
        table.add(key, "polygon format", Status::error, e.what());
      }
    }
  }

  // Projection layers.
  const auto fit_vars = cfg.fit_variables();
  const std::set<std::string> fit_var_set(fit_vars.begin(), fit_vars.end());
  for (const auto& [scenario, steps] : cfg.projection_layers) {
    std::optional<GridGeometry> g;
    bool aligned = true;
    for (const auto& [t, vars] : steps) {
      const auto item = scenario + "/" + std::to_string(t);
      std::set<std::string> have;
      for (const auto& [var, path] : vars) {
        have.insert(var);
        const auto* layer = detail::checked_grid(cfg, path, cache, table);
        if (!layer) continue;
        if (!g) g = layer->grid();
        else if (layer->grid() != *g) {
          aligned = false;
          table.add(path.string(), "grid alignment", Status::error, "grid differs within scenario " + scenario);
        }
      }
      std::vector<std::string> missing;
      std::vector<std::string> extra;
      for (const auto& v : fit_var_set) {
        if (!have.count(v)) missing.push_back(v);
      }
      for (const auto& v : have) {
        if (!fit_var_set.count(v)) extra.push_back(v);
      }
      if (missing.empty() && extra.empty()) {
        table.add(item, "variable set", Status::ok);
      } else {
        std::string msg = "variable set mismatch";
        if (!missing.empty()) msg += "; missing: " + detail::join(missing);
        if (!extra.empty()) msg += "; unexpected: " + detail::join(extra);
        table.add(item, "variable set", Status::error, msg);
      }
    }
    if (g && aligned) table.add("projection_layers." + scenario, "grid alignment", Status::ok);
  }

  // Species files.
  for (const auto& sp : cfg.species) {
    const auto key = sp.file.string();
    for (const auto& p : sp.predictors) {
      if (!fit_var_set.count(p)) table.add(sp.name, "predictors", Status::error, "unknown predictor '" + p + "'");
    }
    if (sp.variants.empty()) table.add(sp.name, "variants", Status::error, "variant set is empty");
    const auto full = cfg.resolve(sp.file);
    if (!std::filesystem::is_regular_file(full)) {
      table.add(key, "file exists", Status::error, "file not found");
      continue;
    }
    std::vector<OccurrenceRecord> records;
    try {
      records = read_occurrences(full);
      table.add(key, "columns", Status::ok);
    } catch (const Error& e) {
      table.add(key, "columns", Status::error, std::string(e.what()));
      continue;
    }
    if (records.empty()) {
      table.add(key, "records", Status::error, "no occurrence records");
      continue;
    }
    if (!cfg.fit_undated && fit_times) {
      std::size_t dropped = 0;
      for (const auto& r : records) {
        if (r.timestamp && !fit_times->count(*r.timestamp)) ++dropped;
      }
      if (dropped) {
        table.add(key, "timestamp coverage", Status::warning,
                  std::to_string(dropped) + " records have timestamps absent from the fitting layers and will be dropped");
      } else {
        table.add(key, "timestamp coverage", Status::ok);
      }
    }
    std::size_t presences = 0;
    std::size_t absences = 0;
    for (const auto& r : records) (r.is_presence() ? presences : absences) += 1;
    if (presences == 0) {
      table.add(key, "class availability", Status::error, "no presence records");
    } else if (absences == 0) {
      table.add(key, "class availability", Status::ok, "presence-only; pseudo-absences will be generated");
    } else {
      table.add(key, "class availability", Status::ok,
                std::to_string(presences) + " presences, " + std::to_string(absences) + " absences");
    }
  }
  return table;
}

}  // namespace sdm::pipeline
