#pragma once

// Posterior habitat-suitability maps over raster stacks, scenarios and time
// steps, and suitable-area trends.

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdmbart/bart/prior.hpp"
#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/geo.hpp"
#include "sdmbart/parallel.hpp"
#include "sdmbart/summary.hpp"

namespace sdm {

inline const std::vector<std::string>& summary_names() {
  static const std::vector<std::string> names{"mean", "median", "q025", "q975", "binary"};
  return names;
}

struct PosteriorPrediction {
  RasterLayer mean;
  RasterLayer median;
  RasterLayer q025;
  RasterLayer q975;
  RasterLayer binary;  // 1 where mean >= cutoff
  double cutoff = 0.5;

  const RasterLayer& summary(std::string_view name) const {
    if (name == "mean") return mean;
    if (name == "median") return median;
    if (name == "q025") return q025;
    if (name == "q975") return q975;
    if (name == "binary") return binary;
    throw Error(ErrorKind::parameter, "unknown summary '" + std::string(name) + "'");
  }

  friend bool operator==(const PosteriorPrediction&, const PosteriorPrediction&) = default;
};

/// Environmental covariates the model needs from a stack (coordinates excluded).
inline std::vector<std::string> environmental_covariates(const bart::BartModel& model) {
  std::vector<std::string> out;
  for (const auto& c : model.covariates) {
    if (c != kLonColumn && c != kLatColumn) out.push_back(c);
  }
  return out;
}

/// Posterior summaries per cell. Cells missing any required covariate are
/// missing in every output; coordinate covariates take the cell center.
inline PosteriorPrediction predict_stack(const bart::BartModel& model, const RasterStack& stack, double cutoff,
                                         std::size_t workers = 1, QuantileLevels levels = {}) {
  const auto required = environmental_covariates(model);
  if (required.empty() && stack.empty()) throw Error(ErrorKind::schema, "empty stack");
  std::vector<const RasterLayer*> layers;
  for (const auto& name : required) {
    if (!stack.contains(name)) throw Error(ErrorKind::schema, "stack lacks required variable '" + name + "'");
    layers.push_back(&stack.at(name));
  }
  const GridGeometry grid = layers.empty() ? stack.grid() : layers.front()->grid();
  for (const auto* l : layers) {
    if (l->grid() != grid) throw Error(ErrorKind::alignment, "variables are not grid-aligned");
  }

  const std::size_t p = model.covariates.size();
  // Source of each model column: index into `layers`, or -1 lon / -2 lat.
  std::vector<int> source(p);
  for (std::size_t j = 0, e = 0; j < p; ++j) {
    if (model.covariates[j] == kLonColumn) source[j] = -1;
    else if (model.covariates[j] == kLatColumn) source[j] = -2;
    else source[j] = static_cast<int>(e++);
  }

  PosteriorPrediction out{RasterLayer::all_missing(grid), RasterLayer::all_missing(grid), RasterLayer::all_missing(grid),
                          RasterLayer::all_missing(grid), RasterLayer::all_missing(grid), cutoff};
  const std::size_t n_draws = model.draws.size();
  parallel_for(grid.cell_count(), workers, [&](std::size_t cell) {
    for (const auto* l : layers) {
      if (l->missing(cell)) return;
    }
    const auto center = cell_center(grid, cell / grid.n_cols, cell % grid.n_cols);
    std::vector<double> row(p);
    for (std::size_t j = 0; j < p; ++j) {
      double raw = 0.0;
      if (source[j] == -1) raw = center.lon;
      else if (source[j] == -2) raw = center.lat;
      else raw = layers[static_cast<std::size_t>(source[j])]->value(cell);
      row[j] = model.standardization.apply(model.covariates[j], raw);
    }
    std::vector<double> draws(n_draws);
    for (std::size_t d = 0; d < n_draws; ++d) draws[d] = bart::normal_cdf(model.draws[d].evaluate(row.data()));
    const auto s = summarize_draws(draws, levels);
    out.mean.set(cell, s.mean);
    out.median.set(cell, s.median);
    out.q025.set(cell, s.lower);
    out.q975.set(cell, s.upper);
    out.binary.set(cell, s.mean >= cutoff ? 1.0 : 0.0);
  });
  return out;
}

struct ProjectionResult {
  std::map<std::string, std::map<Timestamp, PosteriorPrediction>> scenarios;
  std::optional<PosteriorPrediction> averaged;  // over the fitting-period average
};

/// Independent predictions per (scenario, timestamp), plus one prediction on
/// the time-averaged fitting layers when those are given.
inline ProjectionResult project_scenarios(const bart::BartModel& model, const ScenarioSet& scenarios, double cutoff,
                                          const TimeSeriesStack* fitting_series = nullptr, std::size_t workers = 1) {
  ProjectionResult result;
  for (const auto& [name, series] : scenarios) {
    auto& out = result.scenarios[name];
    for (const auto& [t, stack] : series) {
      try {
        out.emplace(t, predict_stack(model, stack, cutoff, workers));
      } catch (const Error& e) {
        throw Error(e.kind(), "scenario '" + name + "', timestamp " + std::to_string(t) + ": " + e.what());
      }
    }
  }
  if (fitting_series && !fitting_series->empty()) {
    result.averaged = predict_stack(model, average_stack(*fitting_series), cutoff, workers);
  }
  return result;
}

struct HabitatAreaPoint {
  Timestamp timestamp = 0;
  std::size_t suitable_cells = 0;
  double suitable_area = 0.0;             // sum of cell_size^2 cos(latitude)
  std::optional<double> percent_change;   // vs the first timestamp; empty when that area is 0
};

using HabitatAreaSeries = std::map<std::string, std::vector<HabitatAreaPoint>>;

/// Area-weighted suitable habitat of a binary layer.
inline std::pair<std::size_t, double> suitable_area(const RasterLayer& binary) {
  const auto& g = binary.grid();
  std::size_t cells = 0;
  double area = 0.0;
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    const double lat = cell_center(g, r, 0).lat;
    const double weight = g.cell_size * g.cell_size * std::cos(lat * std::numbers::pi / 180.0);
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      if (!binary.missing(r, c) && binary.value(r, c) == 1.0) {
        ++cells;
        area += weight;
      }
    }
  }
  return {cells, area};
}

inline HabitatAreaSeries habitat_area_series(const ProjectionResult& result) {
  HabitatAreaSeries series;
  for (const auto& [name, steps] : result.scenarios) {
    auto& points = series[name];
    for (const auto& [t, pred] : steps) {
      const auto [cells, area] = suitable_area(pred.binary);
      points.push_back({t, cells, area, std::nullopt});
    }
    if (points.empty()) continue;
    const double base = points.front().suitable_area;
    for (auto& pt : points) {
      if (base > 0.0) pt.percent_change = (pt.suitable_area - base) / base * 100.0;
    }
  }
  return series;
}

}  // namespace sdm
