#pragma once

// End-to-end workflow per species and model variant.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/eval/cross_validation.hpp"
#include "sdmbart/eval/interpretation.hpp"
#include "sdmbart/eval/metrics.hpp"
#include "sdmbart/occurrence.hpp"
#include "sdmbart/parallel.hpp"
#include "sdmbart/pipeline/config.hpp"
#include "sdmbart/pipeline/validate.hpp"
#include "sdmbart/projection.hpp"
#include "sdmbart/random.hpp"

namespace sdm::pipeline {

struct VariantResult {
  Variant variant = Variant::suitable_habitat;
  ModelMatrix matrix;
  bart::BartModel model;
  eval::EvaluationReport evaluation;
  std::optional<eval::CrossValidation> cross_validation;
  std::optional<eval::VariableImportance> importance;
  std::vector<eval::ResponseCurve> response_curves;
  ProjectionResult projection;
  HabitatAreaSeries habitat;
};

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct SpeciesFailure {
  std::string stage;
  std::string kind;
  std::string message;
};

struct SpeciesResult {
  std::string name;
  CleaningReport cleaning;
  std::size_t thinned_removed = 0;
  std::size_t pseudo_absences = 0;
  std::vector<VariantResult> variants;
  std::vector<StageTiming> timing;
  double wall_seconds = 0.0;
  std::optional<SpeciesFailure> failure;
};

struct ResultsBundle {
  std::vector<SpeciesResult> species;  // in config order
  double load_seconds = 0.0;
};

/// Called at every stage boundary: species, stage just finished, overall fraction done.
using ProgressFn = std::function<void(const std::string& species, const std::string& stage, double fraction)>;

/// Stage names in execution order for one species.
inline std::vector<std::string> stage_sequence(const SpeciesOptions& sp, const EvaluationOptions& ev) {
  std::vector<std::string> out{"clean", "thin", "pseudo_absences"};
  for (auto v : sp.variants) {
    const auto p = to_string(v) + ":";
    out.push_back(p + "matrix");
    out.push_back(p + "fit");
    out.push_back(p + "evaluate");
    if (ev.cross_validation) out.push_back(p + "cross_validation");
    if (ev.importance) out.push_back(p + "importance");
    if (ev.response_curves && v == Variant::suitable_habitat) out.push_back(p + "response_curves");
    out.push_back(p + "averaged_prediction");
    out.push_back(p + "projection");
    out.push_back(p + "habitat_area");
  }
  return out;
}

inline std::uint64_t species_seed(std::uint64_t global, const std::string& name) { return derive_seed(global, name); }

namespace detail {

class StageClock {
 public:
  StageClock(SpeciesResult& result, std::function<void(const std::string&)> on_done)
      : result_(result), on_done_(std::move(on_done)) {}

  template <typename F>
  void run(const std::string& stage, F&& body) {
    current_ = stage;
    const auto start = std::chrono::steady_clock::now();
    body();
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    result_.timing.push_back({stage, elapsed.count()});
    on_done_(stage);
  }

  const std::string& current() const { return current_; }

 private:
  SpeciesResult& result_;
  std::function<void(const std::string&)> on_done_;
  std::string current_;
};

inline void run_variant(const AnalysisConfig& cfg, const SpeciesOptions& sp, const Inputs& inputs,
                        const std::vector<OccurrenceRecord>& records, Variant variant, std::uint64_t seed,
                        std::size_t workers, StageClock& clock, VariantResult& out) {
  const auto p = to_string(variant) + ":";
  const auto tag = to_string(variant);
  out.variant = variant;
  clock.run(p + "matrix", [&] {
    out.matrix = build_model_matrix(records, inputs.environment, sp.predictors, variant == Variant::native_range,
                                    sp.standardize);
  });
  clock.run(p + "fit", [&] {
    auto sampler = cfg.sampler;
    sampler.seed = derive_seed(seed, tag + "/fit");
    out.model = bart::fit_bart(out.matrix, sampler);
  });
  clock.run(p + "evaluate", [&] {
    out.evaluation = eval::evaluate_fit(out.matrix.response, out.model.fitted_mean());
    out.model.cutoff = out.evaluation.cutoff;
  });
  const double cutoff = out.evaluation.cutoff;
  const auto& ev = cfg.evaluation;
  if (ev.cross_validation) {
    clock.run(p + "cross_validation", [&] {
      auto sampler = cfg.sampler;
      out.cross_validation = eval::kfold_cv(out.matrix, ev.cv_folds, sampler, derive_seed(seed, tag + "/cv"), workers);
    });
  }
  if (ev.importance) {
    clock.run(p + "importance", [&] {
      out.importance = eval::permutation_importance(out.model, out.matrix, cutoff, ev.importance_iterations,
                                                    derive_seed(seed, tag + "/importance"), workers);
    });
  }
  if (ev.response_curves && variant == Variant::suitable_habitat) {
    clock.run(p + "response_curves", [&] {
      for (const auto& name : out.matrix.columns) {
        out.response_curves.push_back(eval::partial_dependence(out.model, out.matrix, name, ev.pdp_grid_size, workers));
      }
    });
  }
  clock.run(p + "averaged_prediction",
            [&] { out.projection.averaged = predict_stack(out.model, inputs.environment.average(), cutoff, workers); });
  clock.run(p + "projection", [&] {
    auto averaged = std::move(out.projection.averaged);
    out.projection = project_scenarios(out.model, inputs.scenarios, cutoff, nullptr, workers);
    out.projection.averaged = std::move(averaged);
  });
  clock.run(p + "habitat_area", [&] { out.habitat = habitat_area_series(out.projection); });
}

}  // namespace detail

/// Runs one species; failures are recorded, never thrown.
inline SpeciesResult run_species(const AnalysisConfig& cfg, const SpeciesOptions& sp, const Inputs& inputs,
                                 std::size_t workers, const std::function<void(const std::string&)>& on_stage) {
  SpeciesResult result;
  result.name = sp.name;
  const auto wall_start = std::chrono::steady_clock::now();
  detail::StageClock clock(result, on_stage);
  const std::uint64_t seed = species_seed(cfg.seed, sp.name);
  try {
    std::vector<OccurrenceRecord> records;
    clock.run("clean", [&] {
      const auto raw = read_occurrences(cfg.resolve(sp.file));
      auto cleaned = clean_occurrences(raw, inputs.environment, inputs.area ? &*inputs.area : nullptr);
      result.cleaning = cleaned.report;
      records = std::move(cleaned.records);
    });
    clock.run("thin", [&] {
      if (!sp.thinning_decimals) return;
      const auto before = records.size();
      records = thin_occurrences(records, *sp.thinning_decimals, derive_seed(seed, "thinning"));
      result.thinned_removed = before - records.size();
    });
    clock.run("pseudo_absences", [&] {
      const bool any_absence = std::any_of(records.begin(), records.end(), [](const auto& r) { return !r.is_presence(); });
      if (any_absence) return;
      const auto pa_seed = sp.pseudo_absence_seed.value_or(derive_seed(seed, "pseudo_absences"));
      auto absences = generate_pseudo_absences(records, valid_mask_for(records, inputs.environment), pa_seed);
      result.pseudo_absences = absences.size();
      records.insert(records.end(), absences.begin(), absences.end());
    });
    for (auto variant : sp.variants) {
      VariantResult vr;
      detail::run_variant(cfg, sp, inputs, records, variant, seed, workers, clock, vr);
      result.variants.push_back(std::move(vr));
    }
  } catch (const Error& e) {
    result.failure = SpeciesFailure{clock.current(), std::string(to_string(e.kind())), e.what()};
  } catch (const std::exception& e) {
    result.failure = SpeciesFailure{clock.current(), "internal", e.what()};
  }
  const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - wall_start;
  result.wall_seconds = wall.count();
  return result;
}

/// Species run in parallel up to cfg.workers; a single species gets the
/// workers for per-cell and per-grid-point parallelism instead.
inline ResultsBundle run_analysis(const AnalysisConfig& cfg, const ProgressFn& progress = {}) {
  ResultsBundle bundle;
  const auto load_start = std::chrono::steady_clock::now();
  const Inputs inputs = load_inputs(cfg);
  const std::chrono::duration<double> load = std::chrono::steady_clock::now() - load_start;
  bundle.load_seconds = load.count();

  std::size_t total = 0;
  for (const auto& sp : cfg.species) total += stage_sequence(sp, cfg.evaluation).size();
  std::size_t done = 0;
  std::mutex mutex;

  const std::size_t n = cfg.species.size();
  const std::size_t outer = std::min(cfg.workers, n);
  const std::size_t inner = outer > 1 ? 1 : cfg.workers;
  bundle.species.resize(n);
  parallel_for(n, outer, [&](std::size_t i) {
    const auto& sp = cfg.species[i];
    auto on_stage = [&](const std::string& stage) {
      std::lock_guard lock(mutex);
      ++done;
      if (progress) progress(sp.name, stage, total ? static_cast<double>(done) / static_cast<double>(total) : 1.0);
    };
    bundle.species[i] = run_species(cfg, sp, inputs, inner, on_stage);
    if (bundle.species[i].failure) {
      // Skipped stages still count toward overall progress.
      std::lock_guard lock(mutex);
      done += stage_sequence(sp, cfg.evaluation).size() - bundle.species[i].timing.size();
      if (progress) progress(sp.name, "failed", static_cast<double>(done) / static_cast<double>(total));
    }
  });
  return bundle;
}

}  // namespace sdm::pipeline
