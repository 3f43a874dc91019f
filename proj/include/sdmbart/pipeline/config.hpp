#pragma once

// Declarative analysis configuration (JSON document, schema version 1).
// Relative paths resolve against the directory holding the config.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/error.hpp"
#include "sdmbart/geo.hpp"
#include "sdmbart/numeric_text.hpp"

namespace sdm::pipeline {

inline constexpr int kConfigVersion = 1;

enum class Variant { suitable_habitat, native_range };

inline std::string to_string(Variant v) { return v == Variant::suitable_habitat ? "suitable_habitat" : "native_range"; }

inline std::optional<Variant> variant_from_string(std::string_view s) {
  if (s == "suitable_habitat") return Variant::suitable_habitat;
  if (s == "native_range") return Variant::native_range;
  return std::nullopt;
}

struct SpeciesOptions {
  std::string name;
  std::filesystem::path file;
  std::vector<Variant> variants{Variant::suitable_habitat};
  std::vector<std::string> predictors;  // empty = every fitting variable
  bool standardize = true;
  std::optional<int> thinning_decimals;
  std::optional<std::uint64_t> pseudo_absence_seed;
};

struct EvaluationOptions {
  bool response_curves = true;
  bool importance = true;
  bool cross_validation = true;
  std::size_t cv_folds = 5;
  std::size_t importance_iterations = 10;
  std::size_t pdp_grid_size = 20;
};

/// Undated fitting layers are stored under `kUndated`.
using LayerPaths = std::map<std::string, std::map<Timestamp, std::filesystem::path>>;
using ScenarioPaths = std::map<std::string, std::map<Timestamp, std::map<std::string, std::filesystem::path>>>;

struct AnalysisConfig {
  int version = kConfigVersion;
  std::vector<SpeciesOptions> species;
  LayerPaths fit_layers;  // variable -> timestamp -> path
  bool fit_undated = false;
  ScenarioPaths projection_layers;  // scenario -> timestamp -> variable -> path
  std::optional<std::filesystem::path> study_area;
  bart::SamplerConfig sampler;
  EvaluationOptions evaluation;
  std::filesystem::path output = "results";
  std::uint64_t seed = 42;
  std::size_t workers = 1;
  std::filesystem::path base_dir = ".";

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : base_dir / p; }

  std::vector<std::string> fit_variables() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : fit_layers) out.push_back(name);
    return out;
  }
};

inline constexpr Timestamp kUndated = 0;

namespace detail {

[[noreturn]] inline void config_error(const std::string& what) { throw Error(ErrorKind::validation, "config: " + what); }

inline void check_keys(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error(where + "." + key + " has the wrong type");
  }
}

inline std::size_t get_count(const nlohmann::json& obj, const char* key, std::size_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) config_error(where + "." + key + " must be a non-negative integer");
  return v.get<std::size_t>();
}

inline Timestamp parse_timestamp_key(const std::string& key, const std::string& where) {
  auto t = parse_integer<Timestamp>(key);
  if (!t) config_error("timestamp key '" + key + "' in " + where + " is not an integer");
  return *t;
}

inline std::string path_text(const nlohmann::json& v, const std::string& where) {
  if (!v.is_string() || v.get<std::string>().empty()) config_error(where + " must be a non-empty path string");
  return v.get<std::string>();
}

}  // namespace detail

/// Parses and checks the config shape. File contents are checked later by
/// validate_inputs.
inline AnalysisConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  using namespace detail;
  check_keys(doc, "config",
             {"version", "species", "fit_layers", "projection_layers", "study_area", "sampler", "evaluation", "output",
              "seed", "workers"});
  AnalysisConfig cfg;
  cfg.base_dir = base_dir;
  cfg.version = get_or<int>(doc, "version", kConfigVersion, "config");
  if (cfg.version != kConfigVersion) config_error("unsupported version " + std::to_string(cfg.version));
  cfg.seed = get_or<std::uint64_t>(doc, "seed", cfg.seed, "config");
  cfg.workers = std::max<std::size_t>(1, get_count(doc, "workers", cfg.workers, "config"));
  cfg.output = get_or<std::string>(doc, "output", cfg.output.string(), "config");
  if (doc.contains("study_area") && !doc.at("study_area").is_null()) {
    cfg.study_area = path_text(doc.at("study_area"), "study_area");
  }

  if (!doc.contains("fit_layers")) config_error("fit_layers is required");
  const auto& fit = doc.at("fit_layers");
  if (!fit.is_object() || fit.empty()) config_error("fit_layers must name at least one variable");
  std::optional<bool> undated;
  for (const auto& [var, spec] : fit.items()) {
    const bool this_undated = spec.is_string();
    if (undated && *undated != this_undated) config_error("fit_layers mixes dated and undated variables");
    undated = this_undated;
    if (this_undated) {
      cfg.fit_layers[var][kUndated] = path_text(spec, "fit_layers." + var);
      continue;
    }
    if (!spec.is_object() || spec.empty()) config_error("fit_layers." + var + " must be a path or a timestamp map");
    for (const auto& [key, path] : spec.items()) {
      cfg.fit_layers[var][parse_timestamp_key(key, "fit_layers." + var)] = path_text(path, "fit_layers." + var + "." + key);
    }
  }
  cfg.fit_undated = *undated;

  if (doc.contains("projection_layers")) {
    const auto& proj = doc.at("projection_layers");
    if (!proj.is_object()) config_error("projection_layers must be an object");
    for (const auto& [scenario, steps] : proj.items()) {
      if (!steps.is_object() || steps.empty()) config_error("projection_layers." + scenario + " must map timestamps");
      for (const auto& [key, vars] : steps.items()) {
        const auto where = "projection_layers." + scenario + "." + key;
        const auto t = parse_timestamp_key(key, "projection_layers." + scenario);
        if (!vars.is_object()) config_error(where + " must map variables to paths");
        auto& slot = cfg.projection_layers[scenario][t];
        for (const auto& [var, path] : vars.items()) slot[var] = path_text(path, where + "." + var);
      }
    }
  }

  if (doc.contains("sampler")) {
    const auto& s = doc.at("sampler");
    check_keys(s, "sampler", {"trees", "burn", "draws", "cutpoints", "alpha", "beta", "k"});
    cfg.sampler.trees = get_count(s, "trees", cfg.sampler.trees, "sampler");
    cfg.sampler.n_burn = get_count(s, "burn", cfg.sampler.n_burn, "sampler");
    cfg.sampler.n_draws = get_count(s, "draws", cfg.sampler.n_draws, "sampler");
    cfg.sampler.n_cutpoints = get_count(s, "cutpoints", cfg.sampler.n_cutpoints, "sampler");
    cfg.sampler.alpha = get_or<double>(s, "alpha", cfg.sampler.alpha, "sampler");
    cfg.sampler.beta = get_or<double>(s, "beta", cfg.sampler.beta, "sampler");
    cfg.sampler.k = get_or<double>(s, "k", cfg.sampler.k, "sampler");
  }

  if (doc.contains("evaluation")) {
    const auto& e = doc.at("evaluation");
    check_keys(e, "evaluation",
               {"response_curves", "importance", "cross_validation", "cv_folds", "importance_iterations",
                "pdp_grid_size"});
    auto& ev = cfg.evaluation;
    ev.response_curves = get_or<bool>(e, "response_curves", ev.response_curves, "evaluation");
    ev.importance = get_or<bool>(e, "importance", ev.importance, "evaluation");
    ev.cross_validation = get_or<bool>(e, "cross_validation", ev.cross_validation, "evaluation");
    ev.cv_folds = get_count(e, "cv_folds", ev.cv_folds, "evaluation");
    ev.importance_iterations = get_count(e, "importance_iterations", ev.importance_iterations, "evaluation");
    ev.pdp_grid_size = get_count(e, "pdp_grid_size", ev.pdp_grid_size, "evaluation");
  }

  if (!doc.contains("species") || !doc.at("species").is_array() || doc.at("species").empty()) {
    config_error("species must list at least one species");
  }
  std::set<std::string> names;
  for (const auto& sp : doc.at("species")) {
    check_keys(sp, "species entry",
               {"name", "file", "variants", "predictors", "standardize", "thinning_decimals", "pseudo_absence_seed"});
    SpeciesOptions opt;
    if (!sp.contains("file")) config_error("species entry without file");
    opt.file = path_text(sp.at("file"), "species.file");
    opt.name = get_or<std::string>(sp, "name", opt.file.stem().string(), "species");
    if (opt.name.empty()) config_error("species name must not be empty");
    if (opt.name.find_first_of("/\\ ") != std::string::npos) config_error("species name '" + opt.name + "' has a space or slash");
    if (!names.insert(opt.name).second) config_error("duplicate species name '" + opt.name + "'");
    if (sp.contains("variants")) {
      opt.variants.clear();
      for (const auto& v : sp.at("variants")) {
        const auto parsed = v.is_string() ? variant_from_string(v.get<std::string>()) : std::nullopt;
        if (!parsed) config_error("species " + opt.name + ": unknown variant " + v.dump());
        if (std::find(opt.variants.begin(), opt.variants.end(), *parsed) == opt.variants.end()) opt.variants.push_back(*parsed);
      }
      if (opt.variants.empty()) config_error("species " + opt.name + ": variant set must not be empty");
    }
    opt.predictors = get_or<std::vector<std::string>>(sp, "predictors", {}, "species " + opt.name);
    opt.standardize = get_or<bool>(sp, "standardize", true, "species " + opt.name);
    if (sp.contains("thinning_decimals") && !sp.at("thinning_decimals").is_null()) {
      opt.thinning_decimals = get_or<int>(sp, "thinning_decimals", 0, "species " + opt.name);
      if (*opt.thinning_decimals < 0) config_error("species " + opt.name + ": thinning_decimals must be >= 0");
    }
    if (sp.contains("pseudo_absence_seed") && !sp.at("pseudo_absence_seed").is_null()) {
      opt.pseudo_absence_seed = get_or<std::uint64_t>(sp, "pseudo_absence_seed", 0, "species " + opt.name);
    }
    cfg.species.push_back(std::move(opt));
  }
  return cfg;
}

inline AnalysisConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::validation, "config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

/// Inverse of parse_config (paths as given, not resolved).
inline nlohmann::json config_to_json(const AnalysisConfig& cfg) {
  nlohmann::json doc;
  doc["version"] = cfg.version;
  doc["seed"] = cfg.seed;
  doc["workers"] = cfg.workers;
  doc["output"] = cfg.output.string();
  if (cfg.study_area) doc["study_area"] = cfg.study_area->string();
  auto& fit = doc["fit_layers"] = nlohmann::json::object();
  for (const auto& [var, steps] : cfg.fit_layers) {
    if (cfg.fit_undated) {
      fit[var] = steps.at(kUndated).string();
    } else {
      for (const auto& [t, p] : steps) fit[var][std::to_string(t)] = p.string();
    }
  }
  auto& proj = doc["projection_layers"] = nlohmann::json::object();
  for (const auto& [scenario, steps] : cfg.projection_layers) {
    for (const auto& [t, vars] : steps) {
      for (const auto& [var, p] : vars) proj[scenario][std::to_string(t)][var] = p.string();
    }
  }
  doc["sampler"] = {{"trees", cfg.sampler.trees},     {"burn", cfg.sampler.n_burn}, {"draws", cfg.sampler.n_draws},
                    {"cutpoints", cfg.sampler.n_cutpoints}, {"alpha", cfg.sampler.alpha}, {"beta", cfg.sampler.beta},
                    {"k", cfg.sampler.k}};
  const auto& ev = cfg.evaluation;
  doc["evaluation"] = {{"response_curves", ev.response_curves},
                       {"importance", ev.importance},
                       {"cross_validation", ev.cross_validation},
                       {"cv_folds", ev.cv_folds},
                       {"importance_iterations", ev.importance_iterations},
                       {"pdp_grid_size", ev.pdp_grid_size}};
  auto& species = doc["species"] = nlohmann::json::array();
  for (const auto& sp : cfg.species) {
    nlohmann::json s{{"name", sp.name}, {"file", sp.file.string()}, {"standardize", sp.standardize}};
    for (auto v : sp.variants) s["variants"].push_back(to_string(v));
    s["predictors"] = sp.predictors;
    if (sp.thinning_decimals) s["thinning_decimals"] = *sp.thinning_decimals;
    if (sp.pseudo_absence_seed) s["pseudo_absence_seed"] = *sp.pseudo_absence_seed;
    species.push_back(std::move(s));
  }
  return doc;
}

}  // namespace sdm::pipeline
