#pragma once

// Model artifact: "SDMBART1" magic, a little-endian u64 length, a JSON
// metadata block (config, covariate schema, ranges, standardization, cutoff),
// then per draw a u64 node count, the nodes (i32 var, i32 left, i32 right,
// f64 value) and the tree roots (u32 each). All doubles are stored as raw
// IEEE-754 bits so load -> predict reproduces predictions exactly.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "sdmbart/bart/sampler.hpp"
#include "sdmbart/error.hpp"

namespace sdm::bart {

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}
inline void put_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 4);
}
inline std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error(ErrorKind::format, "truncated model artifact");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}
inline std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw Error(ErrorKind::format, "truncated model artifact");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

// Doubles travel through JSON as bit patterns to rule out any text rounding.
inline std::string bits(double v) { return std::to_string(std::bit_cast<std::uint64_t>(v)); }
inline double from_bits(const nlohmann::json& j) { return std::bit_cast<double>(std::stoull(j.get<std::string>())); }

constexpr char kMagic[8] = {'S', 'D', 'M', 'B', 'A', 'R', 'T', '1'};

}  // namespace detail

inline nlohmann::json model_metadata(const BartModel& model) {
  using detail::bits;
  nlohmann::json meta;
  meta["format"] = "sdmbart-model";
  meta["version"] = 1;
  const auto& c = model.config;
  meta["config"] = {{"trees", c.trees},
                    {"alpha", bits(c.alpha)},
                    {"beta", bits(c.beta)},
                    {"k", bits(c.k)},
                    {"n_cutpoints", c.n_cutpoints},
                    {"n_burn", c.n_burn},
                    {"n_draws", c.n_draws},
                    {"move_probs", {bits(c.move_probs[0]), bits(c.move_probs[1]), bits(c.move_probs[2])}},
                    {"seed", c.seed}};
  meta["covariates"] = model.covariates;
  auto ranges = nlohmann::json::array();
  for (const auto& [lo, hi] : model.ranges) ranges.push_back({bits(lo), bits(hi)});
  meta["ranges"] = ranges;
  auto standardization = nlohmann::json::object();
  for (const auto& [name, m] : model.standardization.variables) {
    standardization[name] = {{"mean", bits(m.mean)}, {"sd", bits(m.sd)}};
  }
  meta["standardization"] = standardization;
  meta["n_train"] = model.n_train;
  meta["n_draws"] = model.draws.size();
  meta["cutoff"] = model.cutoff ? nlohmann::json(bits(*model.cutoff)) : nlohmann::json(nullptr);
  return meta;
}

inline void save_model(std::ostream& out, const BartModel& model) {
  out.write(detail::kMagic, 8);
  const std::string meta = model_metadata(model).dump();
  detail::put_u64(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  for (const auto& forest : model.draws) {
    detail::put_u64(out, forest.nodes.size());
    for (const auto& n : forest.nodes) {
      detail::put_u32(out, static_cast<std::uint32_t>(n.var));
      detail::put_u32(out, static_cast<std::uint32_t>(n.left));
      detail::put_u32(out, static_cast<std::uint32_t>(n.right));
      detail::put_u64(out, std::bit_cast<std::uint64_t>(n.value));
    }
    detail::put_u64(out, forest.roots.size());
    for (auto r : forest.roots) detail::put_u32(out, r);
  }
}

/// The returned model carries no training fitted draws.
inline BartModel load_model(std::istream& in) {
  using detail::from_bits;
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, detail::kMagic)) {
    throw Error(ErrorKind::format, "not a model artifact (bad magic)");
  }
  const auto meta_size = detail::get_u64(in);
  std::string meta_text(meta_size, '\0');
  if (!in.read(meta_text.data(), static_cast<std::streamsize>(meta_size))) {
    throw Error(ErrorKind::format, "truncated model metadata");
  }
  BartModel model;
  std::size_t n_draws = 0;
  try {
    const auto meta = nlohmann::json::parse(meta_text);
    if (meta.at("version").get<int>() != 1) throw Error(ErrorKind::format, "unsupported model version");
    const auto& c = meta.at("config");
    model.config.trees = c.at("trees").get<std::size_t>();
    model.config.alpha = from_bits(c.at("alpha"));
    model.config.beta = from_bits(c.at("beta"));
    model.config.k = from_bits(c.at("k"));
    model.config.n_cutpoints = c.at("n_cutpoints").get<std::size_t>();
    model.config.n_burn = c.at("n_burn").get<std::size_t>();
    model.config.n_draws = c.at("n_draws").get<std::size_t>();
    for (std::size_t i = 0; i < 3; ++i) model.config.move_probs[i] = from_bits(c.at("move_probs").at(i));
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.covariates = meta.at("covariates").get<std::vector<std::string>>();
    for (const auto& r : meta.at("ranges")) model.ranges.emplace_back(from_bits(r.at(0)), from_bits(r.at(1)));
    for (const auto& [name, m] : meta.at("standardization").items()) {
      model.standardization.variables[name] = {from_bits(m.at("mean")), from_bits(m.at("sd"))};
    }
    model.n_train = meta.at("n_train").get<std::size_t>();
    n_draws = meta.at("n_draws").get<std::size_t>();
    if (!meta.at("cutoff").is_null()) model.cutoff = from_bits(meta.at("cutoff"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("invalid model metadata: ") + e.what());
  }
  model.draws.resize(n_draws);
  for (auto& forest : model.draws) {
    const auto n_nodes = detail::get_u64(in);
    forest.nodes.resize(n_nodes);
    for (auto& n : forest.nodes) {
      n.var = static_cast<std::int32_t>(detail::get_u32(in));
      n.left = static_cast<std::int32_t>(detail::get_u32(in));
      n.right = static_cast<std::int32_t>(detail::get_u32(in));
      n.value = std::bit_cast<double>(detail::get_u64(in));
      if (n.var >= static_cast<std::int32_t>(model.covariates.size()) ||
          (n.var >= 0 && (n.left < 0 || n.right < 0 || static_cast<std::uint64_t>(n.left) >= n_nodes ||
                          static_cast<std::uint64_t>(n.right) >= n_nodes))) {
        throw Error(ErrorKind::format, "corrupt tree node in model artifact");
      }
    }
    const auto n_roots = detail::get_u64(in);
    forest.roots.resize(n_roots);
    for (auto& r : forest.roots) {
      r = detail::get_u32(in);
      if (r >= n_nodes) throw Error(ErrorKind::format, "corrupt tree root in model artifact");
    }
  }
  return model;
}

inline void save_model(const std::filesystem::path& path, const BartModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write model '" + path.string() + "'");
  save_model(out, model);
  if (!out) throw Error(ErrorKind::io, "failed writing model '" + path.string() + "'");
}

inline BartModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open model '" + path.string() + "'");
  return load_model(in);
}

}  // namespace sdm::bart
