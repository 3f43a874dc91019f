#pragma once

// ESRI ASCII grid reader/writer.
//
// Layout: six header lines (ncols, nrows, xllcorner, yllcorner, cellsize,
// NODATA_value; keywords case-insensitive, any order), then nrows lines of
// ncols whitespace-separated numbers, top row first.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sdmbart/error.hpp"
#include "sdmbart/geo.hpp"
#include "sdmbart/numeric_text.hpp"

namespace sdm {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace detail

inline RasterLayer parse_ascii_grid(std::istream& in, const std::string& source = "<stream>") {
  auto fail = [&](std::size_t line_no, const std::string& what) -> Error {
    return Error(ErrorKind::format, source + ":" + std::to_string(line_no) + ": " + what);
  };

  static const char* known[] = {"ncols",     "nrows",     "xllcorner",   "yllcorner",
                                "xllcenter", "yllcenter", "cellsize",    "nodata_value"};
  std::map<std::string, std::string> header;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::string> first_data;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    auto key = detail::lower(tokens[0]);
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      if (parse_double(tokens[0])) {
        first_data = line;
        break;
      }
      throw fail(line_no, "unexpected header keyword '" + std::string(tokens[0]) + "'");
    }
    if (tokens.size() != 2) throw fail(line_no, "malformed header line");
    if (header.count(key)) throw fail(line_no, "repeated header keyword '" + key + "'");
    header[key] = std::string(tokens[1]);
  }
  const std::size_t header_end = first_data ? line_no - 1 : line_no;
  auto get = [&](const char* key) -> std::optional<double> {
    auto it = header.find(key);
    if (it == header.end()) return std::nullopt;
    auto v = parse_double(it->second);
    if (!v) throw fail(header_end, std::string("non-numeric ") + key);
    return v;
  };
  for (const char* key : {"ncols", "nrows", "cellsize"}) {
    if (!header.count(key)) throw fail(header_end, std::string("missing header keyword ") + key);
  }
  GridGeometry grid;
  const auto ncols = parse_integer<long long>(header["ncols"]);
  const auto nrows = parse_integer<long long>(header["nrows"]);
  if (!ncols || !nrows || *ncols < 1 || *nrows < 1) throw fail(header_end, "invalid grid dimensions");
  grid.n_cols = static_cast<std::size_t>(*ncols);
  grid.n_rows = static_cast<std::size_t>(*nrows);
  grid.cell_size = *get("cellsize");
  const auto origin = [&](const char* corner, const char* center) {
    if (auto v = get(corner)) return *v;
    if (auto v = get(center)) return *v - grid.cell_size / 2.0;
    throw fail(header_end, std::string("missing header keyword ") + corner);
  };
  grid.x_ll = origin("xllcorner", "xllcenter");
  grid.y_ll = origin("yllcorner", "yllcenter");
  const auto nodata = get("nodata_value");
  try {
    grid.validate();
  } catch (const Error& e) {
    throw fail(header_end, e.what());
  }

  std::vector<double> values;
  std::vector<std::uint8_t> missing;
  values.reserve(grid.cell_count());
  missing.reserve(grid.cell_count());
  std::size_t rows_read = 0;
  std::size_t data_line_no = header_end;
  auto next_line = [&]() -> bool {
    if (first_data) {
      line = *first_data;
      first_data.reset();
    } else if (!std::getline(in, line)) {
      return false;
    }
    ++data_line_no;
    return true;
  };
  while (next_line()) {
    line_no = data_line_no;
    const auto tokens = detail::split_ws(line);
    if (tokens.empty()) continue;
    if (rows_read == grid.n_rows) throw fail(line_no, "more rows than nrows");
    if (tokens.size() != grid.n_cols) {
      throw fail(line_no, "expected " + std::to_string(grid.n_cols) + " values, found " + std::to_string(tokens.size()));
    }
    for (auto tok : tokens) {
      const auto v = parse_double(tok);
      if (!v) throw fail(line_no, "non-numeric value '" + std::string(tok) + "'");
      if ((nodata && *v == *nodata) || std::isnan(*v)) {
        values.push_back(0.0);
        missing.push_back(1);
      } else {
        values.push_back(*v);
        missing.push_back(0);
      }
    }
    ++rows_read;
  }
  if (rows_read != grid.n_rows) {
    throw fail(line_no, "expected " + std::to_string(grid.n_rows) + " rows, found " + std::to_string(rows_read));
  }
  return RasterLayer(grid, std::move(values), std::move(missing));
}

inline RasterLayer load_ascii_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open grid '" + path.string() + "'");
  return parse_ascii_grid(in, path.string());
}

inline void write_ascii_grid(std::ostream& out, const RasterLayer& layer) {
  const auto& g = layer.grid();
  // NODATA must not collide with a present value.
  double nodata = -9999.0;
  auto collides = [&](double v) {
    for (std::size_t i = 0; i < layer.size(); ++i) {
      if (!layer.missing(i) && layer.value(i) == v) return true;
    }
    return false;
  };
  while (collides(nodata)) nodata = nodata * 10.0 - 9.0;

  out << "ncols " << g.n_cols << '\n'
      << "nrows " << g.n_rows << '\n'
      << "xllcorner " << format_double(g.x_ll) << '\n'
      << "yllcorner " << format_double(g.y_ll) << '\n'
      << "cellsize " << format_double(g.cell_size) << '\n'
      << "NODATA_value " << format_double(nodata) << '\n';
  for (std::size_t r = 0; r < g.n_rows; ++r) {
    for (std::size_t c = 0; c < g.n_cols; ++c) {
      if (c) out << ' ';
      out << format_double(layer.missing(r, c) ? nodata : layer.value(r, c));
    }
    out << '\n';
  }
}

inline std::string ascii_grid_text(const RasterLayer& layer) {
  std::ostringstream out;
  write_ascii_grid(out, layer);
  return out.str();
}

inline void write_ascii_grid(const std::filesystem::path& path, const RasterLayer& layer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write grid '" + path.string() + "'");
  write_ascii_grid(out, layer);
  if (!out) throw Error(ErrorKind::io, "failed writing grid '" + path.string() + "'");
}

}  // namespace sdm
