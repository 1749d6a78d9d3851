#pragma once

// Factor sweeps: the cross product of per-factor value lists, each cell run
// through the full pipeline and reported in a fixed axis order.

#include <algorithm>
#include <array>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msret/detail/byte_io.hpp"
#include "msret/errors.hpp"
#include "msret/log.hpp"
#include "msret/parallel.hpp"
#include "msret/pipeline.hpp"

namespace msret {

/// Recognized factor names in table column order.
inline constexpr std::array<std::string_view, 12> kGridFactors{
    "layer",   "preset",   "pooling",     "norm",          "scales",   "version",
    "overlap", "weighted", "region_norm", "whiten_source", "keep_dims", "exclude_query"};

inline bool is_grid_factor(std::string_view name) {
  return std::find(kGridFactors.begin(), kGridFactors.end(), name) != kGridFactors.end();
}

inline bool parse_bool(std::string_view s, std::string_view what) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw UsageError("bad boolean '" + std::string(s) + "' for " + std::string(what));
}

using FactorValues = std::map<std::string, std::string>;

/// Resolves factor assignments into pipeline settings. Unset factors take the
/// single-scale defaults (conv5_4, max, l2, one level, no overlap, no
/// whitening); `preset` seeds scales/version/overlap/weighted, which explicit
/// factors then override. 4-level pyramids default to version v3.
inline PipelineSettings settings_from_factors(const FactorValues& f) {
  for (const auto& [name, _] : f) {
    if (!is_grid_factor(name)) throw UsageError("unknown grid factor '" + name + "'");
  }
  auto get = [&](const char* name) -> std::optional<std::string> {
    auto it = f.find(name);
    if (it == f.end()) return std::nullopt;
    return it->second;
  };

  PipelineSettings s;
  PyramidConfig seed;
  if (auto p = get("preset")) seed = PyramidConfig::preset(*p);

  int levels = seed.levels();
  if (auto v = get("scales")) {
    try {
      levels = std::stoi(*v);
    } catch (const std::exception&) {
      throw UsageError("bad scales value '" + *v + "'");
    }
  }
  GridVersion version = seed.version;
  if (auto v = get("version")) {
    auto parsed = parse_grid_version(*v);
    if (!parsed) throw UsageError("unknown grid version '" + *v + "'");
    version = *parsed;
  }
  if (levels == 4 && version == GridVersion::none) version = GridVersion::v3;
  if (levels != 4 && !get("version")) version = GridVersion::none;

  auto cfg = PyramidConfig::with_scales(levels, version);
  const bool shape_changed = cfg.grids != seed.grids || cfg.version != seed.version;
  cfg.overlap_levels = shape_changed ? std::set<int>{} : seed.overlap_levels;
  cfg.weighted = seed.weighted;
  if (auto v = get("overlap")) cfg.overlap_levels = parse_overlap(*v);
  if (auto v = get("weighted")) cfg.weighted = parse_bool(*v, "weighted");
  if (auto v = get("pooling")) {
    auto p = parse_pooling(*v);
    if (!p) throw UsageError("unknown pooling '" + *v + "'");
    cfg.pooling = *p;
  }
  if (auto v = get("norm")) {
    auto n = parse_normalization(*v);
    if (!n) throw UsageError("unknown norm '" + *v + "'");
    cfg.norm = *n;
  }
  if (auto v = get("region_norm")) {
    auto r = parse_region_norm(*v);
    if (!r) throw UsageError("unknown region_norm '" + *v + "'");
    cfg.region_norm = *r;
  }
  cfg.validate();
  s.pyramid = cfg;

  if (auto v = get("layer")) s.layer = *v;
  if (auto v = get("whiten_source")) s.whiten_source = v->empty() ? "none" : *v;
  if (auto v = get("keep_dims")) {
    if (*v != "all") {
      try {
        const long k = std::stol(*v);
        if (k < 1) throw std::out_of_range(*v);
        s.keep_dims = static_cast<std::uint32_t>(k);
      } catch (const std::exception&) {
        throw UsageError("bad keep_dims value '" + *v + "'");
      }
    }
  }
  if (auto v = get("exclude_query")) s.exclude_query_image = parse_bool(*v, "exclude_query");
  return s;
}

struct GridSpec {
  std::filesystem::path dataset;
  std::filesystem::path output;
  /// Fixed factor values shared by every cell.
  FactorValues base;
  /// Swept factors, kept in kGridFactors order.
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;

  std::size_t cell_count() const {
    std::size_t n = 1;
    for (const auto& [_, values] : axes) n *= values.size();
    return n;
  }

  void add_axis(const std::string& name, std::vector<std::string> values) {
    if (!is_grid_factor(name)) throw UsageError("unknown grid factor '" + name + "'");
    if (values.empty()) throw UsageError("grid axis '" + name + "' has no values");
    for (auto& [n, v] : axes) {
      if (n == name) {
        v = std::move(values);
        return;
      }
    }
    axes.emplace_back(name, std::move(values));
    auto rank = [](const std::string& n) {
      return std::find(kGridFactors.begin(), kGridFactors.end(), n) - kGridFactors.begin();
    };
    std::stable_sort(axes.begin(), axes.end(),
                     [&](const auto& a, const auto& b) { return rank(a.first) < rank(b.first); });
  }

  /// Factor assignment of cell `i`; the last axis varies fastest.
  FactorValues cell(std::size_t i) const {
    FactorValues f = base;
    for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
      const auto& values = it->second;
      f[it->first] = values[i % values.size()];
      i /= values.size();
    }
    return f;
  }

  /// {"dataset": ..., "output": ..., "base": {factor: value},
  ///  "axes": {factor: [values]}}. Relative paths resolve against base_dir.
  static GridSpec from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
    std::vector<std::string> problems;
    GridSpec spec;
    auto scalar = [](const nlohmann::json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
      return v.dump();
    };
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    };
    if (!doc.is_object()) throw ValidationError({"grid spec must be a JSON object"});
    if (doc.contains("dataset") && doc["dataset"].is_string()) {
      spec.dataset = resolve(doc["dataset"].get<std::string>());
    }
    if (doc.contains("output") && doc["output"].is_string()) {
      spec.output = resolve(doc["output"].get<std::string>());
    }
    if (doc.contains("base")) {
      for (const auto& [name, v] : doc["base"].items()) {
        if (!is_grid_factor(name)) problems.push_back("unknown base factor '" + name + "'");
        spec.base[name] = scalar(v);
      }
    }
    if (doc.contains("axes")) {
      for (const auto& [name, list] : doc["axes"].items()) {
        if (!list.is_array()) {
          problems.push_back("axis '" + name + "' must be an array");
          continue;
        }
        std::vector<std::string> values;
        for (const auto& v : list) values.push_back(scalar(v));
        try {
          spec.add_axis(name, std::move(values));
        } catch (const UsageError& e) {
          problems.emplace_back(e.what());
        }
      }
    }
    if (!problems.empty()) throw ValidationError(std::move(problems));
    return spec;
  }
};

struct GridCell {
  FactorValues factors;
  std::string fingerprint;
  std::optional<EvalReport> report;
  std::string error;

  bool ok() const { return report.has_value(); }
};

struct GridResult {
  std::vector<std::string> axis_names;
  std::vector<GridCell> cells;

  bool ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const auto& c) { return c.ok(); });
  }

  std::string metric_name() const {
    for (const auto& c : cells) {
      if (c.report) return c.report->metric_name();
    }
    return "metric";
  }

  /// One row per cell: swept factor values, metric (or the error), fingerprint.
  std::string to_table() const {
    std::vector<std::string> header{"#"};
    header.insert(header.end(), axis_names.begin(), axis_names.end());
    header.push_back(metric_name());
    header.emplace_back("config");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      std::vector<std::string> row{std::to_string(i)};
      for (const auto& a : axis_names) row.push_back(c.factors.at(a));
      if (c.report) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << c.report->aggregate;
        row.push_back(os.str());
      } else {
        row.push_back("ERROR: " + c.error);
      }
      row.push_back(c.fingerprint);
      rows.push_back(std::move(row));
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t j = 0; j < header.size(); ++j) width[j] = header[j].size();
    for (const auto& row : rows) {
      for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
    }
    std::ostringstream os;
    auto emit = [&](const std::vector<std::string>& row) {
      for (std::size_t j = 0; j + 1 < row.size(); ++j) {
        os << std::left << std::setw(static_cast<int>(width[j])) << row[j] << "  ";
      }
      os << row.back() << '\n';
    };
    emit(header);
    for (const auto& row : rows) emit(row);
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["axes"] = axis_names;
    doc["ok"] = ok();
    auto& jc = doc["cells"] = nlohmann::json::array();
    for (const auto& c : cells) {
      nlohmann::json j;
      j["factors"] = c.factors;
      j["config_fingerprint"] = c.fingerprint;
      if (c.report) {
        j["metric"] = c.report->metric_name();
        j["value"] = c.report->aggregate;
        j["report"] = c.report->to_json();
      } else {
        j["error"] = c.error;
      }
      jc.push_back(std::move(j));
    }
    return doc;
  }
};

/// Evaluates every cell; failures become error cells and the run continues.
/// Cells run in parallel, results keep cell order.
inline GridResult run_grid(const GridSpec& spec, unsigned threads = 0) {
  if (spec.dataset.empty()) throw UsageError("grid spec needs a dataset manifest");
  GridResult result;
  for (const auto& [name, _] : spec.axes) result.axis_names.push_back(name);
  result.cells.resize(spec.cell_count());
  log::info("grid: " + std::to_string(result.cells.size()) + " cells");

  PipelineCache cache(1);
  parallel_for(result.cells.size(), threads, [&](std::size_t i) {
    auto& cell = result.cells[i];
    cell.factors = spec.cell(i);
    try {
      const auto settings = settings_from_factors(cell.factors);
      cell.fingerprint = settings.fingerprint();
      cell.report = run_pipeline(spec.dataset, settings, cache, 1);
    } catch (const std::exception& e) {
      cell.error = e.what();
      std::replace(cell.error.begin(), cell.error.end(), '\n', ' ');
      if (cell.fingerprint.empty()) {
        for (const auto& [k, v] : cell.factors) cell.fingerprint += k + "=" + v + ";";
      }
    }
  });
  return result;
}

inline void write_grid_outputs(const GridResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "grid.json", result.to_json().dump(2) + "\n");
  detail::write_file(dir / "grid.txt", result.to_table());
}

}  // namespace msret
