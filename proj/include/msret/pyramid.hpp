#pragma once

// Multi-scale region pyramids over feature maps.
//
// Level l splits the map into N_l x N_l regions; level 1 is always the whole
// map. A level either partitions the map evenly (boundary j at floor(j*H/N))
// or, for the overlapping variants, uses a fixed table of fractional slices
// mapped to cells with start = floor(a*H), end = ceil(b*H). The same slices
// apply to rows and columns.
//
// Descriptor assembly: pool every region, optionally l2-normalize each region
// vector, sum them, normalize the sum to get the level vector f^l, then
// normalize sum_l w_l * f^l. Output dimensionality is always K.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "msret/aggregate.hpp"
#include "msret/errors.hpp"
#include "msret/log.hpp"
#include "msret/manifest.hpp"
#include "msret/parallel.hpp"
#include "msret/tensor_io.hpp"

namespace msret {

/// Region-count variant of a 4-level pyramid.
enum class GridVersion { none, v1, v2, v3 };

inline std::string_view to_string(GridVersion v) {
  switch (v) {
    case GridVersion::v1: return "v1";
    case GridVersion::v2: return "v2";
    case GridVersion::v3: return "v3";
    case GridVersion::none: break;
  }
  return "none";
}

inline std::optional<GridVersion> parse_grid_version(std::string_view s) {
  if (s == "none" || s == "-") return GridVersion::none;
  if (s == "v1") return GridVersion::v1;
  if (s == "v2") return GridVersion::v2;
  if (s == "v3") return GridVersion::v3;
  return std::nullopt;
}

/// Finest grid of a 4-level pyramid for each version: 4x4, 5x5, 6x6.
inline std::uint32_t finest_grid(GridVersion v) {
  switch (v) {
    case GridVersion::v1: return 4;
    case GridVersion::v2: return 5;
    case GridVersion::v3: return 6;
    case GridVersion::none: break;
  }
  throw UsageError("4-level pyramids need a grid version (v1, v2 or v3)");
}

enum class RegionNorm { none, l2 };

inline std::string_view to_string(RegionNorm r) { return r == RegionNorm::none ? "none" : "l2"; }

inline std::optional<RegionNorm> parse_region_norm(std::string_view s) {
  if (s == "none") return RegionNorm::none;
  if (s == "l2") return RegionNorm::l2;
  return std::nullopt;
}

/// Exact rational in [0, 1].
struct Fraction {
  std::uint32_t num;
  std::uint32_t den;
};

/// Fractional interval (a, b) of the map height or width.
struct Slice {
  Fraction a;
  Fraction b;
};

struct PyramidConfig {
  /// N_l for l = 1..L.
  std::vector<std::uint32_t> grids{1};
  /// Levels using overlapping slices; subset of {2, 3}.
  std::set<int> overlap_levels;
  GridVersion version = GridVersion::none;
  bool weighted = false;
  Pooling pooling = Pooling::max;
  RegionNorm region_norm = RegionNorm::none;
  Normalization norm = Normalization::l2;

  int levels() const noexcept { return static_cast<int>(grids.size()); }
  bool overlaps(int level) const { return overlap_levels.count(level) != 0; }

  /// Grids {1..L}, or {1,2,3,N} for L = 4 where N comes from `version`.
  static PyramidConfig with_scales(int levels, GridVersion version = GridVersion::none) {
    if (levels < 1) throw UsageError("scales must be >= 1");
    PyramidConfig cfg;
    cfg.grids.clear();
    for (int l = 1; l <= levels; ++l) cfg.grids.push_back(static_cast<std::uint32_t>(l));
    if (levels == 4) {
      cfg.version = version;
      cfg.grids[3] = finest_grid(version);
    } else if (version != GridVersion::none) {
      throw UsageError("grid version " + std::string(to_string(version)) +
                       " only applies to 4 scales");
    }
    return cfg;
  }

  /// Named rows of the multi-scale comparison (a1, a2, b1..b3, c1..c8).
  /// All use max pooling with l2 normalization.
  static PyramidConfig preset(std::string_view name) {
    struct Row {
      std::string_view name;
      int levels;
      std::set<int> overlap;
      bool weighted;
      GridVersion version;
    };
    using GV = GridVersion;
    static const std::array<Row, 13> rows{{
        {"a1", 2, {}, false, GV::none},     {"a2", 2, {}, true, GV::none},
        {"b1", 3, {}, false, GV::none},     {"b2", 3, {}, true, GV::none},
        {"b3", 3, {2}, false, GV::none},    {"c1", 4, {3}, false, GV::v1},
        {"c2", 4, {3}, true, GV::v1},       {"c3", 4, {2, 3}, false, GV::v1},
        {"c4", 4, {2, 3}, false, GV::v2},   {"c5", 4, {2, 3}, true, GV::v2},
        {"c6", 4, {}, false, GV::v3},       {"c7", 4, {3}, false, GV::v3},
        {"c8", 4, {2, 3}, false, GV::v3},
    }};
    for (const auto& row : rows) {
      if (row.name == name) {
        auto cfg = with_scales(row.levels, row.version);
        cfg.overlap_levels = row.overlap;
        cfg.weighted = row.weighted;
        return cfg;
      }
    }
    throw UsageError("unknown pyramid preset '" + std::string(name) + "'");
  }

  static std::vector<std::string> preset_names() {
    return {"a1", "a2", "b1", "b2", "b3", "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8"};
  }

  /// 4 scales, v3 grids, overlap at levels 2 and 3, max pooling, l2, unweighted.
  static PyramidConfig proposed() { return preset("c8"); }

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    const int L = levels();
    if (L < 1) {
      out.emplace_back("at least one level is required");
      return out;
    }
    if (grids[0] != 1) out.emplace_back("level 1 must be a single whole-map region");
    for (auto n : grids) {
      if (n == 0) out.emplace_back("grid sizes must be >= 1");
    }
    if ((version != GridVersion::none) != (L == 4)) {
      out.emplace_back("grid version is required for, and only for, 4 scales");
    }
    if (L == 4 && version != GridVersion::none) {
      const std::vector<std::uint32_t> expect{1, 2, 3, finest_grid(version)};
      if (grids != expect) out.emplace_back("4-scale grids must match the grid version");
    }
    for (int lvl : overlap_levels) {
      const bool allowed = (L == 3 && lvl == 2) || (L == 4 && (lvl == 2 || lvl == 3));
      if (!allowed) {
        out.push_back("overlap at level " + std::to_string(lvl) + " is not defined for " +
                      std::to_string(L) + " scales");
      }
    }
    if (L == 3 && !overlap_levels.empty() && grids != std::vector<std::uint32_t>{1, 2, 3}) {
      out.emplace_back("3-scale overlap requires grids {1,2,3}");
    }
    return out;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ValidationError(std::move(p));
  }

  std::string overlap_string() const {
    if (overlap_levels.empty()) return "none";
    std::string s;
    for (int l : overlap_levels) {
      if (!s.empty()) s += '+';
      s += "s" + std::to_string(l);
    }
    return s;
  }

  /// Stable text encoding of every setting.
  std::string fingerprint() const {
    std::ostringstream os;
    os << "scales=" << levels() << ";grids=";
    for (std::size_t i = 0; i < grids.size(); ++i) os << (i ? "-" : "") << grids[i];
    os << ";version=" << to_string(version) << ";overlap=" << overlap_string()
       << ";weighted=" << (weighted ? 1 : 0) << ";pooling=" << to_string(pooling)
       << ";norm=" << to_string(norm) << ";region_norm=" << to_string(region_norm);
    return os.str();
  }

  friend bool operator==(const PyramidConfig&, const PyramidConfig&) = default;
};

/// Parses "none", "s2", "s3", "s2,s3" (or "s2+s3").
inline std::set<int> parse_overlap(std::string_view s) {
  std::set<int> out;
  if (s.empty() || s == "none" || s == "no") return out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto end = s.find_first_of(",+", pos);
    if (end == std::string_view::npos) end = s.size();
    const auto tok = s.substr(pos, end - pos);
    if (tok == "s2") {
      out.insert(2);
    } else if (tok == "s3") {
      out.insert(3);
    } else {
      throw UsageError("bad overlap level '" + std::string(tok) + "' (expected s2 or s3)");
    }
    pos = end + 1;
  }
  return out;
}

/// Overlapping slice set for `level`, or empty when the level partitions evenly.
inline std::vector<Slice> overlap_slices(const PyramidConfig& cfg, int level) {
  if (!cfg.overlaps(level)) return {};
  if (cfg.levels() == 3 && level == 2) return {{{0, 3}, {2, 3}}, {{1, 3}, {3, 3}}};
  if (cfg.levels() == 4) {
    switch (cfg.version) {
      case GridVersion::v1:
        if (level == 2) return {{{0, 4}, {3, 4}}, {{1, 4}, {4, 4}}};
        return {{{0, 4}, {2, 4}}, {{1, 4}, {3, 4}}, {{2, 4}, {4, 4}}};
      case GridVersion::v2:
        if (level == 2) return {{{0, 5}, {3, 5}}, {{2, 5}, {5, 5}}};
        return {{{0, 5}, {3, 5}}, {{1, 5}, {4, 5}}, {{2, 5}, {5, 5}}};
      case GridVersion::v3:
        if (level == 2) return {{{0, 6}, {4, 6}}, {{2, 6}, {6, 6}}};
        return {{{0, 6}, {3, 6}}, {{1, 6}, {4, 6}}, {{3, 6}, {6, 6}}};
      case GridVersion::none: break;
    }
  }
  throw ValidationError({"no overlap slices defined for level " + std::to_string(level) +
                         " of this pyramid"});
}

/// One axis interval [start, end) in cells.
struct Interval {
  std::uint32_t start;
  std::uint32_t end;
  friend bool operator==(const Interval&, const Interval&) = default;
};

inline std::vector<Interval> even_intervals(std::uint32_t length, std::uint32_t n) {
  std::vector<Interval> out;
  out.reserve(n);
  for (std::uint32_t j = 0; j < n; ++j) {
    const auto lo = static_cast<std::uint32_t>(static_cast<std::uint64_t>(j) * length / n);
    const auto hi = static_cast<std::uint32_t>(static_cast<std::uint64_t>(j + 1) * length / n);
    out.push_back({lo, hi});
  }
  return out;
}

inline std::vector<Interval> slice_intervals(std::uint32_t length, std::span<const Slice> slices) {
  std::vector<Interval> out;
  out.reserve(slices.size());
  for (const auto& s : slices) {
    const std::uint64_t lo = static_cast<std::uint64_t>(s.a.num) * length / s.a.den;
    const std::uint64_t hi =
        (static_cast<std::uint64_t>(s.b.num) * length + s.b.den - 1) / s.b.den;
    out.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi)});
  }
  return out;
}

namespace detail {

inline void warn_clamp_once(std::uint32_t n, std::uint32_t h, std::uint32_t w) {
  static std::mutex mutex;
  static std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> seen;
  {
    std::lock_guard lock(mutex);
    if (!seen.emplace(n, h, w).second) return;
  }
  log::warn("pyramid grid " + std::to_string(n) + "x" + std::to_string(n) + " exceeds " +
            std::to_string(h) + "x" + std::to_string(w) + " feature map; clamped to " +
            std::to_string(std::min({n, h, w})));
}

}  // namespace detail

/// Regions of one pyramid level (1-based) for an H x W map, row-major over
/// the (row slice, column slice) cross product.
inline std::vector<Region> region_grid(const PyramidConfig& cfg, int level, std::uint32_t height,
                                       std::uint32_t width) {
  if (level < 1 || level > cfg.levels()) {
    throw BoundsError("pyramid level " + std::to_string(level) + " outside [1, " +
                      std::to_string(cfg.levels()) + "]");
  }
  if (height == 0 || width == 0) throw BoundsError("feature map must be at least 1x1");
  const std::uint32_t n = cfg.grids[static_cast<std::size_t>(level - 1)];
  std::vector<Interval> rows, cols;
  if (n > height || n > width) {
    detail::warn_clamp_once(n, height, width);
    const auto m = std::min({n, height, width});
    rows = even_intervals(height, m);
    cols = even_intervals(width, m);
  } else if (cfg.overlaps(level)) {
    const auto slices = overlap_slices(cfg, level);
    rows = slice_intervals(height, slices);
    cols = slice_intervals(width, slices);
  } else {
    rows = even_intervals(height, n);
    cols = even_intervals(width, n);
  }
  std::vector<Region> out;
  out.reserve(rows.size() * cols.size());
  for (const auto& r : rows) {
    for (const auto& c : cols) out.push_back({r.start, r.end, c.start, c.end});
  }
  return out;
}

/// Per-level weights. Weighted: w_1 = 1/2^(L-1), w_i = 1/2^(L-i+1) for i >= 2
/// (coarse levels count less, total 1). Unweighted: all ones.
inline std::vector<double> scale_weights(int levels, bool weighted) {
  if (levels < 1) throw BoundsError("scale_weights needs L >= 1");
  std::vector<double> w(static_cast<std::size_t>(levels), 1.0);
  if (!weighted) return w;
  w[0] = std::ldexp(1.0, -(levels - 1));
  for (int i = 2; i <= levels; ++i) w[static_cast<std::size_t>(i - 1)] = std::ldexp(1.0, -(levels - i + 1));
  return w;
}

namespace detail {

inline std::vector<double> normalized_double(std::span<const double> v, Normalization n) {
  return n == Normalization::l2 ? l2_normalized<double>(v) : rootsift_normalized<double>(v);
}

}  // namespace detail

/// Multi-scale descriptor of one tensor (dimensionality K).
inline std::vector<float> multiscale_descriptor(const FeatureMaps& fm, const PyramidConfig& cfg) {
  cfg.validate();
  fm.validate();
  const int L = cfg.levels();

  // One level, one region: exactly the single-scale pool + normalize pipeline.
  if (L == 1) {
    auto pooled = pool_full(fm, cfg.pooling).values;
    if (cfg.region_norm == RegionNorm::l2) pooled = normalize_l2(pooled);
    return normalize(pooled, cfg.norm);
  }

  const auto weights = scale_weights(L, cfg.weighted);
  std::vector<double> combined(fm.channels, 0.0);
  std::vector<double> level_sum(fm.channels);
  for (int level = 1; level <= L; ++level) {
    std::fill(level_sum.begin(), level_sum.end(), 0.0);
    for (const auto& region : region_grid(cfg, level, fm.height, fm.width)) {
      auto pooled = pool_region(fm, region, cfg.pooling).values;
      if (cfg.region_norm == RegionNorm::l2) {
        try {
          pooled = normalize_l2(pooled);
        } catch (const DegenerateInputError&) {
          continue;  // all-zero region adds nothing to the sum
        }
      }
      for (std::size_t k = 0; k < pooled.size(); ++k) level_sum[k] += pooled[k];
    }
    const auto level_vec = detail::normalized_double(level_sum, cfg.norm);
    const double w = weights[static_cast<std::size_t>(level - 1)];
    for (std::size_t k = 0; k < combined.size(); ++k) combined[k] += w * level_vec[k];
  }
  const auto final_vec = detail::normalized_double(combined, cfg.norm);
  return {final_vec.begin(), final_vec.end()};
}

/// Descriptors for every manifest image at `layer`, in manifest order.
/// All missing feature files are reported together before any work starts.
inline DescriptorSet batch_descriptors(const DatasetManifest& manifest, const std::string& layer,
                                       const PyramidConfig& cfg, unsigned threads = 0) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::vector<fs::path> paths;
  std::vector<std::string> missing;
  paths.reserve(manifest.images.size());
  for (const auto& img : manifest.images) {
    auto p = manifest.feature_path(img, layer);
    if (!p || !fs::exists(*p)) {
      missing.push_back("image '" + img.id + "': no " + layer + " feature file" +
                        (p ? " at '" + p->string() + "'" : ""));
      paths.emplace_back();
    } else {
      paths.push_back(*p);
    }
  }
  if (!missing.empty()) throw ValidationError(std::move(missing));
  if (manifest.images.empty()) throw ValidationError({"manifest has no images"});

  std::vector<std::vector<float>> vecs(paths.size());
  parallel_for(paths.size(), threads, [&](std::size_t i) {
    const auto fm = read_feature_maps(paths[i]);
    try {
      vecs[i] = multiscale_descriptor(fm, cfg);
    } catch (const Error& e) {
      throw Error("image '" + manifest.images[i].id + "': " + e.what());
    }
  });

  const auto dim = static_cast<std::uint32_t>(vecs.front().size());
  DescriptorSet out(layer, dim);
  out.reserve(vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    if (vecs[i].size() != dim) {
      throw DimensionMismatch("image '" + manifest.images[i].id + "' has " +
                              std::to_string(vecs[i].size()) + " channels, expected " +
                              std::to_string(dim));
    }
    out.add(manifest.images[i].id, vecs[i]);
  }
  return out;
}

}  // namespace msret
