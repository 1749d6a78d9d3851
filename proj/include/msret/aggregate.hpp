#pragma once

// Region pooling of feature maps and vector normalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msret/errors.hpp"
#include "msret/tensor_io.hpp"

namespace msret {

enum class Pooling { sum, max };

inline std::string_view to_string(Pooling p) { return p == Pooling::sum ? "sum" : "max"; }

inline std::optional<Pooling> parse_pooling(std::string_view s) {
  if (s == "sum") return Pooling::sum;
  if (s == "max") return Pooling::max;
  return std::nullopt;
}

/// Half-open rectangle [row_start, row_end) x [col_start, col_end) in
/// feature-map cells.
struct Region {
  std::uint32_t row_start = 0;
  std::uint32_t row_end = 0;
  std::uint32_t col_start = 0;
  std::uint32_t col_end = 0;

  std::uint32_t rows() const noexcept { return row_end - row_start; }
  std::uint32_t cols() const noexcept { return col_end - col_start; }
  bool contains(std::uint32_t r, std::uint32_t c) const noexcept {
    return r >= row_start && r < row_end && c >= col_start && c < col_end;
  }
  friend bool operator==(const Region&, const Region&) = default;

  static Region whole(const FeatureMaps& fm) { return {0, fm.height, 0, fm.width}; }
};

/// One pooled value per channel.
struct RawDescriptor {
  std::vector<float> values;
  Pooling pooling = Pooling::max;
};

inline void check_region(const FeatureMaps& fm, const Region& r) {
  if (!(r.row_start < r.row_end && r.row_end <= fm.height && r.col_start < r.col_end &&
        r.col_end <= fm.width)) {
    throw BoundsError("region rows [" + std::to_string(r.row_start) + "," +
                      std::to_string(r.row_end) + ") cols [" + std::to_string(r.col_start) +
                      "," + std::to_string(r.col_end) + ") invalid for " +
                      std::to_string(fm.height) + "x" + std::to_string(fm.width) +
                      " feature map");
  }
}

/// Sum- or max-pools each channel over `r`. Sums accumulate in double and
/// round once to float.
inline RawDescriptor pool_region(const FeatureMaps& fm, const Region& r, Pooling pooling) {
  check_region(fm, r);
  RawDescriptor out;
  out.pooling = pooling;
  out.values.resize(fm.channels);
  for (std::uint32_t k = 0; k < fm.channels; ++k) {
    const auto plane = fm.channel(k);
    if (pooling == Pooling::sum) {
      double acc = 0.0;
      for (auto h = r.row_start; h < r.row_end; ++h) {
        const float* row = plane.data() + static_cast<std::size_t>(h) * fm.width;
        for (auto w = r.col_start; w < r.col_end; ++w) acc += row[w];
      }
      out.values[k] = static_cast<float>(acc);
    } else {
      float best = -std::numeric_limits<float>::infinity();
      for (auto h = r.row_start; h < r.row_end; ++h) {
        const float* row = plane.data() + static_cast<std::size_t>(h) * fm.width;
        for (auto w = r.col_start; w < r.col_end; ++w) best = std::max(best, row[w]);
      }
      out.values[k] = best;
    }
  }
  return out;
}

inline RawDescriptor pool_full(const FeatureMaps& fm, Pooling pooling) {
  return pool_region(fm, Region::whole(fm), pooling);
}

namespace detail {

template <typename T>
double l2_norm(std::span<const T> v) {
  double ss = 0.0;
  for (T x : v) ss += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(ss);
}

template <typename Out, typename In>
std::vector<Out> l2_normalized(std::span<const In> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw DegenerateInputError("cannot l2-normalize a zero (or non-finite) vector");
  }
  std::vector<Out> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<Out>(v[i] / n);
  return out;
}

template <typename Out, typename In>
std::vector<Out> rootsift_normalized(std::span<const In> v) {
  double l1 = 0.0;
  for (In x : v) {
    if (x < 0) throw DomainError("RootSIFT normalization requires non-negative components");
    l1 += static_cast<double>(x);
  }
  if (!(l1 > 0.0) || !std::isfinite(l1)) {
    throw DegenerateInputError("cannot l1-normalize a zero (or non-finite) vector");
  }
  std::vector<Out> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<Out>(std::sqrt(v[i] / l1));
  return out;
}

}  // namespace detail

/// v / ||v||_2. Throws DegenerateInputError for an all-zero vector.
inline std::vector<float> normalize_l2(std::span<const float> v) {
  return detail::l2_normalized<float>(v);
}

/// sqrt(v / ||v||_1), element-wise. The result has unit l2 norm.
inline std::vector<float> normalize_rootsift(std::span<const float> v) {
  return detail::rootsift_normalized<float>(v);
}

/// Final-stage normalization choice ("norm" factor: l2 or RootSIFT-style l1).
enum class Normalization { l2, l1 };

inline std::string_view to_string(Normalization n) { return n == Normalization::l2 ? "l2" : "l1"; }

inline std::optional<Normalization> parse_normalization(std::string_view s) {
  if (s == "l2") return Normalization::l2;
  if (s == "l1" || s == "rootsift") return Normalization::l1;
  return std::nullopt;
}

inline std::vector<float> normalize(std::span<const float> v, Normalization n) {
  return n == Normalization::l2 ? normalize_l2(v) : normalize_rootsift(v);
}

}  // namespace msret
