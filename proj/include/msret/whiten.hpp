#pragma once

// PCA whitening learned from a reference descriptor set.
//
// .whtn layout: "WHTN", version byte (1), u32 input_dim D, then D mean floats,
// D eigenvalue floats, D*D projection floats (row-major, row j = axis j), and
// epsilon as one float64. All little-endian.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msret/aggregate.hpp"
#include "msret/detail/byte_io.hpp"
#include "msret/errors.hpp"
#include "msret/parallel.hpp"
#include "msret/tensor_io.hpp"

namespace msret {

inline constexpr std::string_view kWhtnMagic = "WHTN";
inline constexpr std::uint8_t kWhtnVersion = 1;
inline constexpr double kDefaultWhiteningEpsilon = 1e-10;

struct WhiteningModel {
  std::uint32_t input_dim = 0;
  std::vector<float> mean;
  /// Descending, non-negative.
  std::vector<float> eigenvalues;
  /// input_dim x input_dim, row j is the j-th principal axis.
  std::vector<float> projection;
  double epsilon = kDefaultWhiteningEpsilon;

  std::span<const float> axis(std::size_t j) const {
    return std::span<const float>(projection).subspan(j * input_dim, input_dim);
  }

  friend bool operator==(const WhiteningModel&, const WhiteningModel&) = default;
};

/// Fits mean, covariance (divisor n-1) and its eigen-decomposition. Each axis
/// is sign-fixed so that its largest-magnitude component is positive.
inline WhiteningModel fit_whitening(const DescriptorSet& train,
                                    double epsilon = kDefaultWhiteningEpsilon) {
  const std::size_t n = train.size();
  const std::size_t d = train.dim();
  if (n < 2) {
    throw InsufficientDataError("whitening needs at least 2 training descriptors, got " +
                                std::to_string(n));
  }
  if (!(epsilon > 0.0)) throw DomainError("whitening epsilon must be positive");
  for (float v : train.values()) {
    if (!std::isfinite(v)) throw DomainError("training descriptors contain non-finite values");
  }

  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = train.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("eigen-decomposition did not converge");
  const auto& values = solver.eigenvalues();   // ascending
  const auto& vectors = solver.eigenvectors();  // columns

  WhiteningModel model;
  model.input_dim = static_cast<std::uint32_t>(d);
  model.epsilon = epsilon;
  model.mean.resize(d);
  for (std::size_t j = 0; j < d; ++j) model.mean[j] = static_cast<float>(mu(static_cast<Eigen::Index>(j)));
  model.eigenvalues.resize(d);
  model.projection.resize(d * d);
  for (std::size_t r = 0; r < d; ++r) {
    const auto col = static_cast<Eigen::Index>(d - 1 - r);
    model.eigenvalues[r] = static_cast<float>(std::max(0.0, values(col)));
    Eigen::Index pivot = 0;
    vectors.col(col).cwiseAbs().maxCoeff(&pivot);
    const double sign = vectors(pivot, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      model.projection[r * d + j] =
          static_cast<float>(sign * vectors(static_cast<Eigen::Index>(j), col));
    }
  }
  return model;
}

/// Projected, whitened coordinates before the final normalization:
/// y_j = <axis_j, v - mean> / sqrt(eigenvalue_j + epsilon), j < keep.
inline std::vector<double> whiten_projection(const WhiteningModel& model,
                                             std::span<const float> v, std::uint32_t keep) {
  if (v.size() != model.input_dim) {
    throw DimensionMismatch("descriptor dim " + std::to_string(v.size()) +
                            " != whitening input dim " + std::to_string(model.input_dim));
  }
  if (keep < 1 || keep > model.input_dim) {
    throw BoundsError("keep = " + std::to_string(keep) + " outside [1, " +
                      std::to_string(model.input_dim) + "]");
  }
  std::vector<double> centered(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    centered[i] = static_cast<double>(v[i]) - static_cast<double>(model.mean[i]);
  }
  std::vector<double> y(keep);
  for (std::uint32_t j = 0; j < keep; ++j) {
    const auto axis = model.axis(j);
    double dot = 0.0;
    for (std::size_t i = 0; i < axis.size(); ++i) dot += static_cast<double>(axis[i]) * centered[i];
    y[j] = dot / std::sqrt(static_cast<double>(model.eigenvalues[j]) + model.epsilon);
  }
  return y;
}

/// Whitens, truncates to `keep` components and l2-normalizes.
inline std::vector<float> apply_whitening(const WhiteningModel& model, std::span<const float> v,
                                          std::uint32_t keep) {
  const auto y = whiten_projection(model, v, keep);
  return detail::l2_normalized<float>(std::span<const double>(y));
}

inline DescriptorSet apply_whitening(const WhiteningModel& model, const DescriptorSet& ds,
                                     std::uint32_t keep, unsigned threads = 0) {
  std::vector<std::vector<float>> out(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t i) {
    try {
      out[i] = apply_whitening(model, ds.row(i), keep);
    } catch (const DegenerateInputError& e) {
      throw DegenerateInputError("image '" + ds.id(i) + "': " + e.what());
    }
  });
  DescriptorSet result(ds.layer(), keep);
  result.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) result.add(ds.id(i), out[i]);
  return result;
}

inline std::string encode_whitening_model(const WhiteningModel& m) {
  const std::size_t d = m.input_dim;
  if (m.mean.size() != d || m.eigenvalues.size() != d || m.projection.size() != d * d) {
    throw ValidationError({"whitening model arrays do not match input_dim"});
  }
  detail::ByteWriter w;
  w.bytes(kWhtnMagic);
  w.u8(kWhtnVersion);
  w.u32(m.input_dim);
  w.f32s(m.mean);
  w.f32s(m.eigenvalues);
  w.f32s(m.projection);
  w.f64(m.epsilon);
  return w.take();
}

inline WhiteningModel decode_whitening_model(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(4, "magic") != kWhtnMagic) throw FormatError("magic", "bad magic");
  const auto version = r.u8("version");
  if (version != kWhtnVersion) {
    throw FormatError("version", "unsupported version " + std::to_string(version));
  }
  WhiteningModel m;
  m.input_dim = r.u32("input_dim");
  if (m.input_dim == 0) throw FormatError("input_dim", "whitening model declares input_dim = 0");
  const std::uint64_t d = m.input_dim;
  const std::uint64_t expected = (2 * d + d * d) * 4 + 8;
  if (r.remaining() < expected) {
    throw FormatError("payload", "truncated data: model needs " + std::to_string(expected) +
                                     " bytes, found " + std::to_string(r.remaining()));
  }
  if (r.remaining() > expected) throw FormatError("payload", "trailing bytes after payload");
  m.mean.resize(d);
  m.eigenvalues.resize(d);
  m.projection.resize(d * d);
  r.f32s(m.mean, "mean");
  r.f32s(m.eigenvalues, "eigenvalues");
  r.f32s(m.projection, "projection");
  m.epsilon = r.f64("epsilon");
  return m;
}

inline void write_whitening_model(const WhiteningModel& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_whitening_model(m));
}

inline WhiteningModel read_whitening_model(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_whitening_model(bytes);
  } catch (const FormatError& e) {
    throw FormatError(e.field(), path.string() + ": " + e.what());
  }
}

}  // namespace msret
