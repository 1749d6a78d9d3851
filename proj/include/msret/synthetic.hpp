#pragma once

// Seeded synthetic feature-map datasets with planted near-duplicates, for
// smoke tests and demos when real dumps are not at hand.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "msret/manifest.hpp"
#include "msret/tensor_io.hpp"

namespace msret::synthetic {

/// Non-negative tensor with per-channel gain, so channels differ in scale the
/// way real activations do.
inline FeatureMaps random_feature_maps(std::uint32_t k, std::uint32_t h, std::uint32_t w,
                                       std::mt19937_64& rng) {
  FeatureMaps fm(k, h, w);
  std::uniform_real_distribution<float> gain(0.2f, 2.0f);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (std::uint32_t c = 0; c < k; ++c) {
    const float g = gain(rng);
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x) fm.at(c, y, x) = g * unit(rng);
    }
  }
  return fm;
}

/// Copy of `fm` plus N(0, sigma) noise, clamped at zero.
inline FeatureMaps perturbed(const FeatureMaps& fm, double sigma, std::mt19937_64& rng) {
  FeatureMaps out = fm;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& v : out.data) v = static_cast<float>(std::max(0.0, v + noise(rng)));
  return out;
}

struct PlantedOptions {
  std::uint32_t images = 20;
  std::uint32_t pairs = 5;
  std::uint32_t channels = 32;
  std::uint32_t height = 12;
  std::uint32_t width = 12;
  double noise_sigma = 0.01;
  std::uint64_t seed = 7;
  std::string layer = "conv5_4";
};

/// Writes `images` .fmap files into `dir` plus `dir/manifest.json`. The first
/// 2*pairs images form near-duplicate pairs (img_000/img_001, ...); every
/// paired image is a query whose only positive is its partner.
inline DatasetManifest write_planted_dataset(const std::filesystem::path& dir,
                                             const PlantedOptions& opt) {
  if (2 * opt.pairs > opt.images) throw UsageError("more planted pairs than images");
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(opt.seed);
  DatasetManifest m;
  m.protocol = Protocol::oxford_map;
  m.base_dir = dir;
  auto name = [](std::uint32_t i) {
    std::string s = std::to_string(i);
    return "img_" + std::string(3 - std::min<std::size_t>(3, s.size()), '0') + s;
  };
  FeatureMaps previous;
  for (std::uint32_t i = 0; i < opt.images; ++i) {
    FeatureMaps fm;
    if (i < 2 * opt.pairs && i % 2 == 1) {
      fm = perturbed(previous, opt.noise_sigma, rng);
    } else {
      fm = random_feature_maps(opt.channels, opt.height, opt.width, rng);
    }
    const auto id = name(i);
    write_feature_maps(fm, dir / (id + ".fmap"));
    ImageEntry img;
    img.id = id;
    img.layers[opt.layer] = id + ".fmap";
    m.images.push_back(img);
    previous = std::move(fm);
  }
  for (std::uint32_t p = 0; p < opt.pairs; ++p) {
    const auto a = name(2 * p);
    const auto b = name(2 * p + 1);
    m.queries.push_back({"q_" + a, a, std::nullopt, {b}, {}, {}});
    m.queries.push_back({"q_" + b, b, std::nullopt, {a}, {}, {}});
  }
  validate_manifest(m);
  write_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace msret::synthetic
