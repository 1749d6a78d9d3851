// Writes a small synthetic dataset (feature dumps + manifest) with planted
// near-duplicate pairs, for trying out the msret pipeline without real data.

#include <iostream>

#include <CLI11.hpp>

#include "msret/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic planted-pairs feature-map dataset"};
  msret::synthetic::PlantedOptions opt;
  std::string out;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--images", opt.images, "Number of images");
  app.add_option("--pairs", opt.pairs, "Planted near-duplicate pairs");
  app.add_option("--channels", opt.channels, "Channels K");
  app.add_option("--height", opt.height, "Map height H");
  app.add_option("--width", opt.width, "Map width W");
  app.add_option("--sigma", opt.noise_sigma, "Noise std-dev for planted partners");
  app.add_option("--seed", opt.seed, "RNG seed");
  app.add_option("--layer", opt.layer, "Layer name used in the manifest");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto m = msret::synthetic::write_planted_dataset(out, opt);
    std::cout << "wrote " << m.images.size() << " images, " << m.queries.size()
              << " queries -> " << out << "/manifest.json\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
