// msret: multi-scale CNN descriptor aggregation and retrieval experiments.
//
//   msret aggregate        feature dumps -> .desc
//   msret fit-whiten       .desc -> .whtn
//   msret apply-whiten     .desc + .whtn -> .desc
//   msret evaluate         .desc files + manifest -> report
//   msret grid             factor sweep over a manifest
//   msret import-oxford-gt Oxford/Paris ground-truth files -> manifest
//
// Exit status: 0 success, 1 runtime/validation failure or grid error cells,
// 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msret/msret.hpp"

namespace fs = std::filesystem;
using namespace msret;

namespace {

struct GlobalOptions {
  unsigned threads = 0;
  bool verbose = false;
};

std::pair<std::string, std::string> split_assignment(const std::string& text, const char* flag) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError(std::string(flag) + " expects name=value, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    out.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

// Descriptor files carry no metadata, so each output gets a sidecar
// `<file>.meta.json` recording the layer and configuration fingerprint.
fs::path meta_path(const fs::path& desc) { return fs::path(desc.string() + ".meta.json"); }

void write_meta(const fs::path& desc, const DescriptorSet& ds, const std::string& fingerprint) {
  nlohmann::json meta{{"layer", ds.layer()},
                      {"count", ds.size()},
                      {"dim", ds.dim()},
                      {"config_fingerprint", fingerprint}};
  std::ofstream(meta_path(desc)) << meta.dump(2) << '\n';
}

std::string read_fingerprint(const fs::path& desc) {
  std::ifstream in(meta_path(desc));
  if (!in) return "file=" + desc.filename().string();
  try {
    const auto meta = nlohmann::json::parse(in);
    return meta.value("config_fingerprint", "file=" + desc.filename().string());
  } catch (const nlohmann::json::exception&) {
    return "file=" + desc.filename().string();
  }
}

// ---------------------------------------------------------------------------

struct AggregateOptions {
  std::string manifest, layer, out;
  std::string preset;
  int scales = 1;
  std::string grid_version, overlap = "none", pooling = "max", norm = "l2", region_norm = "none";
  bool weighted = false;
};

PyramidConfig pyramid_from(const AggregateOptions& o, const CLI::App& cmd) {
  FactorValues f;
  if (!o.preset.empty()) f["preset"] = o.preset;
  if (o.preset.empty() || cmd.count("--scales") != 0) f["scales"] = std::to_string(o.scales);
  if (!o.grid_version.empty()) f["version"] = o.grid_version;
  if (o.preset.empty() || cmd.count("--overlap") != 0) f["overlap"] = o.overlap;
  if (o.preset.empty() || cmd.count("--weighted") != 0) f["weighted"] = o.weighted ? "1" : "0";
  f["pooling"] = o.pooling;
  f["norm"] = o.norm;
  f["region_norm"] = o.region_norm;
  return settings_from_factors(f).pyramid;
}

int run_aggregate(const AggregateOptions& o, const CLI::App& cmd, const GlobalOptions& g) {
  const auto cfg = pyramid_from(o, cmd);
  const auto manifest = read_manifest(o.manifest);
  const auto ds = batch_descriptors(manifest, o.layer, cfg, g.threads);
  write_descriptor_set(ds, o.out);
  const auto fp = "layer=" + o.layer + ";" + cfg.fingerprint();
  write_meta(o.out, ds, fp);
  std::cout << "wrote " << ds.size() << " descriptors, dim " << ds.dim() << " -> " << o.out << '\n'
            << "config " << fp << '\n';
  return 0;
}

struct FitOptions {
  std::string train, out, manifest;
  double epsilon = kDefaultWhiteningEpsilon;
};

int run_fit(const FitOptions& o) {
  auto ds = read_descriptor_set(o.train);
  if (!o.manifest.empty()) ds = database_subset(ds, read_manifest(o.manifest));
  const auto model = fit_whitening(ds, o.epsilon);
  write_whitening_model(model, o.out);
  std::cout << "fitted whitening on " << ds.size() << " descriptors, dim " << model.input_dim
            << " -> " << o.out << '\n';
  return 0;
}

struct ApplyOptions {
  std::string model, in, out;
  std::uint32_t keep = 0;
};

int run_apply(const ApplyOptions& o, const GlobalOptions& g) {
  const auto model = read_whitening_model(o.model);
  const auto ds = read_descriptor_set(o.in);
  const std::uint32_t keep = o.keep == 0 ? model.input_dim : o.keep;
  const auto out = apply_whitening(model, ds, keep, g.threads);
  write_descriptor_set(out, o.out);
  const auto fp = read_fingerprint(o.in) + ";whiten=" + fs::path(o.model).filename().string() +
                  ";keep=" + std::to_string(keep);
  write_meta(o.out, out, fp);
  std::cout << "whitened " << out.size() << " descriptors to dim " << keep << " -> " << o.out
            << '\n';
  return 0;
}

struct EvaluateOptions {
  std::string manifest;
  std::vector<std::string> descs;
  std::string layer, ensemble, protocol, out, table;
  bool exclude_query = false;
};

int run_evaluate(const EvaluateOptions& o, const GlobalOptions& g) {
  std::optional<EnsembleSpec> spec;
  if (!o.ensemble.empty()) spec = EnsembleSpec::parse(o.ensemble);

  auto manifest = read_manifest(o.manifest);
  if (!o.protocol.empty()) {
    auto p = parse_protocol(o.protocol);
    if (!p) throw UsageError("unknown protocol '" + o.protocol + "'");
    manifest.protocol = *p;
  }

  std::map<std::string, fs::path> files;
  for (const auto& d : o.descs) {
    auto [layer, path] = split_assignment(d, "--desc");
    files[layer] = path;
  }
  std::vector<std::string> layers;
  if (spec) {
    std::vector<std::string> missing;
    for (const auto& m : spec->members) {
      layers.push_back(m.layer);
      if (files.count(m.layer) == 0) missing.push_back(m.layer);
    }
    if (!missing.empty()) {
      std::string msg = "ensemble needs descriptors for layer(s):";
      for (const auto& l : missing) msg += " " + l;
      throw UsageError(msg + " (pass --desc LAYER=FILE)");
    }
  } else if (!o.layer.empty()) {
    if (files.count(o.layer) == 0) throw UsageError("no --desc given for layer '" + o.layer + "'");
    layers.push_back(o.layer);
  } else if (files.size() == 1) {
    layers.push_back(files.begin()->first);
  } else {
    throw UsageError("several --desc files given; choose one with --layer or fuse with --ensemble");
  }

  std::map<std::string, DescriptorSet> all;
  std::map<std::string, Index> indexes;
  std::string fingerprint;
  for (const auto& layer : layers) {
    auto ds = read_descriptor_set(files.at(layer), layer);
    indexes.emplace(layer, build_index(database_subset(ds, manifest)));
    if (!fingerprint.empty()) fingerprint += " | ";
    fingerprint += read_fingerprint(files.at(layer));
    all.emplace(layer, std::move(ds));
  }

  QueryResults results;
  if (spec) {
    results = rank_queries_ensemble(manifest, indexes, all, *spec, o.exclude_query, g.threads);
    fingerprint = "ensemble=" + spec->to_string() + " | " + fingerprint;
  } else {
    const auto& layer = layers.front();
    results = rank_queries(manifest, indexes.at(layer), all.at(layer), o.exclude_query, g.threads);
  }
  fingerprint += std::string(";exclude_query=") + (o.exclude_query ? "1" : "0");

  auto report = evaluate(results, manifest);
  report.config_fingerprint = fingerprint;
  if (!o.out.empty()) report.write_json(o.out);
  if (!o.table.empty()) report.write_table(o.table);
  std::cout << report.to_table();
  return 0;
}

struct GridOptions {
  std::string spec, manifest, out;
  std::vector<std::string> axes, base;
};

int run_grid_cmd(const GridOptions& o, const GlobalOptions& g) {
  GridSpec spec;
  if (!o.spec.empty()) {
    std::ifstream in(o.spec);
    if (!in) throw IoError("cannot open '" + o.spec + "'");
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError({o.spec + ": malformed JSON: " + e.what()});
    }
    spec = GridSpec::from_json(doc, fs::path(o.spec).parent_path());
  }
  if (!o.manifest.empty()) spec.dataset = o.manifest;
  if (!o.out.empty()) spec.output = o.out;
  for (const auto& b : o.base) {
    auto [name, value] = split_assignment(b, "--base");
    if (!is_grid_factor(name)) throw UsageError("unknown grid factor '" + name + "'");
    spec.base[name] = value;
  }
  for (const auto& a : o.axes) {
    auto [name, values] = split_assignment(a, "--axis");
    // Overlap values contain commas themselves; use '+' inside them (s2+s3).
    spec.add_axis(name, split_list(values));
  }
  if (spec.dataset.empty()) throw UsageError("grid needs a dataset (--manifest or spec 'dataset')");
  if (spec.output.empty()) throw UsageError("grid needs an output directory (--out or spec 'output')");

  std::cout << "grid: " << spec.cell_count() << " cell(s)\n";
  const auto result = run_grid(spec, g.threads);
  write_grid_outputs(result, spec.output);
  std::cout << result.to_table();
  std::cout << "reports written to " << spec.output.string() << '\n';
  return result.ok() ? 0 : 1;
}

struct ImportOptions {
  std::string gt_dir, out, image_list;
  std::vector<std::string> features, crop_features;
};

int run_import(const ImportOptions& o) {
  OxfordManifestOptions opts;
  for (const auto& f : o.features) {
    auto [layer, dir] = split_assignment(f, "--features");
    opts.feature_dirs[layer] = dir;
  }
  for (const auto& f : o.crop_features) {
    auto [layer, dir] = split_assignment(f, "--crop-features");
    opts.crop_dirs[layer] = dir;
  }
  if (!o.image_list.empty()) {
    std::ifstream in(o.image_list);
    if (!in) throw IoError("cannot open '" + o.image_list + "'");
    std::string id;
    while (in >> id) opts.image_ids.push_back(id);
  }
  auto queries = import_oxford_ground_truth(o.gt_dir);
  const auto nq = queries.size();
  const auto manifest = build_oxford_manifest(std::move(queries), opts);
  write_manifest(manifest, o.out);
  std::cout << "imported " << nq << " queries over " << manifest.images.size() << " images -> "
            << o.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale CNN descriptor aggregation and instance-retrieval experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  app.add_flag("--verbose,-v", g.verbose, "Print progress information");

  AggregateOptions agg;
  auto* agg_cmd = app.add_subcommand("aggregate", "Aggregate feature dumps into descriptors");
  agg_cmd->add_option("--manifest", agg.manifest, "Dataset manifest")->required();
  agg_cmd->add_option("--layer", agg.layer, "Layer name, e.g. conv5_4")->required();
  agg_cmd->add_option("--out", agg.out, "Output .desc file")->required();
  agg_cmd->add_option("--preset", agg.preset, "Named pyramid (a1..c8)");
  agg_cmd->add_option("--scales", agg.scales, "Pyramid levels L");
  agg_cmd->add_option("--grid-version", agg.grid_version, "4-scale grid version: v1, v2, v3");
  agg_cmd->add_option("--overlap", agg.overlap, "Overlapping levels: none, s2, s3, s2,s3");
  agg_cmd->add_flag("--weighted", agg.weighted, "Weight levels coarse-to-fine (1/2^...)");
  agg_cmd->add_option("--pooling", agg.pooling, "sum or max");
  agg_cmd->add_option("--norm", agg.norm, "l2 or l1 (RootSIFT-style)");
  agg_cmd->add_option("--region-norm", agg.region_norm, "none or l2 per region before summing");

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit-whiten", "Learn PCA whitening from descriptors");
  fit_cmd->add_option("--train", fit.train, "Training .desc file")->required();
  fit_cmd->add_option("--out", fit.out, "Output .whtn model")->required();
  fit_cmd->add_option("--manifest", fit.manifest, "Restrict training to this manifest's database images");
  fit_cmd->add_option("--epsilon", fit.epsilon, "Eigenvalue regularizer");

  ApplyOptions apply;
  auto* apply_cmd = app.add_subcommand("apply-whiten", "Whiten, truncate and re-normalize descriptors");
  apply_cmd->add_option("--model", apply.model, ".whtn model")->required();
  apply_cmd->add_option("--in", apply.in, "Input .desc")->required();
  apply_cmd->add_option("--out", apply.out, "Output .desc")->required();
  apply_cmd->add_option("--keep", apply.keep, "Retained components (default: all)");

  EvaluateOptions ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Run all manifest queries and score them");
  ev_cmd->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  ev_cmd->add_option("--desc", ev.descs, "LAYER=FILE descriptor set (repeatable)")->required();
  ev_cmd->add_option("--layer", ev.layer, "Layer to evaluate when several --desc are given");
  ev_cmd->add_option("--ensemble", ev.ensemble, "Score fusion, e.g. conv5_4:0.5,fc6-conv:0.5");
  ev_cmd->add_option("--protocol", ev.protocol, "Override manifest protocol: oxford or ukb");
  ev_cmd->add_flag("--exclude-query", ev.exclude_query, "Drop the query image from its own ranking");
  ev_cmd->add_option("--out", ev.out, "JSON report path");
  ev_cmd->add_option("--table", ev.table, "Plain-text report path");

  GridOptions grid;
  auto* grid_cmd = app.add_subcommand("grid", "Sweep pipeline factors over a dataset");
  grid_cmd->add_option("--spec", grid.spec, "Grid spec JSON");
  grid_cmd->add_option("--manifest", grid.manifest, "Dataset manifest (overrides spec)");
  grid_cmd->add_option("--out", grid.out, "Report directory (overrides spec)");
  grid_cmd->add_option("--axis", grid.axes, "factor=v1,v2,... (repeatable)");
  grid_cmd->add_option("--base", grid.base, "factor=value fixed for all cells (repeatable)");

  ImportOptions imp;
  auto* imp_cmd = app.add_subcommand("import-oxford-gt", "Convert Oxford/Paris ground truth to a manifest");
  imp_cmd->add_option("--gt-dir", imp.gt_dir, "Directory of *_query/good/ok/junk.txt")->required();
  imp_cmd->add_option("--out", imp.out, "Output manifest JSON")->required();
  imp_cmd->add_option("--features", imp.features, "LAYER=DIR holding <image>.fmap (repeatable)");
  imp_cmd->add_option("--crop-features", imp.crop_features,
                      "LAYER=DIR holding cropped-query dumps <query>.fmap (repeatable)");
  imp_cmd->add_option("--image-list", imp.image_list, "File with one database image id per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; every malformed command line is a usage error.
    return app.exit(e) == 0 ? 0 : 2;
  }
  log::set_level(g.verbose ? log::Level::info : log::Level::warning);

  try {
    if (*agg_cmd) return run_aggregate(agg, *agg_cmd, g);
    if (*fit_cmd) return run_fit(fit);
    if (*apply_cmd) return run_apply(apply, g);
    if (*ev_cmd) return run_evaluate(ev, g);
    if (*grid_cmd) return run_grid_cmd(grid, g);
    if (*imp_cmd) return run_import(imp);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
