#pragma once

// End-to-end retrieval runs: descriptors -> optional whitening -> index ->
// ranked lists -> report.

#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msret/eval.hpp"
#include "msret/manifest.hpp"
#include "msret/parallel.hpp"
#include "msret/pyramid.hpp"
#include "msret/retrieval.hpp"
#include "msret/tensor_io.hpp"
#include "msret/whiten.hpp"

namespace msret {

/// Database part (non-external images) of a descriptor set covering a manifest.
inline DescriptorSet database_subset(const DescriptorSet& all, const DatasetManifest& manifest) {
  std::unordered_set<std::string> external;
  for (const auto& img : manifest.images) {
    if (img.external) external.insert(img.id);
  }
  return all.filter([&](const std::string& id) { return external.count(id) == 0; });
}

/// Ranks every manifest query against `index`. Query vectors come from `all`,
/// looked up by the query's image id.
inline QueryResults rank_queries(const DatasetManifest& manifest, const Index& index,
                                 const DescriptorSet& all, bool exclude_query_image,
                                 unsigned threads = 0) {
  std::vector<std::vector<std::string>> lists(manifest.queries.size());
  parallel_for(manifest.queries.size(), threads, [&](std::size_t i) {
    const auto& q = manifest.queries[i];
    std::optional<std::string_view> exclude;
    if (exclude_query_image) exclude = q.image_id;
    lists[i] = ranked_ids(query(index, all.at(q.image_id), exclude));
  });
  QueryResults out;
  for (std::size_t i = 0; i < lists.size(); ++i) {
    out.emplace(manifest.queries[i].query_id, std::move(lists[i]));
  }
  return out;
}

inline QueryResults rank_queries_ensemble(const DatasetManifest& manifest,
                                          const std::map<std::string, Index>& indexes,
                                          const std::map<std::string, DescriptorSet>& all,
                                          const EnsembleSpec& spec, bool exclude_query_image,
                                          unsigned threads = 0) {
  spec.validate();
  std::vector<std::string> missing;
  for (const auto& m : spec.members) {
    if (all.count(m.layer) == 0 || indexes.count(m.layer) == 0) {
      missing.push_back("no descriptors for ensemble layer '" + m.layer + "'");
    }
  }
  if (!missing.empty()) throw ValidationError(std::move(missing));

  std::vector<std::vector<std::string>> lists(manifest.queries.size());
  parallel_for(manifest.queries.size(), threads, [&](std::size_t i) {
    const auto& q = manifest.queries[i];
    std::map<std::string, std::vector<float>> qvecs;
    for (const auto& m : spec.members) {
      const auto v = all.at(m.layer).at(q.image_id);
      qvecs.emplace(m.layer, std::vector<float>(v.begin(), v.end()));
    }
    std::optional<std::string_view> exclude;
    if (exclude_query_image) exclude = q.image_id;
    lists[i] = ranked_ids(ensemble_query(indexes, qvecs, spec, exclude));
  });
  QueryResults out;
  for (std::size_t i = 0; i < lists.size(); ++i) {
    out.emplace(manifest.queries[i].query_id, std::move(lists[i]));
  }
  return out;
}

/// One point in the experiment space.
struct PipelineSettings {
  std::string layer = "conv5_4";
  PyramidConfig pyramid;
  /// "none", "self", or the path of another manifest to learn whitening from.
  std::string whiten_source = "none";
  /// Retained whitened components; empty keeps all.
  std::optional<std::uint32_t> keep_dims;
  bool exclude_query_image = false;

  std::string fingerprint() const {
    std::ostringstream os;
    os << "layer=" << layer << ';' << pyramid.fingerprint() << ";whiten=" << whiten_source
       << ";keep=" << (keep_dims ? std::to_string(*keep_dims) : std::string("all"))
       << ";exclude_query=" << (exclude_query_image ? 1 : 0);
    return os.str();
  }
};

/// Memoizes descriptor sets and whitening models across pipeline runs. Each
/// key is computed once even when requested concurrently.
class PipelineCache {
 public:
  explicit PipelineCache(unsigned threads = 1) : threads_(threads) {}

  std::shared_ptr<const DatasetManifest> manifest(const std::filesystem::path& path) {
    return memo<DatasetManifest>(manifests_, std::filesystem::absolute(path).lexically_normal().string(),
                                 [&] { return read_manifest(path); });
  }

  std::shared_ptr<const DescriptorSet> descriptors(const std::string& manifest_key,
                                                   const DatasetManifest& manifest,
                                                   const std::string& layer,
                                                   const PyramidConfig& cfg) {
    const auto key = manifest_key + "|" + layer + "|" + cfg.fingerprint();
    return memo<DescriptorSet>(descriptors_, key, [&] {
      return batch_descriptors(manifest, layer, cfg, threads_);
    });
  }

  std::shared_ptr<const WhiteningModel> whitening(const std::string& key,
                                                  const std::function<WhiteningModel()>& fit) {
    return memo<WhiteningModel>(models_, key, fit);
  }

 private:
  template <typename T>
  using Table = std::map<std::string, std::shared_future<std::shared_ptr<const T>>>;

  template <typename T, typename Make>
  std::shared_ptr<const T> memo(Table<T>& table, const std::string& key, Make&& make) {
    std::promise<std::shared_ptr<const T>> promise;
    std::shared_future<std::shared_ptr<const T>> fut;
    bool owner = false;
    {
      std::lock_guard lock(mutex_);
      auto it = table.find(key);
      if (it == table.end()) {
        fut = promise.get_future().share();
        table.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const T>(make()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return fut.get();
  }

  unsigned threads_;
  std::mutex mutex_;
  Table<DatasetManifest> manifests_;
  Table<DescriptorSet> descriptors_;
  Table<WhiteningModel> models_;
};

/// Runs one configuration over a manifest and evaluates it.
inline EvalReport run_pipeline(const std::filesystem::path& manifest_path,
                               const PipelineSettings& settings, PipelineCache& cache,
                               unsigned threads = 1) {
  settings.pyramid.validate();
  const auto manifest = cache.manifest(manifest_path);
  const auto key = std::filesystem::absolute(manifest_path).lexically_normal().string();
  auto all = cache.descriptors(key, *manifest, settings.layer, settings.pyramid);

  if (settings.whiten_source != "none") {
    std::string train_key = key;
    std::shared_ptr<const DatasetManifest> train_manifest = manifest;
    if (settings.whiten_source != "self") {
      std::filesystem::path train_path = settings.whiten_source;
      if (train_path.is_relative()) train_path = manifest->base_dir / train_path;
      train_manifest = cache.manifest(train_path);
      train_key = std::filesystem::absolute(train_path).lexically_normal().string();
    }
    const auto model_key = train_key + "|" + settings.layer + "|" + settings.pyramid.fingerprint();
    const auto model = cache.whitening(model_key, [&] {
      const auto train_all =
          cache.descriptors(train_key, *train_manifest, settings.layer, settings.pyramid);
      return fit_whitening(database_subset(*train_all, *train_manifest));
    });
    const auto keep = settings.keep_dims.value_or(model->input_dim);
    all = std::make_shared<const DescriptorSet>(apply_whitening(*model, *all, keep, threads));
  } else if (settings.keep_dims && *settings.keep_dims != all->dim()) {
    throw UsageError("keep_dims requires whitening (whiten_source self or a manifest)");
  }

  const auto index = build_index(database_subset(*all, *manifest));
  const auto results = rank_queries(*manifest, index, *all, settings.exclude_query_image, threads);
  auto report = evaluate(results, *manifest);
  report.config_fingerprint = settings.fingerprint();
  return report;
}

}  // namespace msret
