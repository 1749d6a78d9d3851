#pragma once

// Oxford-style average precision / mAP and the UKB top-4 score.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msret/detail/byte_io.hpp"
#include "msret/errors.hpp"
#include "msret/log.hpp"
#include "msret/manifest.hpp"

namespace msret {

/// Average precision of a ranked id list. Junk ids are skipped without
/// consuming a rank; positives are good + ok. Precision-recall area is
/// accumulated with the trapezoid rule starting from precision 1 at recall 0.
inline double average_precision(const std::vector<std::string>& ranked, const QueryGroundTruth& gt) {
  std::unordered_set<std::string> positives(gt.good.begin(), gt.good.end());
  positives.insert(gt.ok.begin(), gt.ok.end());
  if (positives.empty()) {
    throw DegenerateInputError("query '" + gt.query_id + "' has no positives; AP is undefined");
  }
  const std::unordered_set<std::string> junk(gt.junk.begin(), gt.junk.end());
  std::unordered_set<std::string> seen;
  seen.reserve(ranked.size());

  const double npos = static_cast<double>(positives.size());
  double ap = 0.0;
  double prev_recall = 0.0;
  double prev_precision = 1.0;
  std::size_t hits = 0;
  std::size_t rank = 0;
  for (const auto& id : ranked) {
    if (!seen.insert(id).second) {
      throw ValidationError({"ranked list for query '" + gt.query_id + "' repeats '" + id + "'"});
    }
    if (junk.count(id) != 0) continue;
    if (positives.count(id) != 0) ++hits;
    ++rank;
    const double recall = static_cast<double>(hits) / npos;
    const double precision = static_cast<double>(hits) / static_cast<double>(rank);
    ap += (recall - prev_recall) * (prev_precision + precision) / 2.0;
    prev_recall = recall;
    prev_precision = precision;
  }
  return ap;
}

struct EvalReport {
  Protocol protocol = Protocol::oxford_map;
  /// Sorted by query id.
  std::vector<std::pair<std::string, double>> per_query;
  double aggregate = 0.0;
  std::string config_fingerprint;

  std::string metric_name() const { return protocol == Protocol::oxford_map ? "mAP" : "top4"; }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["protocol"] = std::string(to_string(protocol));
    doc["metric"] = metric_name();
    doc["aggregate"] = aggregate;
    doc["config_fingerprint"] = config_fingerprint;
    auto& rows = doc["per_query"] = nlohmann::json::array();
    for (const auto& [id, v] : per_query) rows.push_back({{"query", id}, {"value", v}});
    return doc;
  }

  /// Aligned two-column table with a header and a summary line.
  std::string to_table() const {
    std::size_t width = 5;
    for (const auto& [id, v] : per_query) width = std::max(width, id.size());
    std::ostringstream os;
    os << "# " << config_fingerprint << '\n';
    os << std::left << std::setw(static_cast<int>(width)) << "query" << "  " << metric_name()
       << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& [id, v] : per_query) {
      os << std::left << std::setw(static_cast<int>(width)) << id << "  " << v << '\n';
    }
    os << std::left << std::setw(static_cast<int>(width)) << "mean" << "  " << aggregate << '\n';
    return os.str();
  }

  void write_json(const std::filesystem::path& path) const {
    detail::write_file(path, to_json().dump(2) + "\n");
  }
  void write_table(const std::filesystem::path& path) const {
    detail::write_file(path, to_table());
  }
};

/// Ranked id lists keyed by query id.
using QueryResults = std::map<std::string, std::vector<std::string>>;

namespace detail {

template <typename PerQuery>
EvalReport evaluate_queries(const QueryResults& results, const DatasetManifest& manifest,
                            Protocol protocol, PerQuery&& per_query) {
  std::vector<std::string> missing;
  for (const auto& q : manifest.queries) {
    if (results.count(q.query_id) == 0) missing.push_back("no ranked list for query '" + q.query_id + "'");
  }
  if (!missing.empty()) throw ValidationError(std::move(missing));
  if (manifest.queries.empty()) throw ValidationError({"manifest has no queries"});

  std::vector<const QueryGroundTruth*> order;
  for (const auto& q : manifest.queries) order.push_back(&q);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->query_id < b->query_id; });

  EvalReport report;
  report.protocol = protocol;
  double total = 0.0;
  for (const auto* q : order) {
    const double v = per_query(results.at(q->query_id), *q);
    report.per_query.emplace_back(q->query_id, v);
    total += v;
  }
  report.aggregate = total / static_cast<double>(order.size());
  return report;
}

}  // namespace detail

inline EvalReport mean_average_precision(const QueryResults& results,
                                         const DatasetManifest& manifest) {
  return detail::evaluate_queries(results, manifest, Protocol::oxford_map,
                                  [](const auto& ranked, const auto& gt) {
                                    return average_precision(ranked, gt);
                                  });
}

/// Same-object images among the top 4 results, self included. The object set
/// of a query is its good + ok ids plus the query image.
inline double top4_count(const std::vector<std::string>& ranked, const QueryGroundTruth& gt) {
  std::unordered_set<std::string> same(gt.good.begin(), gt.good.end());
  same.insert(gt.ok.begin(), gt.ok.end());
  same.insert(gt.image_id);
  const std::size_t n = std::min<std::size_t>(4, ranked.size());
  double count = 0.0;
  for (std::size_t i = 0; i < n; ++i) count += same.count(ranked[i]) != 0 ? 1.0 : 0.0;
  return count;
}

inline EvalReport ukb_score(const QueryResults& results, const DatasetManifest& manifest) {
  std::size_t odd_groups = 0;
  for (const auto& q : manifest.queries) {
    std::unordered_set<std::string> same(q.good.begin(), q.good.end());
    same.insert(q.ok.begin(), q.ok.end());
    same.insert(q.image_id);
    if (same.size() != 4) ++odd_groups;
  }
  if (odd_groups != 0) {
    log::warn(std::to_string(odd_groups) +
              " UKB queries have an object group without exactly 4 images");
  }
  return detail::evaluate_queries(results, manifest, Protocol::ukb_top4,
                                  [](const auto& ranked, const auto& gt) {
                                    return top4_count(ranked, gt);
                                  });
}

/// Dispatches on the manifest protocol.
inline EvalReport evaluate(const QueryResults& results, const DatasetManifest& manifest) {
  return manifest.protocol == Protocol::oxford_map ? mean_average_precision(results, manifest)
                                                   : ukb_score(results, manifest);
}

}  // namespace msret
