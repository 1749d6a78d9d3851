#pragma once

// Exhaustive cosine search over l2-normalized descriptors, and score fusion
// across layers.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "msret/aggregate.hpp"
#include "msret/errors.hpp"
#include "msret/tensor_io.hpp"

namespace msret {

struct Hit {
  std::string id;
  double score;
  friend bool operator==(const Hit&, const Hit&) = default;
};

using Ranking = std::vector<Hit>;

/// Descending score, ascending id on ties.
inline bool ranks_before(const Hit& a, const Hit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

inline void sort_ranking(Ranking& r) { std::sort(r.begin(), r.end(), ranks_before); }

inline std::vector<std::string> ranked_ids(const Ranking& r) {
  std::vector<std::string> out;
  out.reserve(r.size());
  for (const auto& h : r) out.push_back(h.id);
  return out;
}

/// Dot product of two (unit-norm) descriptors.
inline double similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("similarity of vectors with dims " + std::to_string(a.size()) +
                            " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return dot;
}

/// Immutable store of unit-norm descriptors for one layer.
class Index {
 public:
  const std::string& layer() const noexcept { return set_.layer(); }
  std::uint32_t dim() const noexcept { return set_.dim(); }
  std::size_t size() const noexcept { return set_.size(); }
  const std::vector<std::string>& ids() const noexcept { return set_.ids(); }
  std::span<const float> row(std::size_t i) const { return set_.row(i); }
  std::optional<std::size_t> find(std::string_view id) const { return set_.find(id); }
  const DescriptorSet& descriptors() const noexcept { return set_; }

  /// Scores of `q` against every stored row, in storage order.
  std::vector<double> scores(std::span<const float> q) const {
    if (q.size() != dim()) {
      throw DimensionMismatch("query dim " + std::to_string(q.size()) + " != index dim " +
                              std::to_string(dim()) + " (layer '" + layer() + "')");
    }
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = similarity(row(i), q);
    return out;
  }

 private:
  friend Index build_index(const DescriptorSet& ds);
  explicit Index(DescriptorSet set) : set_(std::move(set)) {}
  DescriptorSet set_;
};

/// Copies `ds` into an index, re-normalizing every vector. Zero vectors are
/// rejected with their image id.
inline Index build_index(const DescriptorSet& ds) {
  if (ds.empty()) throw ValidationError({"cannot build an index from an empty descriptor set"});
  DescriptorSet normalized(ds.layer(), ds.dim());
  normalized.reserve(ds.size());
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    try {
      normalized.add(ds.id(i), normalize_l2(ds.row(i)));
    } catch (const DegenerateInputError&) {
      problems.push_back("image '" + ds.id(i) + "' has a zero descriptor");
    }
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));
  return Index(std::move(normalized));
}

/// Builds an index from raw entries; duplicate ids are an error naming the id.
inline Index build_index(const std::string& layer,
                         const std::vector<std::pair<std::string, std::vector<float>>>& entries) {
  if (entries.empty()) throw ValidationError({"cannot build an index from no entries"});
  DescriptorSet ds(layer, static_cast<std::uint32_t>(entries.front().second.size()));
  for (const auto& [id, vec] : entries) ds.add(id, vec);
  return build_index(ds);
}

/// Full ranking of the index against `q`. `exclude` drops at most one entry.
inline Ranking query(const Index& index, std::span<const float> q,
                     std::optional<std::string_view> exclude = std::nullopt) {
  const auto s = index.scores(q);
  Ranking out;
  out.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (exclude && index.ids()[i] == *exclude) continue;
    out.push_back({index.ids()[i], s[i]});
  }
  sort_ranking(out);
  return out;
}

struct EnsembleMember {
  std::string layer;
  double weight;
};

/// Convex combination of per-layer scores.
struct EnsembleSpec {
  std::vector<EnsembleMember> members;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (members.empty()) out.emplace_back("ensemble needs at least one member");
    double total = 0.0;
    std::set<std::string> seen;
    for (const auto& m : members) {
      if (!(m.weight >= 0.0 && m.weight <= 1.0)) {
        out.push_back("weight of '" + m.layer + "' must lie in [0, 1]");
      }
      if (!seen.insert(m.layer).second) out.push_back("layer '" + m.layer + "' listed twice");
      total += m.weight;
    }
    if (!members.empty() && std::abs(total - 1.0) > 1e-9) {
      std::ostringstream os;
      os << "ensemble weights sum to " << total << ", expected 1";
      out.push_back(os.str());
    }
    return out;
  }

  void validate() const {
    auto p = problems();
    if (!p.empty()) throw ValidationError(std::move(p));
  }

  std::string to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < members.size(); ++i) {
      os << (i ? "," : "") << members[i].layer << ':' << members[i].weight;
    }
    return os.str();
  }

  /// Parses "layer:weight,layer:weight" and validates it.
  static EnsembleSpec parse(std::string_view text) {
    EnsembleSpec spec;
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto end = text.find(',', pos);
      if (end == std::string_view::npos) end = text.size();
      const auto tok = text.substr(pos, end - pos);
      const auto colon = tok.rfind(':');
      if (colon == std::string_view::npos || colon == 0) {
        throw UsageError("ensemble member '" + std::string(tok) + "' is not layer:weight");
      }
      double w = 0.0;
      try {
        std::size_t used = 0;
        const std::string num(tok.substr(colon + 1));
        w = std::stod(num, &used);
        if (used != num.size()) throw std::invalid_argument(num);
      } catch (const std::exception&) {
        throw UsageError("bad weight in ensemble member '" + std::string(tok) + "'");
      }
      spec.members.push_back({std::string(tok.substr(0, colon)), w});
      pos = end + 1;
    }
    auto p = spec.problems();
    if (!p.empty()) {
      std::string msg = "invalid ensemble '" + std::string(text) + "':";
      for (const auto& s : p) msg += " " + s + ";";
      throw UsageError(msg);
    }
    return spec;
  }
};

/// sum_m weight_m * scores[m].
inline double fuse_scores(std::span<const double> scores, const EnsembleSpec& spec) {
  if (scores.size() != spec.members.size()) {
    throw DimensionMismatch("fuse_scores got " + std::to_string(scores.size()) + " scores for " +
                            std::to_string(spec.members.size()) + " members");
  }
  double fused = 0.0;
  for (std::size_t m = 0; m < scores.size(); ++m) fused += spec.members[m].weight * scores[m];
  return fused;
}

/// Weighted-sum fusion of per-layer similarities. All member indexes must
/// share one id set.
inline Ranking ensemble_query(const std::map<std::string, Index>& indexes,
                              const std::map<std::string, std::vector<float>>& queries,
                              const EnsembleSpec& spec,
                              std::optional<std::string_view> exclude = std::nullopt) {
  spec.validate();
  std::vector<std::string> problems;
  std::vector<const Index*> members;
  std::vector<const std::vector<float>*> qs;
  for (const auto& m : spec.members) {
    auto it = indexes.find(m.layer);
    if (it == indexes.end()) problems.push_back("no index for layer '" + m.layer + "'");
    auto qt = queries.find(m.layer);
    if (qt == queries.end()) problems.push_back("no query descriptor for layer '" + m.layer + "'");
    if (it != indexes.end() && qt != queries.end()) {
      members.push_back(&it->second);
      qs.push_back(&qt->second);
    }
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));

  const Index& base = *members.front();
  for (std::size_t m = 1; m < members.size(); ++m) {
    std::set<std::string> a(base.ids().begin(), base.ids().end());
    std::set<std::string> b(members[m]->ids().begin(), members[m]->ids().end());
    std::vector<std::string> diff;
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(),
                                  std::back_inserter(diff));
    if (!diff.empty()) {
      std::string msg = "layers '" + base.layer() + "' and '" + members[m]->layer() +
                        "' index different images; symmetric difference:";
      for (const auto& id : diff) msg += " " + id;
      throw ValidationError({msg});
    }
  }

  std::vector<std::vector<double>> per_layer;
  per_layer.reserve(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) per_layer.push_back(members[m]->scores(*qs[m]));

  Ranking out;
  out.reserve(base.size());
  std::vector<double> s(members.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& id = base.ids()[i];
    if (exclude && id == *exclude) continue;
    s[0] = per_layer[0][i];
    for (std::size_t m = 1; m < members.size(); ++m) s[m] = per_layer[m][*members[m]->find(id)];
    out.push_back({id, fuse_scores(s, spec)});
  }
  sort_ranking(out);
  return out;
}

}  // namespace msret
