#pragma once

// Dataset manifests: which images exist, where their per-layer feature dumps
// live, and the query ground truth for the evaluation protocol.
//
// {
//   "protocol": "oxford_map" | "ukb_top4",
//   "images":  [{"id": "...", "layers": {"conv5_4": "feat/x.fmap"},
//                "external": false, "group": "obj17"}],
//   "queries": [{"id": "...", "image": "...", "bbox": [x1, y1, x2, y2],
//                "good": [], "ok": [], "junk": []}]
// }
//
// "external" images are query-only (e.g. cropped-query dumps) and never enter
// the searchable database. For ukb_top4 manifests "queries" may be omitted, in
// which case every non-external image becomes a query whose positives are the
// members of its "group".

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msret/detail/byte_io.hpp"
#include "msret/errors.hpp"

namespace msret {

enum class Protocol { oxford_map, ukb_top4 };

inline std::string_view to_string(Protocol p) {
  return p == Protocol::oxford_map ? "oxford_map" : "ukb_top4";
}

inline std::optional<Protocol> parse_protocol(std::string_view s) {
  if (s == "oxford_map" || s == "oxford") return Protocol::oxford_map;
  if (s == "ukb_top4" || s == "ukb") return Protocol::ukb_top4;
  return std::nullopt;
}

struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool valid() const { return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct QueryGroundTruth {
  std::string query_id;
  std::string image_id;
  std::optional<BoundingBox> bbox;
  std::vector<std::string> good;
  std::vector<std::string> ok;
  std::vector<std::string> junk;
  friend bool operator==(const QueryGroundTruth&, const QueryGroundTruth&) = default;
};

struct ImageEntry {
  std::string id;
  std::map<std::string, std::filesystem::path> layers;
  bool external = false;
  std::string group;
};

struct DatasetManifest {
  Protocol protocol = Protocol::oxford_map;
  std::vector<ImageEntry> images;
  std::vector<QueryGroundTruth> queries;
  /// Relative feature paths resolve against this directory.
  std::filesystem::path base_dir;

  const ImageEntry* find_image(std::string_view id) const {
    for (const auto& img : images) {
      if (img.id == id) return &img;
    }
    return nullptr;
  }

  /// Ids of searchable (non-external) images in manifest order.
  std::vector<std::string> database_ids() const {
    std::vector<std::string> out;
    out.reserve(images.size());
    for (const auto& img : images) {
      if (!img.external) out.push_back(img.id);
    }
    return out;
  }

  std::optional<std::filesystem::path> feature_path(const ImageEntry& img,
                                                    const std::string& layer) const {
    auto it = img.layers.find(layer);
    if (it == img.layers.end()) return std::nullopt;
    if (it->second.is_absolute() || base_dir.empty()) return it->second;
    return base_dir / it->second;
  }
};

/// Every invariant violation in the manifest; empty when valid.
inline std::vector<std::string> manifest_problems(const DatasetManifest& m) {
  std::vector<std::string> problems;
  std::unordered_set<std::string> ids;
  for (const auto& img : m.images) {
    if (img.id.empty()) problems.emplace_back("image with empty id");
    if (!ids.insert(img.id).second) problems.push_back("duplicate image id '" + img.id + "'");
  }
  std::unordered_set<std::string> query_ids;
  for (const auto& q : m.queries) {
    const std::string where = "query '" + q.query_id + "'";
    if (q.query_id.empty()) problems.emplace_back("query with empty id");
    if (!query_ids.insert(q.query_id).second) problems.push_back("duplicate " + where);
    if (ids.count(q.image_id) == 0) {
      problems.push_back(where + ": image '" + q.image_id + "' not in images");
    }
    if (q.bbox && !q.bbox->valid()) {
      problems.push_back(where + ": bbox must satisfy 0 <= x1 < x2 and 0 <= y1 < y2");
    }
    std::unordered_map<std::string, std::string> label_of;
    auto check_list = [&](const std::vector<std::string>& list, const char* label) {
      for (const auto& id : list) {
        if (ids.count(id) == 0) {
          problems.push_back(where + ": " + label + " image '" + id + "' not in images");
        }
        auto [it, inserted] = label_of.emplace(id, label);
        if (!inserted && it->second != label) {
          problems.push_back(where + ": disjointness violated, '" + id + "' is both " +
                             it->second + " and " + label);
        }
      }
    };
    check_list(q.good, "good");
    check_list(q.ok, "ok");
    check_list(q.junk, "junk");
  }
  return problems;
}

inline void validate_manifest(const DatasetManifest& m) {
  auto problems = manifest_problems(m);
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

namespace detail {

// Reads a string array field, recording a problem for anything else.
inline std::vector<std::string> string_list(const nlohmann::json& obj, const char* key,
                                            const std::string& where,
                                            std::vector<std::string>& problems) {
  std::vector<std::string> out;
  if (!obj.contains(key)) return out;
  const auto& arr = obj.at(key);
  if (!arr.is_array()) {
    problems.push_back(where + ": '" + key + "' must be an array");
    return out;
  }
  for (const auto& v : arr) {
    if (v.is_string()) {
      out.push_back(v.get<std::string>());
    } else {
      problems.push_back(where + ": '" + key + "' entries must be strings");
    }
  }
  return out;
}

inline void synthesize_group_queries(DatasetManifest& m) {
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& img : m.images) {
    if (!img.external && !img.group.empty()) members[img.group].push_back(img.id);
  }
  for (const auto& img : m.images) {
    if (img.external || img.group.empty()) continue;
    QueryGroundTruth q;
    q.query_id = img.id;
    q.image_id = img.id;
    q.good = members[img.group];
    m.queries.push_back(std::move(q));
  }
}

}  // namespace detail

/// Builds a manifest from its JSON form. Structural problems and invariant
/// violations are collected together and thrown as one ValidationError.
inline DatasetManifest parse_manifest(const nlohmann::json& doc,
                                      const std::filesystem::path& base_dir = {}) {
  std::vector<std::string> problems;
  DatasetManifest m;
  m.base_dir = base_dir;
  if (!doc.is_object()) throw ValidationError({"manifest must be a JSON object"});

  if (!doc.contains("protocol") || !doc.at("protocol").is_string()) {
    problems.emplace_back("missing string field 'protocol'");
  } else {
    const auto name = doc.at("protocol").get<std::string>();
    if (auto p = parse_protocol(name)) {
      m.protocol = *p;
    } else {
      problems.push_back("unknown protocol '" + name + "'");
    }
  }

  if (!doc.contains("images") || !doc.at("images").is_array()) {
    problems.emplace_back("missing array field 'images'");
  } else {
    std::size_t n = 0;
    for (const auto& ji : doc.at("images")) {
      const std::string where = "images[" + std::to_string(n++) + "]";
      if (!ji.is_object() || !ji.contains("id") || !ji.at("id").is_string()) {
        problems.push_back(where + ": needs a string 'id'");
        continue;
      }
      ImageEntry img;
      img.id = ji.at("id").get<std::string>();
      if (ji.contains("layers")) {
        if (!ji.at("layers").is_object()) {
          problems.push_back(where + ": 'layers' must be an object");
        } else {
          for (const auto& [layer, path] : ji.at("layers").items()) {
            if (!path.is_string()) {
              problems.push_back(where + ": layer '" + layer + "' path must be a string");
              continue;
            }
            img.layers.emplace(layer, path.get<std::string>());
          }
        }
      }
      if (ji.contains("external")) {
        if (ji.at("external").is_boolean()) {
          img.external = ji.at("external").get<bool>();
        } else {
          problems.push_back(where + ": 'external' must be a boolean");
        }
      }
      if (ji.contains("group")) {
        if (ji.at("group").is_string()) {
          img.group = ji.at("group").get<std::string>();
        } else {
          problems.push_back(where + ": 'group' must be a string");
        }
      }
      m.images.push_back(std::move(img));
    }
  }

  if (doc.contains("queries")) {
    if (!doc.at("queries").is_array()) {
      problems.emplace_back("'queries' must be an array");
    } else {
      std::size_t n = 0;
      for (const auto& jq : doc.at("queries")) {
        const std::string where = "queries[" + std::to_string(n++) + "]";
        if (!jq.is_object() || !jq.contains("id") || !jq.at("id").is_string() ||
            !jq.contains("image") || !jq.at("image").is_string()) {
          problems.push_back(where + ": needs string 'id' and 'image'");
          continue;
        }
        QueryGroundTruth q;
        q.query_id = jq.at("id").get<std::string>();
        q.image_id = jq.at("image").get<std::string>();
        if (jq.contains("bbox") && !jq.at("bbox").is_null()) {
          const auto& b = jq.at("bbox");
          if (!b.is_array() || b.size() != 4 ||
              !std::all_of(b.begin(), b.end(), [](const auto& v) { return v.is_number(); })) {
            problems.push_back(where + ": 'bbox' must be [x1, y1, x2, y2]");
          } else {
            q.bbox = BoundingBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                 b[3].get<double>()};
          }
        }
        q.good = detail::string_list(jq, "good", where, problems);
        q.ok = detail::string_list(jq, "ok", where, problems);
        q.junk = detail::string_list(jq, "junk", where, problems);
        m.queries.push_back(std::move(q));
      }
    }
  }
  if (m.queries.empty() && m.protocol == Protocol::ukb_top4) detail::synthesize_group_queries(m);

  auto more = manifest_problems(m);
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw ValidationError(std::move(problems));
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({path.string() + ": malformed JSON: " + e.what()});
  }
  return parse_manifest(doc, path.parent_path());
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json doc;
  doc["protocol"] = std::string(to_string(m.protocol));
  auto& images = doc["images"] = nlohmann::json::array();
  for (const auto& img : m.images) {
    nlohmann::json ji;
    ji["id"] = img.id;
    auto& layers = ji["layers"] = nlohmann::json::object();
    for (const auto& [layer, path] : img.layers) layers[layer] = path.generic_string();
    if (img.external) ji["external"] = true;
    if (!img.group.empty()) ji["group"] = img.group;
    images.push_back(std::move(ji));
  }
  auto& queries = doc["queries"] = nlohmann::json::array();
  for (const auto& q : m.queries) {
    nlohmann::json jq;
    jq["id"] = q.query_id;
    jq["image"] = q.image_id;
    if (q.bbox) jq["bbox"] = {q.bbox->x1, q.bbox->y1, q.bbox->x2, q.bbox->y2};
    jq["good"] = q.good;
    jq["ok"] = q.ok;
    jq["junk"] = q.junk;
    queries.push_back(std::move(jq));
  }
  return doc;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  detail::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Oxford / Paris ground-truth text files.

inline constexpr std::string_view kOxfordQueryPrefix = "oxc1_";

namespace detail {

inline std::vector<std::string> read_tag_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::string> tags;
  std::string tag;
  while (in >> tag) tags.push_back(tag);
  return tags;
}

}  // namespace detail

/// Reads every `<name>_query.txt` in `dir` with its `_good/_ok/_junk.txt`
/// siblings. Queries are returned sorted by name.
inline std::vector<QueryGroundTruth> import_oxford_ground_truth(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  constexpr std::string_view suffix = "_query.txt";
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto file = entry.path().filename().string();
    if (file.size() > suffix.size() && file.ends_with(suffix)) {
      names.push_back(file.substr(0, file.size() - suffix.size()));
    }
  }
  std::sort(names.begin(), names.end());

  std::vector<QueryGroundTruth> out;
  std::vector<std::string> problems;
  for (const auto& name : names) {
    QueryGroundTruth q;
    q.query_id = name;
    std::ifstream in(dir / (name + std::string(suffix)));
    std::string tag;
    BoundingBox box;
    if (!(in >> tag >> box.x1 >> box.y1 >> box.x2 >> box.y2)) {
      problems.push_back(name + "_query.txt: expected '<image> x1 y1 x2 y2'");
      continue;
    }
    if (tag.starts_with(kOxfordQueryPrefix)) tag.erase(0, kOxfordQueryPrefix.size());
    q.image_id = tag;
    q.bbox = box;
    try {
      q.good = detail::read_tag_list(dir / (name + "_good.txt"));
      q.ok = detail::read_tag_list(dir / (name + "_ok.txt"));
      q.junk = detail::read_tag_list(dir / (name + "_junk.txt"));
    } catch (const IoError& e) {
      problems.emplace_back(e.what());
      continue;
    }
    out.push_back(std::move(q));
  }
  if (!problems.empty()) throw ValidationError(std::move(problems));
  return out;
}

/// Options for turning imported ground truth into a manifest.
struct OxfordManifestOptions {
  /// layer -> directory holding `<image_id>.fmap`
  std::map<std::string, std::filesystem::path> feature_dirs;
  /// layer -> directory holding `<query_id>.fmap` dumps of the cropped query
  /// regions. When set, each query gets an external image `crop:<query_id>`.
  std::map<std::string, std::filesystem::path> crop_dirs;
  /// Database ids. When empty, the .fmap stems of the first feature dir are used.
  std::vector<std::string> image_ids;
};

inline DatasetManifest build_oxford_manifest(std::vector<QueryGroundTruth> queries,
                                             const OxfordManifestOptions& opts) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.protocol = Protocol::oxford_map;
  auto ids = opts.image_ids;
  if (ids.empty()) {
    if (opts.feature_dirs.empty()) {
      throw UsageError("either an image list or at least one feature directory is required");
    }
    const auto& dir = opts.feature_dirs.begin()->second;
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".fmap") ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
  }
  for (const auto& id : ids) {
    ImageEntry img;
    img.id = id;
    for (const auto& [layer, dir] : opts.feature_dirs) img.layers[layer] = dir / (id + ".fmap");
    m.images.push_back(std::move(img));
  }
  if (!opts.crop_dirs.empty()) {
    for (auto& q : queries) {
      ImageEntry img;
      img.id = "crop:" + q.query_id;
      img.external = true;
      for (const auto& [layer, dir] : opts.crop_dirs) {
        img.layers[layer] = dir / (q.query_id + ".fmap");
      }
      q.image_id = img.id;
      m.images.push_back(std::move(img));
    }
  }
  m.queries = std::move(queries);
  validate_manifest(m);
  return m;
}

}  // namespace msret
