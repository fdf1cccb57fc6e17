#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpcl/detail/binary_io.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/linalg.hpp"

namespace fedpcl {

inline constexpr int kGlobalOwner = -1;

struct PrototypeEntry {
  Vector vec;
  std::size_t count = 0;  // samples behind the mean; 0 for padded entries
  bool padded = false;

  friend bool operator==(const PrototypeEntry&, const PrototypeEntry&) = default;
};

/// Class id -> representative vector. Iteration is in ascending class id.
struct PrototypeSet {
  int owner = kGlobalOwner;
  std::size_t dim = 0;
  std::map<int, PrototypeEntry> entries;

  bool has(int cls) const { return entries.count(cls) != 0; }
  bool owns(int cls) const {
    auto it = entries.find(cls);
    return it != entries.end() && !it->second.padded;
  }
  const Vector& at(int cls) const {
    auto it = entries.find(cls);
    if (it == entries.end())
      fail(ErrorKind::kMissingClass, "prototype set (owner " + std::to_string(owner) +
                                         ") has no class " + std::to_string(cls));
    return it->second.vec;
  }
  std::vector<int> classes() const {
    std::vector<int> out;
    out.reserve(entries.size());
    for (const auto& [cls, _] : entries) out.push_back(cls);
    return out;
  }
  std::size_t size() const { return entries.size(); }

  friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

enum class AggregationMode { kAsWritten, kWeightedMean };

inline const char* to_string(AggregationMode m) {
  return m == AggregationMode::kAsWritten ? "as_written" : "weighted_mean";
}

inline AggregationMode parse_aggregation(const std::string& s) {
  if (s == "as_written") return AggregationMode::kAsWritten;
  if (s == "weighted_mean") return AggregationMode::kWeightedMean;
  fail(ErrorKind::kConfig, "unknown aggregation mode '" + s + "'");
}

/// Per-class mean of the projected rows.
inline PrototypeSet compute_local_prototypes(const Matrix& z, std::span<const int> labels, int owner) {
  require(z.rows() == labels.size(), ErrorKind::kShape, "z rows and label count differ");
  require(!labels.empty(), ErrorKind::kEmptySet, "cannot build prototypes from zero samples");
  PrototypeSet set;
  set.owner = owner;
  set.dim = z.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& e = set.entries[labels[i]];
    if (e.vec.empty()) e.vec.assign(z.cols(), 0.0);
    auto row = z.row(i);
    for (std::size_t k = 0; k < z.cols(); ++k) e.vec[k] += row[k];
    ++e.count;
  }
  for (auto& [_, e] : set.entries)
    for (double& v : e.vec) v /= static_cast<double>(e.count);
  return set;
}

/// Server aggregation. For class j with owners N_j and total count N_j:
///   weighted_mean: sum_i (|D_ij| / N_j) C_i^(j)
///   as_written:    (1 / |N_j|) * the above
/// Padded entries never contribute. Summation runs in ascending owner id.
inline PrototypeSet aggregate_global(std::span<const PrototypeSet> local_sets, AggregationMode mode) {
  require(!local_sets.empty(), ErrorKind::kEmptySet, "aggregate_global needs at least one set");
  std::vector<const PrototypeSet*> order;
  for (const auto& s : local_sets) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const PrototypeSet* a, const PrototypeSet* b) { return a->owner < b->owner; });

  std::size_t dim = 0;
  for (const auto* s : order) {
    if (s->entries.empty()) continue;
    if (dim == 0) dim = s->dim;
    require(s->dim == dim, ErrorKind::kShape, "prototype dims differ across clients");
  }

  struct Acc {
    std::size_t total = 0;
    std::size_t owners = 0;
  };
  std::map<int, Acc> acc;
  for (const auto* s : order)
    for (const auto& [cls, e] : s->entries) {
      if (e.padded) continue;
      acc[cls].total += e.count;
      acc[cls].owners += 1;
    }

  PrototypeSet global;
  global.owner = kGlobalOwner;
  global.dim = dim;
  for (const auto& [cls, a] : acc) {
    PrototypeEntry out;
    out.vec.assign(dim, 0.0);
    out.count = a.total;
    for (const auto* s : order) {
      auto it = s->entries.find(cls);
      if (it == s->entries.end() || it->second.padded) continue;
      const double w = static_cast<double>(it->second.count) / static_cast<double>(a.total);
      for (std::size_t k = 0; k < dim; ++k) out.vec[k] += w * it->second.vec[k];
    }
    if (mode == AggregationMode::kAsWritten)
      for (double& v : out.vec) v /= static_cast<double>(a.owners);
    global.entries.emplace(cls, std::move(out));
  }
  return global;
}

/// Fills every class of `global_set` a client does not own with the global
/// prototype (flagged as padded). Owned entries pass through untouched.
inline std::vector<PrototypeSet> pad_local_sets(std::span<const PrototypeSet> local_sets,
                                                const PrototypeSet& global_set) {
  for (const auto& s : local_sets)
    for (const auto& [cls, e] : s.entries)
      if (!e.padded)
        require(global_set.has(cls), ErrorKind::kCoverage,
                "global set lacks class " + std::to_string(cls) + " owned by client " +
                    std::to_string(s.owner));
  std::vector<PrototypeSet> out;
  out.reserve(local_sets.size());
  for (const auto& s : local_sets) {
    PrototypeSet padded;
    padded.owner = s.owner;
    padded.dim = global_set.dim;
    for (const auto& [cls, g] : global_set.entries) {
      if (s.owns(cls)) {
        padded.entries.emplace(cls, s.entries.at(cls));
      } else {
        padded.entries.emplace(cls, PrototypeEntry{g.vec, 0, true});
      }
    }
    out.push_back(std::move(padded));
  }
  return out;
}

struct SimilarityMatrix {
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  Matrix values;
};

inline std::string prototype_label(const PrototypeSet& s, int cls) {
  const std::string owner = s.owner == kGlobalOwner ? "global" : "client" + std::to_string(s.owner);
  return owner + ":" + std::to_string(cls);
}

inline SimilarityMatrix similarity_matrix(const PrototypeSet& a, const PrototypeSet& b, bool normalize) {
  require(a.dim == b.dim, ErrorKind::kShape, "prototype dims differ");
  auto unit = [normalize](const Vector& v) {
    if (!normalize) return v;
    Vector u = v;
    const double n = norm2(v);
    if (n > 0.0)
      for (double& x : u) x /= n;
    return u;
  };
  SimilarityMatrix out;
  std::vector<Vector> bvecs;
  for (const auto& [cls, e] : b.entries) {
    out.col_labels.push_back(prototype_label(b, cls));
    bvecs.push_back(unit(e.vec));
  }
  out.values = Matrix(a.size(), b.size());
  std::size_t r = 0;
  for (const auto& [cls, e] : a.entries) {
    out.row_labels.push_back(prototype_label(a, cls));
    const Vector av = unit(e.vec);
    for (std::size_t c = 0; c < bvecs.size(); ++c) out.values(r, c) = dot(av, bvecs[c]);
    ++r;
  }
  return out;
}

inline std::string similarity_csv(const SimilarityMatrix& m) {
  std::string out = "prototype";
  for (const auto& l : m.col_labels) out += "," + l;
  out += "\n";
  for (std::size_t r = 0; r < m.row_labels.size(); ++r) {
    out += m.row_labels[r];
    for (std::size_t c = 0; c < m.col_labels.size(); ++c)
      out += "," + detail::format_double(m.values(r, c));
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prototype-set file: JSON header line, then float32 LE vectors in class order.
// ---------------------------------------------------------------------------

inline std::string encode_prototypes(const PrototypeSet& s, const nlohmann::json& meta = {}) {
  nlohmann::json header = {{"format", "fedpcl-prototypes"}, {"version", 1},
                           {"owner", s.owner},             {"dim", s.dim}};
  nlohmann::json classes = nlohmann::json::array(), counts = nlohmann::json::array(),
                 padded = nlohmann::json::array();
  for (const auto& [cls, e] : s.entries) {
    classes.push_back(cls);
    counts.push_back(e.count);
    padded.push_back(e.padded);
  }
  header["classes"] = classes;
  header["counts"] = counts;
  header["padded"] = padded;
  if (meta.is_object())
    for (const auto& [k, v] : meta.items()) header[k] = v;
  std::string out = header.dump() + "\n";
  for (const auto& [_, e] : s.entries)
    for (double v : e.vec) detail::append_f32_le(out, v);
  return out;
}

inline PrototypeSet decode_prototypes(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  require(nl != std::string_view::npos, ErrorKind::kFormat, "prototype header missing at offset 0");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("prototype header at offset 0: ") + e.what());
  }
  require(h.value("format", "") == "fedpcl-prototypes", ErrorKind::kFormat, "not a prototype file");
  PrototypeSet s;
  try {
    s.owner = h.at("owner").get<int>();
    s.dim = h.at("dim").get<std::size_t>();
    const auto classes = h.at("classes").get<std::vector<int>>();
    const auto counts = h.at("counts").get<std::vector<std::size_t>>();
    const auto padded = h.at("padded").get<std::vector<bool>>();
    require(classes.size() == counts.size() && classes.size() == padded.size(), ErrorKind::kFormat,
            "prototype header arrays differ in length");
    std::size_t off = nl + 1;
    require(bytes.size() - off == classes.size() * s.dim * 4, ErrorKind::kFormat,
            "prototype payload at offset " + std::to_string(off) + " has wrong length");
    for (std::size_t c = 0; c < classes.size(); ++c) {
      PrototypeEntry e;
      e.count = counts[c];
      e.padded = padded[c];
      e.vec.resize(s.dim);
      for (double& v : e.vec) { v = detail::read_f32_le(bytes, off); off += 4; }
      s.entries.emplace(classes[c], std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("prototype header: ") + e.what());
  }
  return s;
}

}  // namespace fedpcl
