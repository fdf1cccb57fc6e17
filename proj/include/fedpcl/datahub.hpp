#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedpcl/detail/binary_io.hpp"
#include "fedpcl/error.hpp"
#include "fedpcl/linalg.hpp"

namespace fedpcl {

enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

/// Concatenated backbone embeddings. Row layout is backbone 0's d_e columns,
/// then backbone 1's, and so on.
struct EmbeddingDataset {
  std::size_t backbones = 0;
  std::size_t embed_dim = 0;
  std::size_t n_classes = 0;
  std::size_t n_domains = 0;
  Matrix embeddings;
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<Split> split;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const { return backbones * embed_dim; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

struct ClientShard {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  friend bool operator==(const ClientShard&, const ClientShard&) = default;
};

/// Client id (position) -> sample indices.
struct PartitionAssignment {
  std::vector<ClientShard> clients;
  std::size_t size() const { return clients.size(); }
  friend bool operator==(const PartitionAssignment&, const PartitionAssignment&) = default;
};

struct SyntheticSpec {
  std::size_t n_domains = 1;
  std::size_t n_classes = 10;
  std::size_t backbones = 3;
  std::size_t embed_dim = 8;
  std::size_t samples_per_cell = 100;
  double class_sep = 20.0;
  double domain_shift = 0.0;
};

/// Gaussian blobs N(mu_class + delta_domain, I). Class means are random
/// directions rescaled so the closest pair sits exactly class_sep apart;
/// each domain offset has norm domain_shift. Values are rounded to float32
/// so the dataset file round-trips exactly. Each (domain, class) cell puts
/// its last floor(n/5) samples in the test split.
inline EmbeddingDataset generate_synthetic(Rng& rng, const SyntheticSpec& spec) {
  require(spec.n_domains >= 1 && spec.n_classes >= 1 && spec.backbones >= 1 && spec.embed_dim >= 1 &&
              spec.samples_per_cell >= 1,
          ErrorKind::kParameter, "synthetic dataset counts must be >= 1");
  require(spec.class_sep > 0.0, ErrorKind::kParameter, "class_sep must be > 0");
  require(spec.domain_shift >= 0.0, ErrorKind::kParameter, "domain_shift must be >= 0");
  const std::size_t dim = spec.backbones * spec.embed_dim;

  std::vector<Vector> means(spec.n_classes);
  for (auto& m : means) m = gaussian_sample(rng, 0.0, 1.0, dim);
  double min_dist = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < means.size(); ++a)
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) d2 += (means[a][k] - means[b][k]) * (means[a][k] - means[b][k]);
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  if (spec.n_classes == 1) min_dist = norm2(means[0]);
  require(min_dist > 0.0, ErrorKind::kNumerical, "degenerate class means");
  for (auto& m : means)
    for (double& v : m) v *= spec.class_sep / min_dist;

  std::vector<Vector> shifts(spec.n_domains);
  for (auto& s : shifts) {
    s = gaussian_sample(rng, 0.0, 1.0, dim);
    const double n = norm2(s);
    for (double& v : s) v = n > 0.0 ? v * spec.domain_shift / n : 0.0;
  }

  EmbeddingDataset ds;
  ds.backbones = spec.backbones;
  ds.embed_dim = spec.embed_dim;
  ds.n_classes = spec.n_classes;
  ds.n_domains = spec.n_domains;
  const std::size_t total = spec.n_domains * spec.n_classes * spec.samples_per_cell;
  ds.embeddings = Matrix(total, dim);
  const std::size_t n_test = spec.samples_per_cell / 5;
  std::size_t row = 0;
  for (std::size_t d = 0; d < spec.n_domains; ++d)
    for (std::size_t c = 0; c < spec.n_classes; ++c)
      for (std::size_t s = 0; s < spec.samples_per_cell; ++s, ++row) {
        auto r = ds.embeddings.row(row);
        for (std::size_t k = 0; k < dim; ++k)
          r[k] = static_cast<double>(static_cast<float>(means[c][k] + shifts[d][k] + rng.normal()));
        ds.labels.push_back(static_cast<int>(c));
        ds.domains.push_back(static_cast<int>(d));
        ds.split.push_back(s + n_test >= spec.samples_per_cell ? Split::kTest : Split::kTrain);
      }
  return ds;
}

/// Gathers the given rows into a contiguous matrix with their labels.
inline Matrix gather_rows(const EmbeddingDataset& ds, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), ds.feature_dim());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = ds.embeddings.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<int> gather_labels(const EmbeddingDataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

/// Splits `total` items by `props` with largest-remainder rounding; ties on
/// the fractional part go to the lower index. Counts sum to `total` exactly.
inline std::vector<std::size_t> largest_remainder(std::span<const double> props, std::size_t total) {
  require(!props.empty(), ErrorKind::kParameter, "largest_remainder needs at least one bucket");
  std::vector<std::size_t> counts(props.size());
  std::vector<double> frac(props.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < props.size(); ++i) {
    const double exact = props[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(props.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size(), ++assigned) ++counts[order[k]];
  while (assigned > total) {
    // Only reachable through floating-point overshoot of a sum slightly above 1.
    auto it = std::max_element(counts.begin(), counts.end());
    --*it;
    --assigned;
  }
  return counts;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> by_class(const EmbeddingDataset& ds, Split s, int domain = -1) {
  std::vector<std::vector<std::size_t>> out(ds.n_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == s && (domain < 0 || ds.domains[i] == domain))
      out[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  return out;
}

}  // namespace detail

/// Client i receives domain i. Every client keeps the same number of
/// training samples per class: the minimum over all (client, class) cells.
/// Test samples of the domain are kept in full.
inline PartitionAssignment partition_feature_shift(const EmbeddingDataset& ds, std::size_t m) {
  require(m >= 1, ErrorKind::kConfig, "need at least one client");
  require(ds.n_domains >= m, ErrorKind::kConfig,
          "feature shift needs one domain per client: " + std::to_string(ds.n_domains) + " domains for " +
              std::to_string(m) + " clients");
  std::size_t per_class = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::vector<std::size_t>>> cells(m);
  for (std::size_t i = 0; i < m; ++i) {
    cells[i] = detail::by_class(ds, Split::kTrain, static_cast<int>(i));
    for (const auto& c : cells[i]) per_class = std::min(per_class, c.size());
  }
  require(per_class >= 1, ErrorKind::kPartitionInfeasible, "some client domain lacks a class");
  PartitionAssignment out;
  out.clients.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (const auto& c : cells[i]) out.clients[i].train.insert(out.clients[i].train.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(per_class));
    std::sort(out.clients[i].train.begin(), out.clients[i].train.end());
    for (const auto& c : detail::by_class(ds, Split::kTest, static_cast<int>(i)))
      out.clients[i].test.insert(out.clients[i].test.end(), c.begin(), c.end());
    std::sort(out.clients[i].test.begin(), out.clients[i].test.end());
  }
  return out;
}

inline constexpr int kPartitionRetryCap = 100;

/// Per class j, p_j ~ Dirichlet(alpha·1_m) splits class j's (shuffled)
/// training samples across clients; its test samples follow the same
/// proportions. The whole draw is repeated while some client ends up with
/// no training data.
inline PartitionAssignment partition_label_shift(const EmbeddingDataset& ds, std::size_t m, double alpha, Rng& rng) {
  require(m >= 1, ErrorKind::kConfig, "need at least one client");
  require(alpha > 0.0, ErrorKind::kParameter, "alpha must be > 0");
  const auto train = detail::by_class(ds, Split::kTrain);
  const auto test = detail::by_class(ds, Split::kTest);
  for (int attempt = 0; attempt < kPartitionRetryCap; ++attempt) {
    PartitionAssignment out;
    out.clients.resize(m);
    for (std::size_t j = 0; j < ds.n_classes; ++j) {
      const Vector p = dirichlet_sample(rng, alpha, m);
      auto tr = train[j];
      auto te = test[j];
      rng.shuffle(tr);
      rng.shuffle(te);
      const auto tr_counts = largest_remainder(p, tr.size());
      const auto te_counts = largest_remainder(p, te.size());
      std::size_t a = 0, b = 0;
      for (std::size_t i = 0; i < m; ++i) {
        auto& c = out.clients[i];
        c.train.insert(c.train.end(), tr.begin() + static_cast<std::ptrdiff_t>(a), tr.begin() + static_cast<std::ptrdiff_t>(a + tr_counts[i]));
        c.test.insert(c.test.end(), te.begin() + static_cast<std::ptrdiff_t>(b), te.begin() + static_cast<std::ptrdiff_t>(b + te_counts[i]));
        a += tr_counts[i];
        b += te_counts[i];
      }
    }
    const bool ok = std::all_of(out.clients.begin(), out.clients.end(), [](const ClientShard& c) { return !c.train.empty(); });
    if (!ok) continue;
    for (auto& c : out.clients) {
      std::sort(c.train.begin(), c.train.end());
      std::sort(c.test.begin(), c.test.end());
    }
    return out;
  }
  fail(ErrorKind::kPartitionInfeasible, "could not give every client a sample after " +
                                            std::to_string(kPartitionRetryCap) + " attempts");
}

/// Client i receives domain i; within it, q ~ Dirichlet(alpha·1_C) and class
/// j keeps round(n_j · q_j / max q) of its samples (the dominant class keeps
/// all of them), in both splits.
inline PartitionAssignment partition_feature_label_shift(const EmbeddingDataset& ds, std::size_t m, double alpha, Rng& rng) {
  require(m >= 1, ErrorKind::kConfig, "need at least one client");
  require(alpha > 0.0, ErrorKind::kParameter, "alpha must be > 0");
  require(ds.n_domains >= m, ErrorKind::kConfig, "feature-label shift needs one domain per client");
  PartitionAssignment out;
  out.clients.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Vector q = dirichlet_sample(rng, alpha, ds.n_classes);
    const double qmax = *std::max_element(q.begin(), q.end());
    auto tr = detail::by_class(ds, Split::kTrain, static_cast<int>(i));
    auto te = detail::by_class(ds, Split::kTest, static_cast<int>(i));
    for (std::size_t j = 0; j < ds.n_classes; ++j) {
      const double keep = q[j] / qmax;
      rng.shuffle(tr[j]);
      rng.shuffle(te[j]);
      const auto n_tr = static_cast<std::size_t>(std::llround(keep * static_cast<double>(tr[j].size())));
      const auto n_te = static_cast<std::size_t>(std::llround(keep * static_cast<double>(te[j].size())));
      out.clients[i].train.insert(out.clients[i].train.end(), tr[j].begin(), tr[j].begin() + static_cast<std::ptrdiff_t>(n_tr));
      out.clients[i].test.insert(out.clients[i].test.end(), te[j].begin(), te[j].begin() + static_cast<std::ptrdiff_t>(n_te));
    }
    require(!out.clients[i].train.empty(), ErrorKind::kPartitionInfeasible,
            "client " + std::to_string(i) + " received no training samples");
    std::sort(out.clients[i].train.begin(), out.clients[i].train.end());
    std::sort(out.clients[i].test.begin(), out.clients[i].test.end());
  }
  return out;
}

inline nlohmann::json partition_to_json(const PartitionAssignment& p) {
  nlohmann::json clients = nlohmann::json::array();
  for (std::size_t i = 0; i < p.size(); ++i)
    clients.push_back({{"client_id", i}, {"train", p.clients[i].train}, {"test", p.clients[i].test}});
  return {{"clients", clients}};
}

inline PartitionAssignment partition_from_json(const nlohmann::json& j, const EmbeddingDataset& ds) {
  PartitionAssignment p;
  try {
    for (const auto& c : j.at("clients")) {
      ClientShard s{c.at("train").get<std::vector<std::size_t>>(), c.at("test").get<std::vector<std::size_t>>()};
      for (auto idx : s.train) require(idx < ds.size(), ErrorKind::kFormat, "partition index out of range");
      for (auto idx : s.test) require(idx < ds.size(), ErrorKind::kFormat, "partition index out of range");
      p.clients.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("partition file: ") + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// FPCL file: "FPCL", u16 LE version, JSON header line, float32 LE row-major
// embedding matrix.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::string encode_dataset(const EmbeddingDataset& ds) {
  std::vector<int> split;
  for (Split s : ds.split) split.push_back(static_cast<int>(s));
  const nlohmann::json header = {{"n", ds.size()},
                                 {"K", ds.backbones},
                                 {"d_e", ds.embed_dim},
                                 {"n_classes", ds.n_classes},
                                 {"n_domains", ds.n_domains},
                                 {"n_train", ds.indices(Split::kTrain).size()},
                                 {"n_test", ds.indices(Split::kTest).size()},
                                 {"labels", ds.labels},
                                 {"domains", ds.domains},
                                 {"split", split}};
  std::string out = "FPCL";
  detail::append_u16_le(out, kDatasetVersion);
  out += header.dump();
  out += "\n";
  out.reserve(out.size() + ds.embeddings.size() * 4);
  for (double v : ds.embeddings.data()) detail::append_f32_le(out, v);
  return out;
}

inline EmbeddingDataset decode_dataset(std::string_view bytes) {
  require(bytes.size() >= 6, ErrorKind::kFormat, "file truncated at offset " + std::to_string(bytes.size()) + " (header)");
  require(bytes.substr(0, 4) == "FPCL", ErrorKind::kFormat, "bad magic at offset 0");
  const auto version = detail::read_u16_le(bytes, 4);
  require(version == kDatasetVersion, ErrorKind::kFormat, "unsupported version " + std::to_string(version) + " at offset 4");
  const auto nl = bytes.find('\n', 6);
  require(nl != std::string_view::npos, ErrorKind::kFormat, "unterminated JSON header starting at offset 6");
  EmbeddingDataset ds;
  std::size_t n = 0;
  try {
    const auto h = nlohmann::json::parse(bytes.substr(6, nl - 6));
    n = h.at("n").get<std::size_t>();
    require(n > 0, ErrorKind::kEmptyDataset, "dataset header declares n=0");
    ds.backbones = h.at("K").get<std::size_t>();
    ds.embed_dim = h.at("d_e").get<std::size_t>();
    ds.n_classes = h.at("n_classes").get<std::size_t>();
    ds.n_domains = h.at("n_domains").get<std::size_t>();
    ds.labels = h.at("labels").get<std::vector<int>>();
    ds.domains = h.at("domains").get<std::vector<int>>();
    for (int s : h.at("split").get<std::vector<int>>()) {
      require(s == 0 || s == 1, ErrorKind::kFormat, "split tag must be 0 or 1");
      ds.split.push_back(static_cast<Split>(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("JSON header at offset 6: ") + e.what());
  }
  require(ds.backbones >= 1 && ds.embed_dim >= 1, ErrorKind::kFormat, "zero embedding dimension in header");
  require(ds.labels.size() == n && ds.domains.size() == n && ds.split.size() == n, ErrorKind::kFormat,
          "label/domain/split arrays do not match n=" + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i) {
    require(ds.labels[i] >= 0 && static_cast<std::size_t>(ds.labels[i]) < ds.n_classes, ErrorKind::kFormat,
            "label out of range at sample " + std::to_string(i));
    require(ds.domains[i] >= 0 && static_cast<std::size_t>(ds.domains[i]) < ds.n_domains, ErrorKind::kFormat,
            "domain out of range at sample " + std::to_string(i));
  }
  const std::size_t offset = nl + 1;
  const std::size_t expected = n * ds.feature_dim() * 4;
  require(bytes.size() - offset == expected, ErrorKind::kFormat,
          "embedding payload at offset " + std::to_string(offset) + " has " + std::to_string(bytes.size() - offset) +
              " bytes, expected " + std::to_string(expected));
  ds.embeddings = Matrix(n, ds.feature_dim());
  std::size_t off = offset;
  for (double& v : ds.embeddings.data()) {
    v = detail::read_f32_le(bytes, off);
    require(std::isfinite(v), ErrorKind::kFormat, "non-finite embedding at offset " + std::to_string(off));
    off += 4;
  }
  return ds;
}

inline void save_dataset(const EmbeddingDataset& ds, const std::string& path) {
  detail::write_file(path, encode_dataset(ds));
}

inline EmbeddingDataset load_dataset(const std::string& path) { return decode_dataset(detail::read_file(path)); }

inline std::string dataset_hash(const EmbeddingDataset& ds) { return detail::hex64(detail::fnv1a64(encode_dataset(ds))); }

}  // namespace fedpcl
