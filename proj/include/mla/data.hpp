#pragma once

// Synthetic multimodal datasets, missing-modality masks, splits, minibatching
// and the on-disk dataset directory format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "mla/binio.hpp"
#include "mla/error.hpp"
#include "mla/numkernel.hpp"

namespace mla {

struct MultimodalDataset {
  std::vector<std::size_t> modality_dims;
  std::vector<Mat> tables;               // one N x d_m table per modality
  std::vector<std::uint32_t> labels;     // N entries in [0, class_count)
  std::vector<std::uint8_t> presence;    // N x M, row-major, 0/1
  std::uint32_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t modality_count() const noexcept { return modality_dims.size(); }

  bool present(std::size_t i, std::size_t m) const { return presence[i * modality_count() + m] != 0; }

  std::size_t present_count(std::size_t m) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(); ++i) n += present(i, m) ? 1 : 0;
    return n;
  }

  bool operator==(const MultimodalDataset&) const = default;
};

// Throws schema_error describing the first violated dataset invariant.
inline void validate(const MultimodalDataset& ds) {
  const std::size_t n = ds.size();
  const std::size_t mcount = ds.modality_count();
  if (mcount == 0) throw schema_error("dataset has no modalities");
  if (ds.class_count < 2) throw schema_error("class_count must be at least 2");
  if (ds.tables.size() != mcount) throw schema_error("table count differs from modality count");
  if (ds.presence.size() != n * mcount) throw schema_error("presence mask must be N x M");
  for (std::size_t m = 0; m < mcount; ++m) {
    const Mat& t = ds.tables[m];
    if (t.rows != n || t.cols != ds.modality_dims[m] || t.data.size() != n * t.cols)
      throw schema_error("modality " + std::to_string(m) + " table is not N x d_m");
    if (!all_finite(t.data)) throw schema_error("modality " + std::to_string(m) + " has non-finite features");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.labels[i] >= ds.class_count)
      throw schema_error("label " + std::to_string(ds.labels[i]) + " of sample " + std::to_string(i) +
                         " is not below class_count " + std::to_string(ds.class_count));
    bool any = false;
    for (std::size_t m = 0; m < mcount; ++m) {
      const auto p = ds.presence[i * mcount + m];
      if (p > 1) throw schema_error("presence entries must be 0 or 1");
      any = any || p == 1;
    }
    if (!any) throw schema_error("sample " + std::to_string(i) + " has no present modality");
  }
}

struct ModalitySpec {
  std::size_t dim = 8;
  double mixing_scale = 1.0;
  double noise_std = 0.0;
};

struct SyntheticSpec {
  std::size_t latent_dim = 8;
  std::uint32_t class_count = 4;
  std::size_t samples = 1000;
  std::vector<ModalitySpec> modalities;
  std::uint64_t seed = 0;
};

inline void validate(const SyntheticSpec& spec) {
  detail::require(spec.latent_dim >= 1, "synthetic spec: latent_dim must be >= 1");
  detail::require(spec.class_count >= 2, "synthetic spec: class_count must be >= 2");
  detail::require(spec.samples >= 1, "synthetic spec: samples must be >= 1");
  detail::require(!spec.modalities.empty(), "synthetic spec: at least one modality");
  for (const auto& m : spec.modalities) {
    detail::require(m.dim >= 1, "synthetic spec: modality dim must be >= 1");
    detail::require(m.noise_std >= 0.0 && std::isfinite(m.noise_std), "synthetic spec: noise_std must be >= 0");
    detail::require(std::isfinite(m.mixing_scale), "synthetic spec: mixing_scale must be finite");
  }
}

// Latent-factor generator: z ~ N(0, I_k), y = argmax V z, x_m = A_m z + sigma_m * eps.
// V has orthonormal rows when C <= k, so every class has probability exactly 1/C;
// otherwise its rows are unit-normalized Gaussian draws. A_m has entries
// N(0, mixing_scale^2 / k), so each clean feature has variance mixing_scale^2.
inline MultimodalDataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const std::size_t k = spec.latent_dim;
  const std::size_t c = spec.class_count;
  const std::size_t mcount = spec.modalities.size();

  Rng param_rng(derive_seed(spec.seed, stream::synthetic_params));
  Mat v(c, k);
  for (double& x : v.data) x = param_rng.normal();
  for (std::size_t r = 0; r < c; ++r) {
    auto row = v.row(r);
    if (c <= k)
      for (std::size_t q = 0; q < r; ++q) {
        const double proj = dot(row, v.row(q));
        for (std::size_t j = 0; j < k; ++j) row[j] -= proj * v(q, j);
      }
    const double nrm = norm2(row);
    for (double& x : row) x /= nrm;
  }

  std::vector<Mat> mixing;
  for (const auto& ms : spec.modalities) {
    Mat a(ms.dim, k);
    const double scale = ms.mixing_scale / std::sqrt(static_cast<double>(k));
    for (double& x : a.data) x = scale * param_rng.normal();
    mixing.push_back(std::move(a));
  }

  MultimodalDataset ds;
  ds.class_count = spec.class_count;
  for (const auto& ms : spec.modalities) {
    ds.modality_dims.push_back(ms.dim);
    ds.tables.emplace_back(spec.samples, ms.dim);
  }
  ds.labels.resize(spec.samples);
  ds.presence.assign(spec.samples * mcount, 1);

  Rng latent_rng(derive_seed(spec.seed, stream::synthetic_latent));
  std::vector<Rng> noise_rng;
  for (std::size_t m = 0; m < mcount; ++m) noise_rng.emplace_back(derive_seed(spec.seed, stream::synthetic_noise, m));

  Vec z(k);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    for (double& x : z) x = latent_rng.normal();
    const Vec scores = matvec(v, z);
    ds.labels[i] = static_cast<std::uint32_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    for (std::size_t m = 0; m < mcount; ++m) {
      const Vec clean = matvec(mixing[m], z);
      auto row = ds.tables[m].row(i);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = clean[j] + spec.modalities[m].noise_std * noise_rng[m].normal();
    }
  }
  return ds;
}

// Per-cell absent probability that, after redrawing all-absent rows, leaves each
// modality absent with marginal probability `eta`. Returns -1 when eta reaches
// the largest achievable marginal (M-1)/M.
inline double calibrated_cell_rate(double eta, std::size_t modalities) {
  if (eta <= 0.0 || modalities <= 1) return 0.0;
  const double mm = static_cast<double>(modalities);
  if (eta >= (mm - 1.0) / mm) return -1.0;
  auto marginal = [mm](double x) { return (x - std::pow(x, mm)) / (1.0 - std::pow(x, mm)); };
  double lo = eta, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (marginal(mid) < eta ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Marks each (sample, modality) cell absent so that every modality is missing
// with marginal rate eta and no sample loses all of its modalities. Cells are
// drawn independently with a calibrated rate and all-absent rows are redrawn;
// when eta >= (M-1)/M every row keeps exactly one uniformly chosen modality.
// Cells already absent in `ds` stay absent.
inline MultimodalDataset apply_missing_mask(const MultimodalDataset& ds, double eta, std::uint64_t seed) {
  detail::require(eta >= 0.0 && eta < 1.0, "apply_missing_mask: eta must lie in [0, 1)");
  MultimodalDataset out = ds;
  if (eta == 0.0) return out;
  const std::size_t mcount = ds.modality_count();
  const double rate = calibrated_cell_rate(eta, mcount);
  Rng rng(seed);
  std::vector<std::uint8_t> row(mcount);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (;;) {
      if (rate < 0.0) {
        std::fill(row.begin(), row.end(), 0);
        row[rng.below(mcount)] = 1;
      } else {
        for (auto& cell : row) cell = rng.bernoulli(rate) ? 0 : 1;
      }
      bool any = false;
      for (std::size_t m = 0; m < mcount; ++m) any = any || (row[m] && ds.present(i, m));
      if (any) break;
    }
    for (std::size_t m = 0; m < mcount; ++m) out.presence[i * mcount + m] = row[m] && ds.present(i, m);
  }
  return out;
}

inline MultimodalDataset subset(const MultimodalDataset& ds, const std::vector<std::size_t>& indices) {
  MultimodalDataset out;
  out.modality_dims = ds.modality_dims;
  out.class_count = ds.class_count;
  const std::size_t mcount = ds.modality_count();
  for (std::size_t m = 0; m < mcount; ++m) out.tables.emplace_back(indices.size(), ds.modality_dims[m]);
  out.labels.reserve(indices.size());
  out.presence.reserve(indices.size() * mcount);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    detail::require(i < ds.size(), "subset: index out of range");
    out.labels.push_back(ds.labels[i]);
    for (std::size_t m = 0; m < mcount; ++m) {
      out.presence.push_back(ds.presence[i * mcount + m]);
      const auto src = ds.tables[m].row(i);
      std::copy(src.begin(), src.end(), out.tables[m].row(r).begin());
    }
  }
  return out;
}

struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct Splits {
  MultimodalDataset train;
  MultimodalDataset val;
  MultimodalDataset test;
};

// Index partition behind split(): seeded permutation, then contiguous cuts of
// round(f_train * N) and round(f_val * N); test takes the remainder.
inline std::tuple<std::vector<std::size_t>, std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    std::size_t n, const SplitSpec& spec) {
  detail::require(n >= 3, "split: need at least 3 samples");
  detail::require(spec.train_fraction > 0 && spec.val_fraction > 0 && spec.test_fraction > 0,
                  "split: fractions must be positive");
  detail::require(std::abs(spec.train_fraction + spec.val_fraction + spec.test_fraction - 1.0) <= 1e-9,
                  "split: fractions must sum to 1");
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
  detail::require(n_train >= 1 && n_val >= 1 && n_train + n_val < n, "split: fractions produce an empty split");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(spec.seed, stream::split));
  rng.shuffle(perm);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                               perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return {std::move(train), std::move(val), std::move(test)};
}

inline Splits split(const MultimodalDataset& ds, const SplitSpec& spec) {
  auto [tr, va, te] = split_indices(ds.size(), spec);
  return {subset(ds, tr), subset(ds, va), subset(ds, te)};
}

// Masks each split independently with the same eta, using sub-seeds derived per split.
inline Splits mask_splits(const Splits& s, double eta, std::uint64_t seed) {
  return {apply_missing_mask(s.train, eta, derive_seed(seed, stream::mask, 0)),
          apply_missing_mask(s.val, eta, derive_seed(seed, stream::mask, 1)),
          apply_missing_mask(s.test, eta, derive_seed(seed, stream::mask, 2))};
}

inline std::vector<std::size_t> present_indices(const MultimodalDataset& ds, std::size_t m) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.present(i, m)) idx.push_back(i);
  return idx;
}

// Seeded shuffle of `indices` cut into consecutive batches; the last may be short.
inline std::vector<std::vector<std::size_t>> shuffled_batches(std::vector<std::size_t> indices, std::size_t batch_size,
                                                              std::uint64_t seed) {
  detail::require(batch_size >= 1, "minibatches: batch_size must be >= 1");
  Rng rng(seed);
  rng.shuffle(indices);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < indices.size(); at += batch_size)
    batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(at),
                         indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), at + batch_size)));
  return batches;
}

// One shuffled epoch over the samples where modality m is present. Empty when
// no sample has modality m.
inline std::vector<std::vector<std::size_t>> minibatches(const MultimodalDataset& ds, std::size_t m,
                                                         std::size_t batch_size, std::uint64_t seed) {
  detail::require(m < ds.modality_count(), "minibatches: modality out of range");
  return shuffled_batches(present_indices(ds, m), batch_size, seed);
}

// Samples with every modality present.
inline std::vector<std::size_t> paired_indices(const MultimodalDataset& ds) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    bool all = true;
    for (std::size_t m = 0; m < ds.modality_count(); ++m) all = all && ds.present(i, m);
    if (all) idx.push_back(i);
  }
  return idx;
}

inline Mat gather_rows(const Mat& table, const std::vector<std::size_t>& rows) {
  Mat out(rows.size(), table.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = table.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline std::vector<std::uint32_t> gather_labels(const MultimodalDataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<std::uint32_t> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) y[r] = ds.labels[rows[r]];
  return y;
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.json, modality_<m>.bin, labels.bin, presence.bin.

inline constexpr const char* kDatasetVersion = "mla-dataset/1";

inline std::string modality_file_name(std::size_t m) { return "modality_" + std::to_string(m) + ".bin"; }

inline void save_dataset(const MultimodalDataset& ds, const std::filesystem::path& dir) {
  validate(ds);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["version"] = kDatasetVersion;
  manifest["M"] = ds.modality_count();
  manifest["N"] = ds.size();
  manifest["C"] = ds.class_count;
  manifest["modality_dims"] = ds.modality_dims;
  manifest["presence_encoding"] = "u8-row-major-NxM";
  manifest["label_encoding"] = "u32-le";
  manifest["feature_encoding"] = "f64-le-row-major";
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t m = 0; m < ds.modality_count(); ++m) files.push_back(modality_file_name(m));
  manifest["modality_files"] = files;
  binio::write_json(dir / "manifest.json", manifest);

  for (std::size_t m = 0; m < ds.modality_count(); ++m) {
    std::string buf;
    binio::append_f64(buf, ds.tables[m].data);
    binio::write_file(dir / modality_file_name(m), buf);
  }
  std::string labels;
  binio::append_u32(labels, ds.labels);
  binio::write_file(dir / "labels.bin", labels);
  binio::write_file(dir / "presence.bin", std::string(ds.presence.begin(), ds.presence.end()));
}

inline MultimodalDataset load_dataset(const std::filesystem::path& dir) {
  const nlohmann::json manifest = binio::read_json(dir / "manifest.json");
  MultimodalDataset ds;
  std::size_t mcount = 0, n = 0;
  try {
    if (manifest.at("version").get<std::string>() != kDatasetVersion)
      throw schema_error("unsupported dataset version " + manifest.at("version").dump());
    mcount = manifest.at("M").get<std::size_t>();
    n = manifest.at("N").get<std::size_t>();
    ds.class_count = manifest.at("C").get<std::uint32_t>();
    ds.modality_dims = manifest.at("modality_dims").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw schema_error(std::string("manifest.json: ") + e.what());
  }
  if (ds.modality_dims.size() != mcount) throw schema_error("manifest: modality_dims length differs from M");

  for (std::size_t m = 0; m < mcount; ++m) {
    const std::string name = modality_file_name(m);
    const std::string bytes = binio::read_file(dir / name);
    binio::expect_size(bytes, n * ds.modality_dims[m] * 8, name);
    Mat t(n, ds.modality_dims[m]);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = binio::read_f64(bytes, i * 8);
    ds.tables.push_back(std::move(t));
  }
  const std::string labels = binio::read_file(dir / "labels.bin");
  binio::expect_size(labels, n * 4, "labels.bin");
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = binio::read_u32(labels, i * 4);
  const std::string presence = binio::read_file(dir / "presence.bin");
  binio::expect_size(presence, n * mcount, "presence.bin");
  ds.presence.assign(presence.begin(), presence.end());

  validate(ds);
  return ds;
}

}  // namespace mla
