#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mla/data.hpp"
#include "mla/numkernel.hpp"

namespace mla::test {

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mla_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

inline Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// Small fully-present dataset with random features and labels.
inline MultimodalDataset toy_dataset(std::vector<std::size_t> dims, std::size_t n, std::uint32_t classes,
                                     std::uint64_t seed) {
  Rng rng(seed);
  MultimodalDataset ds;
  ds.modality_dims = dims;
  ds.class_count = classes;
  for (std::size_t d : dims) ds.tables.push_back(random_mat(n, d, rng));
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<std::uint32_t>(rng.below(classes)));
  ds.presence.assign(n * dims.size(), 1);
  return ds;
}

inline SyntheticSpec small_spec(std::uint64_t seed, std::size_t n = 600) {
  SyntheticSpec s;
  s.latent_dim = 4;
  s.class_count = 3;
  s.samples = n;
  s.modalities = {{6, 3.0, 0.1}, {5, 3.0, 0.5}};
  s.seed = seed;
  return s;
}

}  // namespace mla::test
