#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "mla/binio.hpp"
#include "mla/data.hpp"
#include "support.hpp"

using namespace mla;

namespace {

// Multinomial logistic regression by full-batch gradient descent on [x, 1].
double logistic_probe_accuracy(const Mat& x, const std::vector<std::uint32_t>& y, std::uint32_t classes) {
  const std::size_t n = x.rows, d = x.cols + 1;
  std::vector<double> w(d * classes, 0.0);
  std::vector<double> grad(w.size());
  std::vector<double> p(classes);
  for (int it = 0; it < 300; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -1e300;
      for (std::uint32_t c = 0; c < classes; ++c) {
        double z = w[(d - 1) * classes + c];
        for (std::size_t j = 0; j + 1 < d; ++j) z += x(i, j) * w[j * classes + c];
        p[c] = z;
        mx = std::max(mx, z);
      }
      double s = 0;
      for (auto& v : p) s += (v = std::exp(v - mx));
      for (std::uint32_t c = 0; c < classes; ++c) {
        const double g = p[c] / s - (c == y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j + 1 < d; ++j) grad[j * classes + c] += g * x(i, j);
        grad[(d - 1) * classes + c] += g;
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 0.5 * grad[k] / static_cast<double>(n);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t best = 0;
    double bz = -1e300;
    for (std::uint32_t c = 0; c < classes; ++c) {
      double z = w[(d - 1) * classes + c];
      for (std::size_t j = 0; j + 1 < d; ++j) z += x(i, j) * w[j * classes + c];
      if (z > bz) bz = z, best = c;
    }
    correct += best == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double absent_fraction(const MultimodalDataset& ds, std::size_t m) {
  return 1.0 - static_cast<double>(ds.present_count(m)) / static_cast<double>(ds.size());
}

}  // namespace

TEST_CASE("noiseless modality is linearly separable", "[data]") {
  SyntheticSpec s;
  s.latent_dim = 8;
  s.class_count = 4;
  s.samples = 4000;
  s.modalities = {{16, 1.0, 0.0}};
  s.seed = 1;
  const auto ds = generate_synthetic(s);
  validate(ds);
  CHECK(logistic_probe_accuracy(ds.tables[0], ds.labels, 4) >= 0.90);
}

TEST_CASE("generator is deterministic per seed", "[data]") {
  const auto a = generate_synthetic(test::small_spec(4));
  const auto b = generate_synthetic(test::small_spec(4));
  const auto c = generate_synthetic(test::small_spec(5));
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(std::all_of(a.presence.begin(), a.presence.end(), [](auto p) { return p == 1; }));
}

TEST_CASE("class frequencies are near balanced", "[data]") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec s;
    s.latent_dim = 8;
    s.class_count = 4;
    s.samples = 1000;
    s.modalities = {{4, 1.0, 0.5}};
    s.seed = seed;
    const auto ds = generate_synthetic(s);
    std::vector<int> counts(4, 0);
    for (auto y : ds.labels) ++counts[y];
    for (int c : counts) {
      CHECK(c >= 150);
      CHECK(c <= 350);
    }
  }
}

TEST_CASE("noise level controls feature spread", "[data]") {
  SyntheticSpec s = test::small_spec(2, 3000);
  s.modalities = {{6, 0.0, 2.0}};
  const auto ds = generate_synthetic(s);
  double sq = 0;
  for (double v : ds.tables[0].data) sq += v * v;
  CHECK(std::sqrt(sq / static_cast<double>(ds.tables[0].data.size())) == Catch::Approx(2.0).epsilon(0.03));
}

TEST_CASE("synthetic spec validation", "[data]") {
  SyntheticSpec s = test::small_spec(0);
  s.class_count = 1;
  CHECK_THROWS_AS(generate_synthetic(s), contract_error);
  s = test::small_spec(0);
  s.modalities.clear();
  CHECK_THROWS_AS(generate_synthetic(s), contract_error);
  s = test::small_spec(0);
  s.modalities[0].noise_std = -1;
  CHECK_THROWS_AS(generate_synthetic(s), contract_error);
}

TEST_CASE("zero missing rate leaves the dataset unchanged", "[data]") {
  const auto ds = generate_synthetic(test::small_spec(3));
  CHECK(apply_missing_mask(ds, 0.0, 9) == ds);
}

TEST_CASE("missing mask hits the requested marginal rate", "[data]") {
  const auto ds = test::toy_dataset({1, 1, 1}, 10000, 2, 17);
  const auto masked = apply_missing_mask(ds, 0.5, 23);
  validate(masked);
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(absent_fraction(masked, m) >= 0.48);
    CHECK(absent_fraction(masked, m) <= 0.52);
  }
}

TEST_CASE("every listed missing rate is accepted and leaves each sample a modality", "[data]") {
  const auto ds2 = test::toy_dataset({2, 3}, 4000, 3, 2);
  const auto ds3 = test::toy_dataset({2, 3, 1}, 4000, 3, 2);
  for (double eta : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7}) {
    for (const auto* ds : {&ds2, &ds3}) {
      const auto masked = apply_missing_mask(*ds, eta, 5);
      REQUIRE_NOTHROW(validate(masked));
      const double mm = static_cast<double>(ds->modality_count());
      const double target = std::min(eta, (mm - 1.0) / mm);
      for (std::size_t m = 0; m < ds->modality_count(); ++m)
        CHECK(std::abs(absent_fraction(masked, m) - target) < 0.03);
    }
  }
  CHECK_THROWS_AS(apply_missing_mask(ds2, 1.0, 0), contract_error);
  CHECK_THROWS_AS(apply_missing_mask(ds2, -0.1, 0), contract_error);
}

TEST_CASE("calibrated cell rate inverts the redraw marginal", "[data]") {
  for (std::size_t m : {2u, 3u, 5u})
    for (double eta : {0.05, 0.2, 0.4}) {
      const double x = calibrated_cell_rate(eta, m);
      if (eta >= (m - 1.0) / m) continue;
      const double xm = std::pow(x, static_cast<double>(m));
      CHECK((x - xm) / (1.0 - xm) == Catch::Approx(eta).epsilon(1e-12));
    }
  CHECK(calibrated_cell_rate(0.5, 2) < 0.0);
  CHECK(calibrated_cell_rate(0.0, 3) == 0.0);
}

TEST_CASE("masking keeps existing absences", "[data]") {
  auto ds = test::toy_dataset({2, 2}, 200, 2, 8);
  for (std::size_t i = 0; i < 200; i += 2) ds.presence[i * 2 + 1] = 0;
  const auto masked = apply_missing_mask(ds, 0.3, 1);
  for (std::size_t i = 0; i < 200; i += 2) CHECK_FALSE(masked.present(i, 1));
}

TEST_CASE("split sizes and partition", "[data]") {
  const auto ds = test::toy_dataset({2}, 100, 2, 1);
  const auto [tr, va, te] = split_indices(100, {0.8, 0.1, 0.1, 3});
  CHECK(tr.size() == 80);
  CHECK(va.size() == 10);
  CHECK(te.size() == 10);
  std::set<std::size_t> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  all.insert(te.begin(), te.end());
  CHECK(all.size() == 100);
  CHECK(*all.rbegin() == 99);

  const auto again = split_indices(100, {0.8, 0.1, 0.1, 3});
  CHECK(std::get<0>(again) == tr);
  CHECK(std::get<2>(again) == te);

  const auto s = split(ds, {0.8, 0.1, 0.1, 3});
  CHECK(s.train.size() == 80);
  CHECK(s.test.labels[0] == ds.labels[te[0]]);
  CHECK_THROWS_AS(split_indices(100, {0.8, 0.1, 0.2, 0}), contract_error);
}

TEST_CASE("minibatch shapes and determinism", "[data]") {
  auto ds = test::toy_dataset({2, 2}, 14, 2, 1);
  for (std::size_t i = 10; i < 14; ++i) ds.presence[i * 2 + 0] = 0;
  const auto b = minibatches(ds, 0, 4, 77);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  std::set<std::size_t> seen;
  for (const auto& batch : b)
    for (auto i : batch) seen.insert(i);
  CHECK(seen.size() == 10);
  CHECK(*seen.rbegin() == 9);
  CHECK(minibatches(ds, 0, 4, 77) == b);
  CHECK(minibatches(ds, 1, 100, 1).size() == 1);
  CHECK(minibatches(ds, 1, 14, 1).size() == 1);
}

TEST_CASE("dataset round trip is exact", "[data]") {
  const auto dir = test::scratch_dir("dataset_rt");
  const auto ds = apply_missing_mask(generate_synthetic(test::small_spec(6)), 0.3, 2);
  save_dataset(ds, dir);
  CHECK(load_dataset(dir) == ds);
}

TEST_CASE("truncated dataset file is a parse error", "[data]") {
  const auto dir = test::scratch_dir("dataset_trunc");
  const auto ds = generate_synthetic(test::small_spec(6));
  save_dataset(ds, dir);
  auto bytes = binio::read_file(dir / "modality_1.bin");
  bytes.resize(bytes.size() - 3);
  binio::write_file(dir / "modality_1.bin", bytes);
  CHECK_THROWS_AS(load_dataset(dir), parse_error);
}

TEST_CASE("out-of-range label is a schema error", "[data]") {
  const auto dir = test::scratch_dir("dataset_label");
  auto ds = generate_synthetic(test::small_spec(6));
  save_dataset(ds, dir);
  auto bytes = binio::read_file(dir / "labels.bin");
  const std::uint32_t bad = 3;  // class_count is 3
  std::string enc;
  binio::append_u32(enc, std::span<const std::uint32_t>(&bad, 1));
  bytes.replace(4 * 5, 4, enc);
  binio::write_file(dir / "labels.bin", bytes);
  CHECK_THROWS_AS(load_dataset(dir), schema_error);
}

TEST_CASE("validator rejects broken invariants", "[data]") {
  auto ds = test::toy_dataset({2, 2}, 10, 2, 1);
  REQUIRE_NOTHROW(validate(ds));
  auto no_mod = ds;
  no_mod.presence[3 * 2] = no_mod.presence[3 * 2 + 1] = 0;
  CHECK_THROWS_AS(validate(no_mod), schema_error);
  auto bad_feat = ds;
  bad_feat.tables[1](2, 1) = std::nan("");
  CHECK_THROWS_AS(validate(bad_feat), schema_error);
  auto ragged = ds;
  ragged.labels.pop_back();
  CHECK_THROWS_AS(validate(ragged), schema_error);
}
