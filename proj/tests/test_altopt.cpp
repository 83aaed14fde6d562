#include <catch_amalgamated.hpp>

#include <cmath>

#include "mla/altopt.hpp"
#include "support.hpp"

using namespace mla;

namespace {

// Identity encoder on 2-dim inputs (no hidden layers).
ModelParams linear_identity_model() {
  ModelParams p = init_params({{2}, {}, 2, 2}, 0);
  p.encoders[0].layers[0] = {Mat::identity(2), Vec{0.0, 0.0}};
  return p;
}

MultimodalDataset rows_dataset(std::initializer_list<std::initializer_list<double>> rows) {
  MultimodalDataset ds;
  ds.modality_dims = {2};
  ds.class_count = 2;
  ds.tables = {Mat::from_rows(rows)};
  ds.labels.assign(rows.size(), 0);
  ds.presence.assign(rows.size(), 1);
  return ds;
}

TrainConfig small_config() {
  TrainConfig c;
  c.total_steps = 6;
  c.lr = 0.01;
  c.batch_size = 32;
  c.hidden = {8};
  c.embed_dim = 4;
  return c;
}

}  // namespace

TEST_CASE("modality schedule cycles", "[altopt]") {
  CHECK(modality_at(0, 3) == 0);
  CHECK(modality_at(5, 3) == 2);
  std::vector<int> counts(3, 0);
  for (std::uint64_t t = 0; t < 9; ++t) ++counts[modality_at(t, 3)];
  CHECK(counts == std::vector<int>{3, 3, 3});
}

TEST_CASE("average feature", "[altopt]") {
  const auto p = linear_identity_model();
  CHECK(*average_feature(p, 0, rows_dataset({{0.5, -3.0}})) == Vec{0.5, -3.0});
  CHECK(*average_feature(p, 0, rows_dataset({{0, 2}, {2, 0}})) == Vec{1.0, 1.0});

  auto c = p;
  c.encoders[0].layers[0] = {Mat(2, 2), Vec{4.0, -1.5}};
  CHECK(*average_feature(c, 0, rows_dataset({{1, 2}, {3, 4}, {5, 6}})) == Vec{4.0, -1.5});

  auto absent = rows_dataset({{1, 1}});
  absent.presence[0] = 0;
  CHECK_FALSE(average_feature(p, 0, absent).has_value());
}

TEST_CASE("RLS update small cases", "[altopt]") {
  const auto p0 = ModMatrix::identity(2, 1.0);
  const Vec h{1.0, 0.0};
  CHECK(rls_gain(p0, h) == Vec{0.5, 0.0});
  const auto p1 = update_mod_matrix(p0, h);
  CHECK(p1.p == Mat::from_rows({{0.5, 0.0}, {0.0, 1.0}}));
  const auto p2 = update_mod_matrix(p1, h);
  CHECK(p2.p(0, 0) == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(p2.p(1, 1) == 1.0);
  CHECK(p2.p(0, 1) == 0.0);

  CHECK(rls_gain(p1, Vec{0.0, 0.0}) == Vec{0.0, 0.0});
  CHECK(update_mod_matrix(p1, Vec{0.0, 0.0}) == p1);
}

TEST_CASE("RLS recursion equals the closed form inverse", "[altopt]") {
  Rng rng(8);
  for (double alpha : {0.1, 1.0, 10.0}) {
    const std::size_t s = 5;
    auto mm = ModMatrix::identity(s, alpha);
    Mat acc = Mat::identity(s);
    for (int n = 0; n < 30; ++n) {
      const Vec h = test::random_vec(s, rng);
      const Vec q = rls_gain(mm, h);
      mm = update_mod_matrix(mm, h);
      const Vec ph = matvec(mm.p, h);
      for (std::size_t i = 0; i < s; ++i) CHECK(std::abs(ph[i] - alpha * q[i]) <= 1e-10);
      const Mat hh = outer(h, h);
      for (std::size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += hh.data[k] / alpha;
    }
    CHECK(frobenius_distance(mm.p, inverse(acc)) <= 1e-8);
    CHECK(max_asymmetry(mm.p) == 0.0);
    CHECK(cholesky_ok(mm.p));
  }
}

TEST_CASE("gradient modification", "[altopt]") {
  Rng rng(9);
  const HeadParams g{test::random_mat(2, 3, rng), test::random_vec(3, rng)};
  CHECK(modify_gradient(ModMatrix::identity(2, 1.0), g, 4) == g);

  const ModMatrix p{Mat::from_rows({{0.5, 0.0}, {0.0, 1.0}}), 1.0};
  CHECK(modify_gradient(p, g, 0) == g);

  const HeadParams ones{Mat(2, 1, 1.0), Vec{0.25}};
  const auto m = modify_gradient(p, ones, 1);
  CHECK(m.weight(0, 0) == 0.5);
  CHECK(m.weight(1, 0) == 1.0);
  CHECK(m.bias == Vec{0.25});
}

TEST_CASE("M steps touch every encoder exactly once", "[altopt]") {
  const auto ds = generate_synthetic(test::small_spec(1, 300));
  auto c = small_config();
  TrainState st = init_state(c, ds);
  const auto init = st.params;
  train_step(st, ds, c);
  CHECK_FALSE(st.params.encoders[0] == init.encoders[0]);
  CHECK(st.params.encoders[1] == init.encoders[1]);
  train_step(st, ds, c);
  CHECK_FALSE(st.params.encoders[1] == init.encoders[1]);
  REQUIRE(st.history.size() == 2);
  CHECK(st.history[0].modality == 0);
  CHECK(st.history[1].modality == 1);
  CHECK(st.history[0].samples == 300);
}

TEST_CASE("HGM off keeps P at identity and ignores alpha", "[altopt]") {
  const auto ds = generate_synthetic(test::small_spec(2, 300));
  auto c = small_config();
  c.hgm_enabled = false;
  const auto a = train(c, ds);
  c.alpha = 50.0;
  const auto b = train(c, ds);
  CHECK(a.mod_matrix.p == Mat::identity(c.embed_dim));
  CHECK(a.params == b.params);

  c.hgm_enabled = true;
  const auto on = train(c, ds);
  CHECK_FALSE(on.params.head == a.params.head);
  CHECK(on.params.encoders[0] == train(c, ds).params.encoders[0]);
}

TEST_CASE("zero steps returns the initial parameters", "[altopt]") {
  const auto ds = generate_synthetic(test::small_spec(3, 200));
  auto c = small_config();
  c.total_steps = 0;
  const auto r = train(c, ds);
  CHECK(r.params == init_params(model_dims(c, ds), c.seed));
  CHECK(r.history.empty());
}

TEST_CASE("training is deterministic", "[altopt]") {
  const auto ds = generate_synthetic(test::small_spec(4, 300));
  const auto c = small_config();
  const auto a = train(c, ds), b = train(c, ds);
  CHECK(a.history == b.history);
  CHECK(a.params == b.params);
  CHECK(a.mod_matrix == b.mod_matrix);
}

TEST_CASE("per-modality loss falls on a separable toy set", "[altopt]") {
  SyntheticSpec s = test::small_spec(5, 800);
  s.modalities = {{6, 3.0, 0.0}, {6, 3.0, 0.0}};
  const auto ds = generate_synthetic(s);
  auto c = small_config();
  c.total_steps = 12;
  const auto r = train(c, ds);
  int violations = 0;
  for (std::size_t t = 0; t + 2 < r.history.size(); ++t)
    if (!(r.history[t + 2].mean_loss < r.history[t].mean_loss)) ++violations;
  CHECK(violations <= 1);
}

TEST_CASE("absent modality skips its step", "[altopt]") {
  auto ds = generate_synthetic(test::small_spec(6, 100));
  for (std::size_t i = 0; i < ds.size(); ++i) ds.presence[i * 2 + 1] = 0;
  auto c = small_config();
  c.total_steps = 2;
  const auto r = train(c, ds);
  CHECK(r.history[1].samples == 0);
  CHECK(r.params.encoders[1] == init_params(model_dims(c, ds), c.seed).encoders[1]);
}

TEST_CASE("invalid training config is rejected", "[altopt]") {
  const auto ds = generate_synthetic(test::small_spec(1, 100));
  auto c = small_config();
  c.momentum = 1.0;
  CHECK_THROWS_AS(train(c, ds), contract_error);
  c = small_config();
  c.alpha = 0.0;
  CHECK_THROWS_AS(train(c, ds), contract_error);
}

TEST_CASE("learning rate decay", "[altopt]") {
  TrainConfig c;
  c.lr = 0.1;
  c.decay_ratio = 0.5;
  c.decay_steps = {10, 20};
  CHECK(lr_at(c, 0) == 0.1);
  CHECK(lr_at(c, 10) == 0.05);
  CHECK(lr_at(c, 25) == 0.025);
}
