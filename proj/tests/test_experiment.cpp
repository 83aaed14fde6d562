#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mla/experiment.hpp"
#include "support.hpp"

using namespace mla;
using nlohmann::json;

namespace {

json minimal_config() {
  return json::parse(R"({
    "version": "mla-config/1",
    "dataset": {"synthetic": {"latent_dim": 4, "class_count": 3, "samples": 200, "seed": 2,
                              "modalities": [{"dim": 5, "mixing_scale": 2.0, "noise_std": 0.1},
                                             {"dim": 3, "mixing_scale": 2.0, "noise_std": 0.5}]}},
    "train": {"total_steps": 4, "hidden": [8], "embed_dim": 4},
    "output_dir": "out"
  })");
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config defaults and fields", "[experiment]") {
  const auto c = config_from_json(minimal_config());
  REQUIRE(c.synthetic.has_value());
  CHECK(c.synthetic->modalities.size() == 2);
  CHECK(c.synthetic->modalities[1].noise_std == 0.5);
  CHECK(c.train.total_steps == 4);
  CHECK(c.train.hidden == std::vector<std::size_t>{8});
  CHECK(c.train.lr == 0.001);
  CHECK(c.model == "mla");
  CHECK(c.output_dir == "out");
  CHECK(config_from_json(to_json(c)).output_dir == "out");
  CHECK(to_json(config_from_json(to_json(c))) == to_json(c));
}

TEST_CASE("config errors", "[experiment]") {
  auto j = minimal_config();
  j["version"] = "mla-config/2";
  CHECK_THROWS_AS(config_from_json(j), config_error);

  j = minimal_config();
  j["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_WITH(config_from_json(j), Catch::Matchers::ContainsSubstring("train.learning_rate"));

  j = minimal_config();
  j["dataset"]["path"] = "somewhere";
  CHECK_THROWS_AS(config_from_json(j), config_error);

  j = minimal_config();
  j["train"]["lr"] = "fast";
  CHECK_THROWS_AS(config_from_json(j), config_error);

  j = minimal_config();
  j["train"]["momentum"] = 1.5;
  CHECK_THROWS_AS(config_from_json(j), config_error);

  j = minimal_config();
  j["model"] = "bagging";
  CHECK_THROWS_AS(config_from_json(j), config_error);

  j = minimal_config();
  j["sweep"] = {{"etas", {0.1, 0.9}}};
  CHECK_THROWS_AS(config_from_json(j), config_error);
}

TEST_CASE("set overrides", "[experiment]") {
  auto j = minimal_config();
  apply_override(j, "train.lr=0.5");
  apply_override(j, "train.hgm=false");
  apply_override(j, "model=late");
  apply_override(j, "output_dir=runs/x=1");
  apply_override(j, "sweep.etas=[0,0.3]");
  const auto c = config_from_json(j);
  CHECK(c.train.lr == 0.5);
  CHECK_FALSE(c.train.hgm_enabled);
  CHECK(c.model == "late");
  CHECK(c.output_dir == "runs/x=1");
  CHECK(c.sweep_etas == std::vector<double>{0.0, 0.3});

  CHECK_THROWS_AS(apply_override(j, "novalue"), config_error);
  auto k = minimal_config();
  apply_override(k, "train.nonsense=3");
  CHECK_THROWS_AS(config_from_json(k), config_error);
}

TEST_CASE("benchmark preset", "[experiment]") {
  auto j = minimal_config();
  j["dataset"]["synthetic"] = {{"preset", "laziness"}, {"seed", 2}};
  const auto c = config_from_json(j);
  auto expect = laziness_benchmark(2);
  CHECK(to_json(*c.synthetic) == to_json(expect));
  CHECK(expect.latent_dim == 8);
  CHECK(expect.class_count == 4);
  CHECK(expect.samples == 6000);
  CHECK(expect.modalities[0].noise_std == 0.1);
  CHECK(expect.modalities[1].noise_std == 1.0);
}

TEST_CASE("run id ignores where results go", "[experiment]") {
  auto a = config_from_json(minimal_config());
  auto b = a;
  b.output_dir = "elsewhere";
  b.jobs = 4;
  CHECK(run_id_for(a) == run_id_for(b));
  CHECK(run_id_for(a).size() == 16);
  b.train.seed = 9;
  CHECK(run_id_for(a) != run_id_for(b));
}

TEST_CASE("experiment splits", "[experiment]") {
  auto c = config_from_json(minimal_config());
  const auto base = experiment_splits(c);
  CHECK(base.train.size() == 160);
  CHECK(std::all_of(base.test.presence.begin(), base.test.presence.end(), [](auto p) { return p == 1; }));
  c.missing_rate = 0.3;
  const auto masked = experiment_splits(c);
  const auto by_hand = mask_splits(split(generate_synthetic(*c.synthetic), c.split), 0.3, c.train.seed);
  CHECK(masked.test == by_hand.test);
  CHECK(masked.train == by_hand.train);
}

TEST_CASE("metrics stream round trip", "[experiment]") {
  const auto dir = test::scratch_dir("metrics_rt");
  MetricsRecord r;
  r.timestamp = 17;
  r.run_id = "abc";
  r.phase = "train";
  r.step = 3;
  r.metrics = {{"mean_loss", 0.1 + 0.2}, {"lr", 1e-3}};
  MetricsRecord e;
  e.run_id = "abc";
  e.phase = "sweep";
  e.eta = 0.3;
  e.labels = {{"seed", "2"}};
  e.metrics = {{"mla_multi", 2.0 / 3.0}};
  {
    MetricsWriter w(dir / "m.jsonl", true);
    w.write(r);
    w.write(e);
  }
  const auto back = read_metrics(dir / "m.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].metrics.at("mean_loss") == 0.1 + 0.2);
  CHECK(back[0].step == 3u);
  CHECK(back[0].timestamp == 17);
  CHECK_FALSE(back[0].eta.has_value());
  CHECK(back[1].eta == 0.3);
  CHECK(back[1].labels.at("seed") == "2");
  CHECK(back[1].metrics.at("mla_multi") == 2.0 / 3.0);

  MetricsWriter(dir / "m.jsonl", false).write(r);
  CHECK(lines_of(dir / "m.jsonl").size() == 3);
  MetricsWriter(dir / "m.jsonl", true).write(r);
  CHECK(lines_of(dir / "m.jsonl").size() == 1);

  r.metrics["bad"] = std::nan("");
  CHECK_THROWS_AS(MetricsWriter(dir / "n.jsonl", true).write(r), numeric_error);
}

TEST_CASE("malformed metrics name the line", "[experiment]") {
  const auto dir = test::scratch_dir("metrics_bad");
  MetricsRecord r;
  r.run_id = "x";
  r.phase = "train";
  {
    MetricsWriter w(dir / "m.jsonl", true);
    w.write(r);
    w.write(r);
  }
  {
    std::ofstream out(dir / "m.jsonl", std::ios::app);
    out << "{\"timestamp\": 0, \"run_id\": \n";
  }
  CHECK_THROWS_WITH(read_metrics(dir / "m.jsonl"), Catch::Matchers::ContainsSubstring("line 3"));
  CHECK_THROWS_AS(read_metrics(dir / "absent.jsonl"), io_error);
}

TEST_CASE("timestamps come from the environment", "[experiment]") {
  ::unsetenv("MLA_TIMESTAMP");
  CHECK(record_timestamp() == 0);
  ::setenv("MLA_TIMESTAMP", "1700000000", 1);
  CHECK(record_timestamp() == 1700000000);
  ::unsetenv("MLA_TIMESTAMP");
}

TEST_CASE("plot export", "[experiment]") {
  const auto dir = test::scratch_dir("plot_export");
  SECTION("empty input gives header-only files") {
    const auto n = export_plot({}, dir);
    CHECK(n.loss_rows == 0);
    CHECK(lines_of(dir / "loss_vs_step.csv") == std::vector<std::string>{"run_id,step,modality,mean_loss,lr"});
    CHECK(lines_of(dir / "accuracy_vs_eta.csv") == std::vector<std::string>{"run_id,eta,seed,mla_multi,late_multi"});
    CHECK(lines_of(dir / "gap_distances.csv") == std::vector<std::string>{"run_id,modality_a,modality_b,distance"});
  }
  SECTION("row counts and lossless numbers") {
    std::vector<MetricsRecord> recs;
    Rng rng(3);
    std::vector<double> losses;
    for (std::uint64_t t = 0; t < 5; ++t) {
      MetricsRecord r;
      r.run_id = "r";
      r.phase = "train";
      r.step = t;
      losses.push_back(rng.uniform() / 3.0);
      r.metrics = {{"modality", static_cast<double>(t % 2)}, {"mean_loss", losses.back()}, {"lr", 0.001}};
      recs.push_back(r);
    }
    for (double eta : {0.0, 0.1}) {
      MetricsRecord r;
      r.run_id = "r";
      r.phase = "sweep";
      r.eta = eta;
      r.labels = {{"seed", "0"}};
      r.metrics = {{"mla_multi", 0.9}, {"late_multi", 0.85}};
      recs.push_back(r);
    }
    MetricsRecord ev;
    ev.run_id = "r";
    ev.phase = "eval";
    ev.metrics = {{"multi", 0.9}, {"gap_0_1", std::sqrt(2.0)}};
    recs.push_back(ev);

    const auto n = export_plot(recs, dir);
    CHECK(n.loss_rows == 5);
    CHECK(n.accuracy_rows == 2);
    CHECK(n.gap_rows == 1);
    const auto loss = lines_of(dir / "loss_vs_step.csv");
    REQUIRE(loss.size() == 6);
    for (std::size_t t = 0; t < 5; ++t) {
      std::stringstream ss(loss[t + 1]);
      std::vector<std::string> cells;
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      REQUIRE(cells.size() == 5);
      CHECK(std::stod(cells[3]) == losses[t]);
    }
    CHECK(lines_of(dir / "gap_distances.csv")[1] == "r,0,1,1.4142135623730951");
    CHECK(lines_of(dir / "accuracy_vs_eta.csv")[2] == "r,0.10000000000000001,0,0.90000000000000002,0.84999999999999998");
  }
}
