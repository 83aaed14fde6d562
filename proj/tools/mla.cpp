// mla: command-line driver for generating data, training, evaluating, sweeping
// missing rates, running the ablation grid and exporting plot data.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "mla/altopt.hpp"
#include "mla/baselines.hpp"
#include "mla/checkpoint.hpp"
#include "mla/data.hpp"
#include "mla/error.hpp"
#include "mla/eval.hpp"
#include "mla/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum exit_code : int { ok = 0, usage = 2, io = 3, numeric = 4 };

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("mla");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* lvl = std::getenv("MLA_LOG");
  const std::string v = lvl ? lvl : "info";
  if (v == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (v == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
    if (v != "info") spdlog::warn("MLA_LOG={} is not one of error, info, debug; using info", v);
  }
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw mla::io_error("cannot create " + p.string() + ": " + ec.message());
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--set", c.overrides, "override a config field, key.path=value (repeatable)");
}

mla::ExperimentConfig load(const Common& c) {
  if (!fs::exists(c.config)) throw mla::io_error("config file not found: " + c.config);
  auto cfg = mla::load_config(c.config, c.overrides);
  spdlog::debug("config: {}", mla::to_json(cfg).dump());
  return cfg;
}

mla::MetricsRecord record(const mla::ExperimentConfig& cfg, const char* phase) {
  mla::MetricsRecord r;
  r.timestamp = mla::record_timestamp();
  r.run_id = mla::run_id_for(cfg);
  r.phase = phase;
  return r;
}

int cmd_generate(const mla::ExperimentConfig& cfg) {
  if (!cfg.synthetic) throw mla::config_error("generate needs dataset.synthetic in the config");
  const auto ds = mla::generate_synthetic(*cfg.synthetic);
  const fs::path dir = fs::path(cfg.output_dir) / "dataset";
  mla::save_dataset(ds, dir);
  json summary{{"path", dir.string()}, {"N", ds.size()}, {"M", ds.modality_count()}, {"C", ds.class_count},
               {"modality_dims", ds.modality_dims}};
  std::cout << summary.dump(2) << '\n';
  return ok;
}

int cmd_train(const mla::ExperimentConfig& cfg) {
  const mla::Splits splits = mla::experiment_splits(cfg);
  const fs::path out = cfg.output_dir;
  make_dir(out);
  mla::MetricsWriter metrics(out / "metrics.jsonl", true);
  mla::Checkpoint ckpt;
  spdlog::info("training {} on {} rows for {} steps", cfg.model, splits.train.size(), cfg.train.total_steps);

  if (cfg.model == "mla") {
    mla::TrainState state = mla::init_state(cfg.train, splits.train);
    while (state.step < cfg.train.total_steps) {
      try {
        mla::train_step(state, splits.train, cfg.train);
      } catch (const mla::numeric_error& e) {
        spdlog::error("numeric failure: {}", e.what());
        throw;
      }
      const mla::StepRecord& s = state.history.back();
      auto r = record(cfg, "train");
      r.step = s.step;
      r.metrics = {{"modality", static_cast<double>(s.modality)}, {"mean_loss", s.mean_loss}, {"lr", s.lr},
                   {"samples", static_cast<double>(s.samples)}};
      metrics.write(r);
      spdlog::debug("step {} modality {} loss {:.6f}", s.step, s.modality, s.mean_loss);
    }
    ckpt = {std::move(state.params), state.step};
  } else if (cfg.model == "concat") {
    ckpt = {mla::train_concat(cfg.train, splits.train), cfg.train.total_steps};
  } else {
    ckpt = {mla::train_late_fusion(cfg.train, splits.train), cfg.train.total_steps};
  }
  mla::save_checkpoint(ckpt, out / "checkpoint");
  spdlog::info("checkpoint written to {}", (out / "checkpoint").string());
  return ok;
}

int cmd_eval(const mla::ExperimentConfig& cfg, const std::string& ckpt_arg) {
  const fs::path out = cfg.output_dir;
  const fs::path ckpt_dir = ckpt_arg.empty() ? out / "checkpoint" : fs::path(ckpt_arg);
  const mla::Checkpoint ckpt = mla::load_checkpoint(ckpt_dir);
  const mla::MultimodalDataset test = mla::experiment_splits(cfg).test;

  const mla::ModelDims& dims = mla::detail::dims_of(ckpt.model);
  if (dims.input_dims != test.modality_dims || dims.class_count != test.class_count)
    throw mla::schema_error("checkpoint dims do not match the dataset");

  const mla::EvalReport report =
      std::visit([&](const auto& m) { return mla::evaluate(m, test, cfg.dynamic_fusion); }, ckpt.model);
  json doc{{"run_id", mla::run_id_for(cfg)}, {"kind", mla::model_kind(ckpt.model)}, {"step", ckpt.step}};
  doc["report"] = mla::to_json(report);

  auto r = record(cfg, "eval");
  r.step = ckpt.step;
  r.labels["kind"] = mla::model_kind(ckpt.model);
  mla::add_report_metrics(r, report);
  if (cfg.gap && test.modality_count() > 1 && !mla::paired_indices(test).empty()) {
    const auto gap = std::visit([&](const auto& m) { return mla::modality_gap(m.encoders, test); }, ckpt.model);
    doc["gap"] = mla::to_json(gap);
    for (std::size_t a = 0; a < gap.distances.rows; ++a)
      for (std::size_t b = a + 1; b < gap.distances.cols; ++b)
        r.metrics["gap_" + std::to_string(a) + "_" + std::to_string(b)] = gap.distances(a, b);
  }

  make_dir(out);
  mla::binio::write_json(out / "eval.json", doc);
  mla::MetricsWriter(out / "metrics.jsonl", false).write(r);
  std::cout << doc.dump(2) << '\n';
  return ok;
}

int cmd_sweep(mla::ExperimentConfig cfg, unsigned jobs) {
  if (jobs > 0) cfg.jobs = jobs;
  const mla::Splits base = mla::base_splits(cfg);
  const fs::path out = cfg.output_dir;
  make_dir(out);
  mla::MetricsWriter metrics(out / "sweep.jsonl", true);
  json rows = json::array();
  auto on_row = [&](const mla::SweepRow& row) {
    for (const auto& run : row.runs) {
      auto r = record(cfg, "sweep");
      r.eta = row.eta;
      r.labels["seed"] = std::to_string(run.seed);
      r.metrics["mla_multi"] = run.mla.multi;
      r.metrics["late_multi"] = run.late_fusion.multi;
      for (std::size_t m = 0; m < run.mla.probes.size(); ++m) {
        if (run.mla.probes[m]) r.metrics["mla_probe_" + std::to_string(m)] = *run.mla.probes[m];
        if (run.late_fusion.probes[m]) r.metrics["late_probe_" + std::to_string(m)] = *run.late_fusion.probes[m];
      }
      metrics.write(r);
    }
    rows.push_back({{"eta", row.eta}, {"mla_multi", row.mean_mla_multi}, {"late_multi", row.mean_late_multi}});
    spdlog::info("eta {:.2f}: mla {:.4f} late {:.4f}", row.eta, row.mean_mla_multi, row.mean_late_multi);
  };
  mla::missing_sweep(cfg.train, base, cfg.sweep_etas, cfg.sweep_seeds, cfg.jobs, on_row);
  std::cout << json{{"run_id", mla::run_id_for(cfg)}, {"seeds", cfg.sweep_seeds}, {"rows", rows}}.dump(2) << '\n';
  return ok;
}

int cmd_ablate(const mla::ExperimentConfig& cfg) {
  const mla::Splits splits = mla::experiment_splits(cfg);
  const fs::path out = cfg.output_dir;
  make_dir(out);
  mla::MetricsWriter metrics(out / "ablate.jsonl", true);
  json cells = json::array();
  for (const auto& cell : mla::ablate(cfg.train, splits.train, splits.test)) {
    auto r = record(cfg, "ablate");
    r.labels = {{"hgm", cell.hgm ? "on" : "off"}, {"dynamic_fusion", cell.dynamic_fusion ? "on" : "off"}};
    mla::add_report_metrics(r, cell.report);
    metrics.write(r);
    cells.push_back({{"hgm", cell.hgm}, {"dynamic_fusion", cell.dynamic_fusion}, {"report", mla::to_json(cell.report)}});
  }
  std::cout << json{{"run_id", mla::run_id_for(cfg)}, {"cells", cells}}.dump(2) << '\n';
  return ok;
}

int cmd_export_plot(const std::vector<std::string>& inputs, std::string out) {
  std::vector<mla::MetricsRecord> all;
  for (const auto& p : inputs) {
    auto recs = mla::read_metrics(p);
    all.insert(all.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  if (out.empty()) out = fs::path(inputs.front()).parent_path().string();
  if (out.empty()) out = ".";
  const auto n = mla::export_plot(all, out);
  std::cout << json{{"out_dir", out}, {"loss_vs_step", n.loss_rows}, {"accuracy_vs_eta", n.accuracy_rows},
                    {"gap_distances", n.gap_rows}}
                   .dump(2)
            << '\n';
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Alternating unimodal adaptation for multimodal learning"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, sweep_opts, ablate_opts;
  auto* gen = app.add_subcommand("generate", "write the configured synthetic dataset to <output_dir>/dataset");
  add_common(gen, gen_opts);
  auto* trn = app.add_subcommand("train", "train the configured model; writes metrics.jsonl and checkpoint/");
  add_common(trn, train_opts);
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split; writes eval.json");
  add_common(evl, eval_opts);
  std::string ckpt_dir;
  evl->add_option("--checkpoint", ckpt_dir, "checkpoint directory (default <output_dir>/checkpoint)");
  auto* swp = app.add_subcommand("sweep", "missing-rate sweep of MLA against late fusion; writes sweep.jsonl");
  add_common(swp, sweep_opts);
  unsigned jobs = 0;
  swp->add_option("-j,--jobs", jobs, "seeds trained concurrently per missing rate")->check(CLI::PositiveNumber);
  auto* abl = app.add_subcommand("ablate", "HGM x dynamic-fusion grid; writes ablate.jsonl");
  add_common(abl, ablate_opts);
  auto* exp = app.add_subcommand("export-plot", "turn metrics JSONL files into CSV plot data");
  std::vector<std::string> inputs;
  std::string out_dir;
  exp->add_option("metrics", inputs, "metrics JSONL file(s)")->required();
  exp->add_option("-o,--out", out_dir, "output directory (default: next to the first input)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return usage;
  }

  try {
    if (*gen) return cmd_generate(load(gen_opts));
    if (*trn) return cmd_train(load(train_opts));
    if (*evl) return cmd_eval(load(eval_opts), ckpt_dir);
    if (*swp) return cmd_sweep(load(sweep_opts), jobs);
    if (*abl) return cmd_ablate(load(ablate_opts));
    if (*exp) {
      try {
        return cmd_export_plot(inputs, out_dir);
      } catch (const mla::parse_error& e) {
        spdlog::error("{}", e.what());
        return io;
      }
    }
  } catch (const mla::config_error& e) {
    spdlog::error("config: {}", e.what());
    return usage;
  } catch (const mla::io_error& e) {
    spdlog::error("{}", e.what());
    return io;
  } catch (const mla::numeric_error& e) {
    spdlog::error("{}", e.what());
    return numeric;
  } catch (const mla::parse_error& e) {
    spdlog::error("{}", e.what());
    return usage;
  } catch (const mla::schema_error& e) {
    spdlog::error("{}", e.what());
    return usage;
  } catch (const mla::contract_error& e) {
    spdlog::error("{}", e.what());
    return usage;
  }
  return usage;
}
