#pragma once

// Evaluation reports, the HGM x DF ablation grid, missing-rate sweeps and the
// modality-gap diagnostic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "mla/altopt.hpp"
#include "mla/baselines.hpp"
#include "mla/data.hpp"
#include "mla/error.hpp"
#include "mla/fusion.hpp"

namespace mla {

inline double accuracy(std::span<const std::uint32_t> predictions, std::span<const std::uint32_t> labels) {
  return match_fraction(predictions, labels);
}

struct EvalReport {
  std::vector<std::optional<double>> probes;           // per modality; nullopt if not evaluable
  double multi = 0.0;                                   // fused accuracy over every test row
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted], fused predictions
  std::size_t samples = 0;

  bool operator==(const EvalReport&) const = default;
};

template <typename Model>
EvalReport evaluate(const Model& model, const MultimodalDataset& test, bool dynamic_fusion = true) {
  validate(test);
  EvalReport r;
  for (std::size_t m = 0; m < test.modality_count(); ++m) r.probes.push_back(unimodal_probe(model, m, test));
  const auto pred = fused_predictions(model, test, dynamic_fusion);
  r.multi = accuracy(pred, test.labels);
  r.samples = test.size();
  r.confusion.assign(test.class_count, std::vector<std::uint64_t>(test.class_count, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++r.confusion[test.labels[i]][pred[i]];
  return r;
}

// ---------------------------------------------------------------------------
// Ablation grid.

struct AblationCell {
  bool hgm = true;
  bool dynamic_fusion = true;
  EvalReport report;
};

// Cells in order (HGM, DF) = (on, on), (on, off), (off, on), (off, off). DF only
// changes inference, so one model is trained per HGM setting.
inline std::vector<AblationCell> ablate(const TrainConfig& config, const MultimodalDataset& train_set,
                                        const MultimodalDataset& test_set) {
  std::vector<AblationCell> cells;
  for (bool hgm : {true, false}) {
    TrainConfig c = config;
    c.hgm_enabled = hgm;
    const TrainResult trained = train(c, train_set);
    for (bool df : {true, false}) cells.push_back({hgm, df, evaluate(trained.params, test_set, df)});
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Missing-rate sweep.

struct SweepRun {
  std::uint64_t seed = 0;
  EvalReport mla;
  EvalReport late_fusion;
};

struct SweepRow {
  double eta = 0.0;
  std::vector<SweepRun> runs;  // in the order of the seed list
  double mean_mla_multi = 0.0;
  double mean_late_multi = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;  // eta strictly increasing
  std::vector<std::uint64_t> seeds;
};

// One (eta, seed) cell: mask train and test independently, train both models from scratch.
inline SweepRun sweep_run(const TrainConfig& config, const Splits& base, double eta, std::uint64_t seed) {
  const Splits masked = mask_splits(base, eta, seed);
  TrainConfig c = config;
  c.seed = seed;
  SweepRun run;
  run.seed = seed;
  run.mla = evaluate(train(c, masked.train).params, masked.test, true);
  run.late_fusion = evaluate(train_late_fusion(c, masked.train), masked.test);
  return run;
}

// Rows are produced in ascending eta order and handed to `on_row` as each one
// completes. With `jobs` > 1 the seeds of a row run concurrently; results are
// keyed by seed index, so the report does not depend on completion order.
inline SweepReport missing_sweep(const TrainConfig& config, const Splits& base, std::vector<double> etas,
                                 const std::vector<std::uint64_t>& seeds, unsigned jobs = 1,
                                 const std::function<void(const SweepRow&)>& on_row = {}) {
  detail::require(!etas.empty() && !seeds.empty(), "missing_sweep: need at least one eta and one seed");
  std::sort(etas.begin(), etas.end());
  for (std::size_t i = 0; i < etas.size(); ++i) {
    detail::require(etas[i] >= 0.0 && etas[i] <= 0.7, "missing_sweep: eta must lie in [0, 0.7]");
    detail::require(i == 0 || etas[i] > etas[i - 1], "missing_sweep: eta values must be distinct");
  }

  SweepReport report;
  report.seeds = seeds;
  for (double eta : etas) {
    std::map<std::size_t, SweepRun> done;
    if (jobs <= 1) {
      for (std::size_t s = 0; s < seeds.size(); ++s) done.emplace(s, sweep_run(config, base, eta, seeds[s]));
    } else {
      for (std::size_t at = 0; at < seeds.size(); at += jobs) {
        std::vector<std::pair<std::size_t, std::future<SweepRun>>> pending;
        for (std::size_t s = at; s < std::min(seeds.size(), at + jobs); ++s)
          pending.emplace_back(s, std::async(std::launch::async, sweep_run, std::cref(config), std::cref(base), eta, seeds[s]));
        for (auto& [s, fut] : pending) done.emplace(s, fut.get());
      }
    }
    SweepRow row;
    row.eta = eta;
    for (auto& [s, run] : done) {
      row.mean_mla_multi += run.mla.multi;
      row.mean_late_multi += run.late_fusion.multi;
      row.runs.push_back(std::move(run));
    }
    row.mean_mla_multi /= static_cast<double>(seeds.size());
    row.mean_late_multi /= static_cast<double>(seeds.size());
    if (on_row) on_row(row);
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Modality gap: distance between unit-normalized centroids of unit-normalized embeddings.

struct GapReport {
  std::vector<Vec> centroids;
  Mat distances;  // M x M, symmetric, zero diagonal
};

inline GapReport modality_gap(const std::vector<EncoderParams>& encoders, const MultimodalDataset& ds) {
  const auto rows = paired_indices(ds);
  detail::require(!rows.empty(), "modality_gap: no sample has every modality present");
  const std::size_t mcount = ds.modality_count();
  detail::require(encoders.size() == mcount, "modality_gap: encoder count differs from modality count");
  GapReport g;
  for (std::size_t m = 0; m < mcount; ++m) {
    const Mat f = encode(encoders[m], gather_rows(ds.tables[m], rows));
    Vec c(f.cols, 0.0);
    for (std::size_t i = 0; i < f.rows; ++i) {
      const auto r = f.row(i);
      const double n = norm2(r);
      if (n == 0.0) continue;
      for (std::size_t j = 0; j < f.cols; ++j) c[j] += r[j] / n;
    }
    const double n = norm2(c);
    detail::require(n > 0.0, "modality_gap: modality has a degenerate (zero) centroid");
    for (double& v : c) v /= n;
    g.centroids.push_back(std::move(c));
  }
  g.distances = Mat(mcount, mcount);
  for (std::size_t a = 0; a < mcount; ++a)
    for (std::size_t b = a + 1; b < mcount; ++b) {
      detail::require(g.centroids[a].size() == g.centroids[b].size(), "modality_gap: embedding widths differ");
      double acc = 0.0;
      for (std::size_t j = 0; j < g.centroids[a].size(); ++j) {
        const double d = g.centroids[a][j] - g.centroids[b][j];
        acc += d * d;
      }
      g.distances(a, b) = g.distances(b, a) = std::sqrt(acc);
    }
  return g;
}

inline GapReport modality_gap(const ModelParams& params, const MultimodalDataset& ds) {
  return modality_gap(params.encoders, ds);
}

}  // namespace mla
