#pragma once

// Alternating unimodal training: one modality per step, a shared head whose
// weight gradients are premultiplied by an RLS-maintained modification matrix.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mla/data.hpp"
#include "mla/error.hpp"
#include "mla/model.hpp"
#include "mla/numkernel.hpp"

namespace mla {

// P starts as the identity. After updates with h_1..h_n it equals
// (I + (1/alpha) sum h_i h_i^T)^-1.
struct ModMatrix {
  Mat p;
  double alpha = 1.0;

  static ModMatrix identity(std::size_t s, double alpha) {
    detail::require(alpha > 0.0, "ModMatrix: alpha must be positive");
    return {Mat::identity(s), alpha};
  }

  bool operator==(const ModMatrix&) const = default;
};

struct TrainConfig {
  std::uint64_t total_steps = 60;
  double lr = 0.001;
  double momentum = 0.9;
  double decay_ratio = 0.1;
  std::vector<std::uint64_t> decay_steps;  // lr is multiplied by decay_ratio at each listed step
  std::size_t batch_size = 64;
  double alpha = 1.0;
  bool hgm_enabled = true;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{32, 32};
  std::size_t embed_dim = 16;
};

inline void validate(const TrainConfig& c) {
  detail::require(c.lr > 0.0 && std::isfinite(c.lr), "train config: lr must be positive");
  detail::require(c.momentum >= 0.0 && c.momentum < 1.0, "train config: momentum must lie in [0, 1)");
  detail::require(c.decay_ratio > 0.0 && c.decay_ratio <= 1.0, "train config: decay_ratio must lie in (0, 1]");
  detail::require(c.batch_size >= 1, "train config: batch_size must be >= 1");
  detail::require(c.alpha > 0.0 && std::isfinite(c.alpha), "train config: alpha must be positive");
  detail::require(c.embed_dim >= 1, "train config: embed_dim must be >= 1");
}

// Learning rate in effect at step t.
inline double lr_at(const TrainConfig& c, std::uint64_t t) {
  double lr = c.lr;
  for (auto s : c.decay_steps)
    if (t >= s) lr *= c.decay_ratio;
  return lr;
}

inline ModelDims model_dims(const TrainConfig& c, const MultimodalDataset& ds) {
  return {ds.modality_dims, c.hidden, c.embed_dim, ds.class_count};
}

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t modality = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  std::size_t samples = 0;  // 0 when the modality had no present samples and the step was skipped

  bool operator==(const StepRecord&) const = default;
};

struct TrainState {
  std::uint64_t step = 0;
  ModelParams params;
  ModMatrix mod_matrix;
  std::vector<EncoderParams> encoder_velocity;
  HeadParams head_velocity;
  std::vector<StepRecord> history;
};

inline TrainState init_state(const TrainConfig& c, const MultimodalDataset& ds) {
  validate(c);
  TrainState s;
  s.params = init_params(model_dims(c, ds), c.seed);
  s.mod_matrix = ModMatrix::identity(c.embed_dim, c.alpha);
  for (const auto& e : s.params.encoders) s.encoder_velocity.push_back(zeros_like(e));
  s.head_velocity = zeros_like(s.params.head);
  return s;
}

inline std::size_t modality_at(std::uint64_t t, std::size_t modalities) {
  detail::require(modalities >= 1, "modality_at: modality count must be >= 1");
  return static_cast<std::size_t>(t % modalities);
}

// Mean encoder output over every training row where modality m is present;
// nullopt when there is none.
inline std::optional<Vec> average_feature(const ModelParams& params, std::size_t m, const MultimodalDataset& ds) {
  const auto idx = present_indices(ds, m);
  if (idx.empty()) return std::nullopt;
  return column_mean(encode(params, m, gather_rows(ds.tables[m], idx)));
}

// Rank-one RLS update: q = P h / (alpha + h^T P h), P' = P - q h^T P.
// The result is re-symmetrized as (P' + P'^T) / 2.
inline ModMatrix update_mod_matrix(const ModMatrix& mm, std::span<const double> hbar) {
  const std::size_t s = mm.p.rows;
  detail::require(hbar.size() == s, "update_mod_matrix: hbar length differs from s");
  const Vec ph = matvec(mm.p, hbar);
  const double denom = mm.alpha + dot(hbar, ph);
  Vec q(s);
  for (std::size_t i = 0; i < s; ++i) q[i] = ph[i] / denom;
  // h^T P as a row vector; equals (P h)^T only up to rounding when P is symmetric.
  Vec htp(s, 0.0);
  for (std::size_t j = 0; j < s; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s; ++i) acc += hbar[i] * mm.p(i, j);
    htp[j] = acc;
  }
  ModMatrix out{mm.p, mm.alpha};
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) out.p(i, j) -= q[i] * htp[j];
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = i + 1; j < s; ++j) {
      const double avg = 0.5 * (out.p(i, j) + out.p(j, i));
      out.p(i, j) = avg;
      out.p(j, i) = avg;
    }
  return out;
}

// The q vector of the update that `update_mod_matrix(mm, hbar)` would apply.
inline Vec rls_gain(const ModMatrix& mm, std::span<const double> hbar) {
  const Vec ph = matvec(mm.p, hbar);
  const double denom = mm.alpha + dot(hbar, ph);
  Vec q(ph.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = ph[i] / denom;
  return q;
}

// At t = 0 the head gradient is used as is. Afterwards every column of the
// s x C weight gradient is premultiplied by P; the bias gradient passes through.
inline HeadParams modify_gradient(const ModMatrix& mm, const HeadParams& g, std::uint64_t t) {
  detail::require(g.weight.rows == mm.p.rows, "modify_gradient: head input dim differs from s");
  if (t == 0) return g;
  return {matmul(mm.p, g.weight), g.bias};
}

// One alternation step: a full shuffled epoch over the scheduled modality's
// present samples, then the RLS fold-in of that modality's average feature.
inline void train_step(TrainState& state, const MultimodalDataset& ds, const TrainConfig& config) {
  const std::uint64_t t = state.step;
  const std::size_t m = modality_at(t, ds.modality_count());
  const double lr = lr_at(config, t);
  StepRecord rec{t, m, 0.0, lr, 0};

  const auto batches = minibatches(ds, m, config.batch_size, derive_seed(config.seed, stream::batches, t));
  double loss_sum = 0.0;
  for (const auto& batch : batches) {
    const Mat x = gather_rows(ds.tables[m], batch);
    const std::vector<std::uint32_t> y = gather_labels(ds, batch);

    const GradBundle g = loss_and_grads(state.params, m, x, y);
    if (!std::isfinite(g.loss)) throw numeric_error("non-finite loss", t);
    sgd_update(state.params.encoders[m], g.encoder, state.encoder_velocity[m], lr, config.momentum);
    const HeadParams head_grad = config.hgm_enabled ? modify_gradient(state.mod_matrix, g.head, t) : g.head;
    sgd_update(state.params.head, head_grad, state.head_velocity, lr, config.momentum);
    loss_sum += g.loss * static_cast<double>(batch.size());
    rec.samples += batch.size();
  }
  if (!all_finite(state.params.encoders[m]) || !all_finite(state.params.head))
    throw numeric_error("non-finite parameters", t);

  if (rec.samples > 0) {
    rec.mean_loss = loss_sum / static_cast<double>(rec.samples);
    if (config.hgm_enabled) {
      const auto hbar = average_feature(state.params, m, ds);
      state.mod_matrix = update_mod_matrix(state.mod_matrix, *hbar);
      if (!all_finite(state.mod_matrix.p.data)) throw numeric_error("non-finite modification matrix", t);
    }
  }
  state.history.push_back(rec);
  state.step = t + 1;
}

struct TrainResult {
  ModelParams params;
  ModMatrix mod_matrix;
  std::vector<StepRecord> history;
};

inline TrainResult train(const TrainConfig& config, const MultimodalDataset& ds) {
  validate(ds);
  TrainState state = init_state(config, ds);
  for (std::uint64_t t = 0; t < config.total_steps; ++t) train_step(state, ds, config);
  return {std::move(state.params), std::move(state.mod_matrix), std::move(state.history)};
}

}  // namespace mla
