#pragma once

// Jointly trained comparators (concatenation fusion, late fusion) and the
// unimodal probe protocol shared by every model type.
//
// Training budget: ceil(T / M) epochs, so each encoder sees as many epochs as
// it does under alternating training with T steps. Epoch e uses the learning
// rate of alternation step e * M, and the batch order of modality m in epoch e
// is seeded like alternation step e * M + m.

#include <cstdint>
#include <optional>
#include <vector>

#include "mla/altopt.hpp"
#include "mla/data.hpp"
#include "mla/error.hpp"
#include "mla/fusion.hpp"
#include "mla/model.hpp"

namespace mla {

struct ConcatModel {
  ModelDims dims;
  std::vector<EncoderParams> encoders;
  HeadParams head;  // (M * s) x C

  bool operator==(const ConcatModel&) const = default;
};

struct LateFusionModel {
  ModelDims dims;
  std::vector<EncoderParams> encoders;
  std::vector<HeadParams> heads;  // one s x C head per modality
  std::vector<bool> trained;

  bool operator==(const LateFusionModel&) const = default;
};

inline std::uint64_t baseline_epochs(const TrainConfig& c, std::size_t modalities) {
  return (c.total_steps + modalities - 1) / modalities;
}

// ---------------------------------------------------------------------------
// Concatenation fusion.

// Encoders draw first, in modality order, then the fused head; with M = 1 this
// is exactly init_params.
inline ConcatModel init_concat(const ModelDims& dims, std::uint64_t seed) {
  validate(dims);
  Rng rng(derive_seed(seed, stream::init));
  ConcatModel c;
  c.dims = dims;
  for (std::size_t d : dims.input_dims) c.encoders.push_back(init_encoder(d, dims.hidden, dims.embed_dim, rng));
  c.head = init_head(dims.modality_count() * dims.embed_dim, dims.class_count, rng);
  return c;
}

// Features of rows `rows`, one s-wide block per modality. Blocks of modalities
// flagged in `deactivate` are zero.
inline Mat concat_features(const ConcatModel& model, const MultimodalDataset& ds, const std::vector<std::size_t>& rows,
                           const std::vector<bool>& deactivate) {
  const std::size_t s = model.dims.embed_dim, mcount = model.encoders.size();
  Mat out(rows.size(), s * mcount);
  for (std::size_t m = 0; m < mcount; ++m) {
    if (deactivate[m]) continue;
    const Mat f = encode(model.encoders[m], gather_rows(ds.tables[m], rows));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < s; ++j) out(i, m * s + j) = f(i, j);
  }
  return out;
}

// Joint SGD on the fully paired training rows.
inline ConcatModel train_concat(const TrainConfig& config, const MultimodalDataset& ds) {
  validate(config);
  validate(ds);
  const std::size_t mcount = ds.modality_count(), s = config.embed_dim;
  const auto paired = paired_indices(ds);
  detail::require(!paired.empty(), "train_concat: no sample has every modality present");

  ConcatModel model = init_concat(model_dims(config, ds), config.seed);
  std::vector<EncoderParams> enc_vel;
  for (const auto& e : model.encoders) enc_vel.push_back(zeros_like(e));
  HeadParams head_vel = zeros_like(model.head);

  const std::uint64_t epochs = baseline_epochs(config, mcount);
  for (std::uint64_t e = 0; e < epochs; ++e) {
    const double lr = lr_at(config, e * mcount);
    for (const auto& batch : shuffled_batches(paired, config.batch_size, derive_seed(config.seed, stream::batches, e * mcount))) {
      const auto y = gather_labels(ds, batch);
      std::vector<EncoderTrace> traces;
      Mat features(batch.size(), s * mcount);
      for (std::size_t m = 0; m < mcount; ++m) {
        traces.push_back(encode_trace(model.encoders[m], gather_rows(ds.tables[m], batch)));
        const Mat& f = traces.back().acts.back();
        for (std::size_t i = 0; i < batch.size(); ++i)
          for (std::size_t j = 0; j < s; ++j) features(i, m * s + j) = f(i, j);
      }
      Mat dlogits, dfeatures;
      const double loss = cross_entropy(head_logits(model.head, features), y, &dlogits);
      if (!std::isfinite(loss)) throw numeric_error("non-finite concat loss", e);
      const HeadParams head_grad = head_backward(model.head, features, dlogits, &dfeatures);
      for (std::size_t m = 0; m < mcount; ++m) {
        Mat block(batch.size(), s);
        for (std::size_t i = 0; i < batch.size(); ++i)
          for (std::size_t j = 0; j < s; ++j) block(i, j) = dfeatures(i, m * s + j);
        const EncoderParams g = encoder_backward(model.encoders[m], traces[m], std::move(block));
        sgd_update(model.encoders[m], g, enc_vel[m], lr, config.momentum);
      }
      sgd_update(model.head, head_grad, head_vel, lr, config.momentum);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Late fusion.

// Modality m trains alone, from Rng(derive_seed(seed, init, m)), for
// baseline_epochs epochs. Nothing it computes depends on another modality.
inline LateFusionModel train_late_fusion(const TrainConfig& config, const MultimodalDataset& ds) {
  validate(config);
  validate(ds);
  const std::size_t mcount = ds.modality_count();
  const ModelDims dims = model_dims(config, ds);
  validate(dims);
  LateFusionModel model;
  model.dims = dims;
  const std::uint64_t epochs = baseline_epochs(config, mcount);
  for (std::size_t m = 0; m < mcount; ++m) {
    Rng rng(derive_seed(config.seed, stream::init, m));
    EncoderParams enc = init_encoder(dims.input_dims[m], dims.hidden, dims.embed_dim, rng);
    HeadParams head = init_head(dims.embed_dim, dims.class_count, rng);
    EncoderParams enc_vel = zeros_like(enc);
    HeadParams head_vel = zeros_like(head);
    const bool has_data = ds.present_count(m) > 0;
    for (std::uint64_t e = 0; has_data && e < epochs; ++e) {
      const double lr = lr_at(config, e * mcount);
      for (const auto& batch : minibatches(ds, m, config.batch_size, derive_seed(config.seed, stream::batches, e * mcount + m))) {
        const GradBundle g = pathway_loss_and_grads(enc, head, gather_rows(ds.tables[m], batch), gather_labels(ds, batch));
        if (!std::isfinite(g.loss)) throw numeric_error("non-finite late-fusion loss", e);
        sgd_update(enc, g.encoder, enc_vel, lr, config.momentum);
        sgd_update(head, g.head, head_vel, lr, config.momentum);
      }
    }
    model.encoders.push_back(std::move(enc));
    model.heads.push_back(std::move(head));
    model.trained.push_back(has_data);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Per-modality logits ("probe" pathways) for each model type, over all rows of a table.

inline Mat modality_logits(const ModelParams& model, const MultimodalDataset& ds, std::size_t m,
                           const std::vector<std::size_t>& rows) {
  return head_logits(model.head, encode(model, m, gather_rows(ds.tables[m], rows)));
}

inline Mat modality_logits(const LateFusionModel& model, const MultimodalDataset& ds, std::size_t m,
                           const std::vector<std::size_t>& rows) {
  return head_logits(model.heads[m], encode(model.encoders[m], gather_rows(ds.tables[m], rows)));
}

// Concat has no per-modality head: the other modalities' feature blocks are zeroed.
inline Mat modality_logits(const ConcatModel& model, const MultimodalDataset& ds, std::size_t m,
                           const std::vector<std::size_t>& rows) {
  std::vector<bool> off(model.encoders.size(), true);
  off[m] = false;
  return head_logits(model.head, concat_features(model, ds, rows, off));
}

inline bool modality_trained(const ModelParams&, std::size_t) { return true; }
inline bool modality_trained(const ConcatModel&, std::size_t) { return true; }
inline bool modality_trained(const LateFusionModel& model, std::size_t m) { return model.trained[m]; }

inline std::vector<std::uint32_t> argmax_rows(const Mat& logits) {
  std::vector<std::uint32_t> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) out[i] = static_cast<std::uint32_t>(argmax(logits.row(i)));
  return out;
}

inline double match_fraction(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> labels) {
  detail::require(pred.size() == labels.size(), "accuracy: length mismatch");
  detail::require(!pred.empty(), "accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Accuracy of modality m's pathway alone on the rows where m is present.
// nullopt when the modality was never trained or has no present test rows.
template <typename Model>
std::optional<double> unimodal_probe(const Model& model, std::size_t m, const MultimodalDataset& test) {
  detail::require(m < test.modality_count(), "unimodal_probe: modality out of range");
  if (!modality_trained(model, m)) return std::nullopt;
  const auto rows = present_indices(test, m);
  if (rows.empty()) return std::nullopt;
  return match_fraction(argmax_rows(modality_logits(model, test, m, rows)), gather_labels(test, rows));
}

// ---------------------------------------------------------------------------
// Fused predictions over every row of a dataset, using only present modalities.

// Alternating model: entropy-weighted fusion (dynamic) or uniform weights.
inline std::vector<std::uint32_t> fused_predictions(const ModelParams& model, const MultimodalDataset& ds,
                                                    bool dynamic = true) {
  const std::size_t mcount = ds.modality_count();
  std::vector<Mat> logits;
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (std::size_t m = 0; m < mcount; ++m) logits.push_back(modality_logits(model, ds, m, all));
  std::vector<std::uint32_t> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::vector<ModalityPrediction> preds;
    for (std::size_t m = 0; m < mcount; ++m)
      if (ds.present(i, m)) {
        const auto row = logits[m].row(i);
        preds.push_back(make_prediction(m, Vec(row.begin(), row.end())));
      }
    const FusionResult r = dynamic ? fuse_dynamic(std::move(preds)) : fuse(preds, uniform_weights(preds.size()));
    out[i] = static_cast<std::uint32_t>(r.predicted_class);
  }
  return out;
}

// Late fusion: mean of the present, trained modalities' logits.
inline std::vector<std::uint32_t> fused_predictions(const LateFusionModel& model, const MultimodalDataset& ds,
                                                    bool = true) {
  const std::size_t mcount = ds.modality_count();
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<Mat> logits;
  for (std::size_t m = 0; m < mcount; ++m) logits.push_back(modality_logits(model, ds, m, all));
  std::vector<std::uint32_t> out(ds.size());
  const std::size_t c = model.dims.class_count;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Vec sum(c, 0.0);
    std::size_t used = 0;
    for (std::size_t m = 0; m < mcount; ++m) {
      if (!ds.present(i, m) || !model.trained[m]) continue;
      for (std::size_t k = 0; k < c; ++k) sum[k] += logits[m](i, k);
      ++used;
    }
    for (double& v : sum) v /= static_cast<double>(std::max<std::size_t>(used, 1));
    out[i] = static_cast<std::uint32_t>(argmax(sum));
  }
  return out;
}

// Concat: absent modalities contribute zero feature blocks.
inline std::vector<std::uint32_t> fused_predictions(const ConcatModel& model, const MultimodalDataset& ds, bool = true) {
  const std::size_t mcount = ds.modality_count();
  std::vector<std::uint32_t> out(ds.size());
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Mat features = concat_features(model, ds, all, std::vector<bool>(mcount, false));
  const std::size_t s = model.dims.embed_dim;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t m = 0; m < mcount; ++m)
      if (!ds.present(i, m))
        for (std::size_t j = 0; j < s; ++j) features(i, m * s + j) = 0.0;
  return argmax_rows(head_logits(model.head, features));
}

}  // namespace mla
