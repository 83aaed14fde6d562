#pragma once

// Test-time fusion: per-modality logits are combined with weights given by the
// softmax of their negated prediction entropies.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mla/error.hpp"
#include "mla/model.hpp"
#include "mla/numkernel.hpp"

namespace mla {

struct ModalityPrediction {
  std::size_t modality = 0;
  Vec logits;
  Vec probs;
  double entropy = 0.0;
};

struct FusionResult {
  std::vector<ModalityPrediction> predictions;
  Vec weights;
  Vec fused_logits;
  std::size_t predicted_class = 0;
};

// Natural-log entropy with 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  detail::require(!p.empty(), "entropy: empty probability vector");
  double total = 0.0;
  for (double v : p) {
    detail::require(v >= 0.0 && std::isfinite(v), "entropy: probabilities must be finite and non-negative");
    total += v;
  }
  detail::require(std::abs(total - 1.0) <= 1e-9, "entropy: probabilities must sum to 1");
  double e = 0.0;
  for (double v : p)
    if (v > 0.0) e -= v * std::log(v);
  return e;
}

// lambda_m = exp(max_e - e_m) / sum_v exp(max_e - e_v) over the given (present) modalities.
inline Vec fusion_weights(std::span<const double> entropies) {
  detail::require(!entropies.empty(), "fusion_weights: no modalities");
  for (double e : entropies) detail::require(std::isfinite(e) && e >= 0.0, "fusion_weights: entropies must be finite and >= 0");
  double mx = entropies[0];
  for (double e : entropies) mx = std::max(mx, e);
  Vec w(entropies.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(mx - entropies[i]);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

inline Vec uniform_weights(std::size_t n) {
  detail::require(n >= 1, "uniform_weights: no modalities");
  return Vec(n, 1.0 / static_cast<double>(n));
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline ModalityPrediction make_prediction(std::size_t modality, Vec logits) {
  ModalityPrediction p;
  p.modality = modality;
  p.probs = softmax(logits);
  p.logits = std::move(logits);
  p.entropy = entropy(p.probs);
  return p;
}

// Fused logits = sum_m lambda_m logits_m; ties in the argmax go to the lowest class.
inline FusionResult fuse(std::vector<ModalityPrediction> predictions, Vec weights) {
  detail::require(!predictions.empty(), "fuse: no predictions");
  detail::require(predictions.size() == weights.size(), "fuse: weight count differs from prediction count");
  double total = 0.0;
  for (double w : weights) total += w;
  detail::require(std::abs(total - 1.0) <= 1e-9, "fuse: weights must sum to 1");
  const std::size_t c = predictions.front().logits.size();
  FusionResult r;
  r.fused_logits.assign(c, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    detail::require(predictions[i].logits.size() == c, "fuse: logit lengths differ");
    for (std::size_t k = 0; k < c; ++k) r.fused_logits[k] += weights[i] * predictions[i].logits[k];
  }
  r.predicted_class = argmax(r.fused_logits);
  r.predictions = std::move(predictions);
  r.weights = std::move(weights);
  return r;
}

// Entropy-weighted fusion of already computed per-modality logits.
inline FusionResult fuse_dynamic(std::vector<ModalityPrediction> predictions) {
  Vec e;
  for (const auto& p : predictions) e.push_back(p.entropy);
  Vec w = fusion_weights(e);
  return fuse(std::move(predictions), std::move(w));
}

// One sample: features[m] is the modality-m feature row, read only where present[m].
struct Sample {
  std::vector<Vec> features;
  std::vector<bool> present;
};

// Encodes every present modality through the shared head and fuses the results.
// With dynamic = false the weights are uniform over the present modalities.
inline FusionResult predict(const ModelParams& params, const Sample& sample, bool dynamic = true) {
  const std::size_t mcount = params.encoders.size();
  detail::require(sample.features.size() == mcount && sample.present.size() == mcount,
                  "predict: sample modality count differs from model");
  std::vector<ModalityPrediction> preds;
  for (std::size_t m = 0; m < mcount; ++m) {
    if (!sample.present[m]) continue;
    Mat x(1, sample.features[m].size());
    x.data = sample.features[m];
    const Mat logits = head_logits(params.head, encode(params, m, x));
    preds.push_back(make_prediction(m, logits.data));
  }
  detail::require(!preds.empty(), "predict: all modalities absent");
  if (dynamic) return fuse_dynamic(std::move(preds));
  Vec w = uniform_weights(preds.size());
  return fuse(std::move(preds), std::move(w));
}

}  // namespace mla
