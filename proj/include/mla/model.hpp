#pragma once

// Modality-specific MLP encoders, the shared linear head, softmax
// cross-entropy and exact backpropagation.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mla/error.hpp"
#include "mla/numkernel.hpp"

namespace mla {

// y = W x + b with W stored out x in.
struct Layer {
  Mat weight;
  Vec bias;

  bool operator==(const Layer&) const = default;
};

// Affine + ReLU on every hidden layer, affine only on the output layer.
struct EncoderParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().weight.cols; }
  std::size_t output_dim() const { return layers.back().weight.rows; }

  bool operator==(const EncoderParams&) const = default;
};

// logits = features . W + b with W stored s x C.
struct HeadParams {
  Mat weight;
  Vec bias;

  std::size_t input_dim() const { return weight.rows; }
  std::size_t class_count() const { return weight.cols; }

  bool operator==(const HeadParams&) const = default;
};

struct ModelDims {
  std::vector<std::size_t> input_dims;  // d_m per modality
  std::vector<std::size_t> hidden{32, 32};
  std::size_t embed_dim = 16;           // s
  std::uint32_t class_count = 2;        // C

  std::size_t modality_count() const { return input_dims.size(); }

  bool operator==(const ModelDims&) const = default;
};

struct ModelParams {
  ModelDims dims;
  std::vector<EncoderParams> encoders;
  HeadParams head;

  bool operator==(const ModelParams&) const = default;
};

struct GradBundle {
  EncoderParams encoder;
  HeadParams head;
  Vec mean_feature;
  double loss = 0.0;
};

inline void validate(const ModelDims& dims) {
  detail::require(dims.modality_count() >= 1, "model dims: at least one modality");
  detail::require(dims.embed_dim >= 1, "model dims: embed_dim must be >= 1");
  detail::require(dims.class_count >= 2, "model dims: class_count must be >= 2");
  for (auto d : dims.input_dims) detail::require(d >= 1, "model dims: input dims must be >= 1");
  for (auto h : dims.hidden) detail::require(h >= 1, "model dims: hidden widths must be >= 1");
}

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
inline Layer init_layer(std::size_t in, std::size_t out, Rng& rng) {
  Layer l{Mat(out, in), Vec(out, 0.0)};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& w : l.weight.data) w = rng.uniform(-limit, limit);
  return l;
}

inline EncoderParams init_encoder(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t out_dim,
                                  Rng& rng) {
  EncoderParams e;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    e.layers.push_back(init_layer(in, h, rng));
    in = h;
  }
  e.layers.push_back(init_layer(in, out_dim, rng));
  return e;
}

inline HeadParams init_head(std::size_t in, std::size_t classes, Rng& rng) {
  HeadParams h{Mat(in, classes), Vec(classes, 0.0)};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + classes));
  for (double& w : h.weight.data) w = rng.uniform(-limit, limit);
  return h;
}

// Draw order: encoder 0 layer by layer, ..., encoder M-1, then the head.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  validate(dims);
  Rng rng(derive_seed(seed, stream::init));
  ModelParams p;
  p.dims = dims;
  for (std::size_t d : dims.input_dims) p.encoders.push_back(init_encoder(d, dims.hidden, dims.embed_dim, rng));
  p.head = init_head(dims.embed_dim, dims.class_count, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes.

// Per-layer activations of one batch, kept for backprop. acts[0] is the input,
// acts[l+1] the post-activation output of layer l.
struct EncoderTrace {
  std::vector<Mat> acts;
};

inline Mat affine_rows(const Layer& layer, const Mat& x, bool relu) {
  detail::require(x.cols == layer.weight.cols, "encoder: input width does not match layer fan-in");
  Mat y(x.rows, layer.weight.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto in = x.row(i);
    auto out = y.row(i);
    for (std::size_t o = 0; o < layer.weight.rows; ++o) {
      double acc = 0.0;
      const auto w = layer.weight.row(o);
      for (std::size_t j = 0; j < w.size(); ++j) acc += w[j] * in[j];
      acc += layer.bias[o];
      out[o] = (relu && acc < 0.0) ? 0.0 : acc;
    }
  }
  return y;
}

inline EncoderTrace encode_trace(const EncoderParams& enc, const Mat& x) {
  EncoderTrace t;
  t.acts.push_back(x);
  for (std::size_t l = 0; l < enc.layers.size(); ++l)
    t.acts.push_back(affine_rows(enc.layers[l], t.acts.back(), l + 1 < enc.layers.size()));
  return t;
}

inline Mat encode(const EncoderParams& enc, const Mat& x) {
  Mat h = x;
  for (std::size_t l = 0; l < enc.layers.size(); ++l) h = affine_rows(enc.layers[l], h, l + 1 < enc.layers.size());
  return h;
}

inline Mat encode(const ModelParams& params, std::size_t m, const Mat& x) {
  detail::require(m < params.encoders.size(), "encode: modality out of range");
  detail::require(x.cols == params.dims.input_dims[m], "encode: x columns differ from d_m");
  return encode(params.encoders[m], x);
}

inline Mat head_logits(const HeadParams& head, const Mat& features) {
  detail::require(features.cols == head.weight.rows, "head_logits: feature width differs from head input dim");
  const std::size_t c = head.weight.cols;
  Mat z(features.rows, c);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto f = features.row(i);
    auto out = z.row(i);
    for (std::size_t k = 0; k < c; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < f.size(); ++j) acc += f[j] * head.weight(j, k);
      out[k] = acc + head.bias[k];
    }
  }
  return z;
}

// ---------------------------------------------------------------------------
// Loss and gradients.

inline EncoderParams zeros_like(const EncoderParams& e) {
  EncoderParams z;
  for (const auto& l : e.layers) z.layers.push_back({Mat(l.weight.rows, l.weight.cols), Vec(l.bias.size(), 0.0)});
  return z;
}

inline HeadParams zeros_like(const HeadParams& h) { return {Mat(h.weight.rows, h.weight.cols), Vec(h.bias.size(), 0.0)}; }

// Mean softmax cross-entropy of logits against labels, plus dLoss/dlogits.
inline double cross_entropy(const Mat& logits, std::span<const std::uint32_t> labels, Mat* dlogits) {
  detail::require(logits.rows == labels.size(), "cross_entropy: label count differs from batch size");
  detail::require(logits.rows > 0, "cross_entropy: empty batch");
  const double inv_b = 1.0 / static_cast<double>(logits.rows);
  if (dlogits) *dlogits = Mat(logits.rows, logits.cols);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto z = logits.row(i);
    detail::require(labels[i] < z.size(), "cross_entropy: label out of range");
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    total += lse - z[labels[i]];
    if (dlogits) {
      auto d = dlogits->row(i);
      for (std::size_t k = 0; k < z.size(); ++k) d[k] = std::exp(z[k] - lse) * inv_b;
      d[labels[i]] -= inv_b;
    }
  }
  return total * inv_b;
}

// Head gradient for a batch and the gradient flowing back into the features.
inline HeadParams head_backward(const HeadParams& head, const Mat& features, const Mat& dlogits, Mat* dfeatures) {
  HeadParams g = zeros_like(head);
  const std::size_t s = head.weight.rows, c = head.weight.cols;
  if (dfeatures) *dfeatures = Mat(features.rows, s);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto f = features.row(i);
    const auto d = dlogits.row(i);
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < c; ++k) g.weight(j, k) += f[j] * d[k];
    for (std::size_t k = 0; k < c; ++k) g.bias[k] += d[k];
    if (dfeatures) {
      auto df = dfeatures->row(i);
      for (std::size_t j = 0; j < s; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < c; ++k) acc += head.weight(j, k) * d[k];
        df[j] = acc;
      }
    }
  }
  return g;
}

inline EncoderParams encoder_backward(const EncoderParams& enc, const EncoderTrace& trace, Mat dout) {
  EncoderParams g = zeros_like(enc);
  for (std::size_t l = enc.layers.size(); l-- > 0;) {
    const Mat& in = trace.acts[l];
    const Mat& out = trace.acts[l + 1];
    const bool relu = l + 1 < enc.layers.size();
    if (relu)
      for (std::size_t i = 0; i < dout.data.size(); ++i)
        if (out.data[i] <= 0.0) dout.data[i] = 0.0;
    const Mat& w = enc.layers[l].weight;
    Layer& gl = g.layers[l];
    for (std::size_t i = 0; i < in.rows; ++i) {
      const auto a = in.row(i);
      const auto d = dout.row(i);
      for (std::size_t o = 0; o < w.rows; ++o) {
        auto gw = gl.weight.row(o);
        for (std::size_t j = 0; j < w.cols; ++j) gw[j] += d[o] * a[j];
        gl.bias[o] += d[o];
      }
    }
    if (l == 0) break;
    Mat din(in.rows, w.cols);
    for (std::size_t i = 0; i < in.rows; ++i) {
      const auto d = dout.row(i);
      auto di = din.row(i);
      for (std::size_t j = 0; j < w.cols; ++j) {
        double acc = 0.0;
        for (std::size_t o = 0; o < w.rows; ++o) acc += w(o, j) * d[o];
        di[j] = acc;
      }
    }
    dout = std::move(din);
  }
  return g;
}

inline Vec column_mean(const Mat& x) {
  Vec mean(x.cols, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto r = x.row(i);
    for (std::size_t j = 0; j < x.cols; ++j) mean[j] += r[j];
  }
  for (double& v : mean) v /= static_cast<double>(x.rows);
  return mean;
}

// Loss and exact gradients of one (encoder, head) pathway on a batch.
inline GradBundle pathway_loss_and_grads(const EncoderParams& enc, const HeadParams& head, const Mat& x,
                                         std::span<const std::uint32_t> labels) {
  detail::require(x.rows > 0, "loss_and_grads: empty batch");
  detail::require(x.rows == labels.size(), "loss_and_grads: label count differs from batch size");
  const EncoderTrace trace = encode_trace(enc, x);
  const Mat& features = trace.acts.back();
  Mat dlogits, dfeatures;
  GradBundle out;
  out.loss = cross_entropy(head_logits(head, features), labels, &dlogits);
  out.head = head_backward(head, features, dlogits, &dfeatures);
  out.encoder = encoder_backward(enc, trace, std::move(dfeatures));
  out.mean_feature = column_mean(features);
  return out;
}

// Mean cross-entropy of f_m = g . h_m on a batch of modality-m rows and the exact
// gradients w.r.t. theta_m and phi. Other encoders take no part in the
// computation, so their gradient is identically zero.
inline GradBundle loss_and_grads(const ModelParams& params, std::size_t m, const Mat& x,
                                 std::span<const std::uint32_t> labels) {
  detail::require(m < params.encoders.size(), "loss_and_grads: modality out of range");
  detail::require(x.cols == params.dims.input_dims[m], "loss_and_grads: x columns differ from d_m");
  return pathway_loss_and_grads(params.encoders[m], params.head, x, labels);
}

// ---------------------------------------------------------------------------
// SGD with momentum: v <- mu v + g; theta <- theta - lr v.

inline void sgd_update(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
                       double momentum) {
  detail::require(params.size() == grads.size() && params.size() == velocity.size(), "sgd_update: shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

inline void sgd_update(Layer& p, const Layer& g, Layer& v, double lr, double momentum) {
  detail::require(p.weight.rows == g.weight.rows && p.weight.cols == g.weight.cols, "sgd_update: layer shape mismatch");
  sgd_update(p.weight.data, g.weight.data, v.weight.data, lr, momentum);
  sgd_update(p.bias, g.bias, v.bias, lr, momentum);
}

inline void sgd_update(EncoderParams& p, const EncoderParams& g, EncoderParams& v, double lr, double momentum) {
  detail::require(p.layers.size() == g.layers.size() && p.layers.size() == v.layers.size(),
                  "sgd_update: encoder depth mismatch");
  for (std::size_t l = 0; l < p.layers.size(); ++l) sgd_update(p.layers[l], g.layers[l], v.layers[l], lr, momentum);
}

inline void sgd_update(HeadParams& p, const HeadParams& g, HeadParams& v, double lr, double momentum) {
  detail::require(p.weight.rows == g.weight.rows && p.weight.cols == g.weight.cols, "sgd_update: head shape mismatch");
  sgd_update(p.weight.data, g.weight.data, v.weight.data, lr, momentum);
  sgd_update(p.bias, g.bias, v.bias, lr, momentum);
}

inline bool all_finite(const EncoderParams& e) {
  for (const auto& l : e.layers)
    if (!all_finite(l.weight.data) || !all_finite(l.bias)) return false;
  return true;
}

inline bool all_finite(const HeadParams& h) { return all_finite(h.weight.data) && all_finite(h.bias); }

}  // namespace mla
