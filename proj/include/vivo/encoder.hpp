#pragma once

#include "vivo/batch.hpp"
#include "vivo/rng.hpp"
#include "vivo/types.hpp"

#include <string>
#include <vector>

namespace vivo {

struct EncoderConfig {
  int layers = 2;
  int hidden = 32;
  int heads = 2;
  int ff_dim = 128;
  int vocab_size = 64;
  int max_positions = 64;
  int n_segments = 3;
  int d_region = 22;  // d_app + 6
  double dropout = 0.0;
  bool tie_head = false;

  int head_dim() const { return hidden / heads; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Matrix wq, wk, wv, wo;      // hidden x hidden
  Vector bq, bk, bv, bo;      // hidden
  Vector ln1_g, ln1_b;        // hidden
  Matrix w1;                  // hidden x ff_dim
  Vector b1;                  // ff_dim
  Matrix w2;                  // ff_dim x hidden
  Vector b2;                  // hidden
  Vector ln2_g, ln2_b;        // hidden
};

/// Every learnable array of the model. Shapes are fully determined by
/// EncoderConfig; the name set (see visit_params) is fixed and is the
/// checkpoint schema.
struct Parameters {
  Matrix tok_emb;       // vocab_size x hidden
  Matrix seg_emb;       // n_segments x hidden
  Matrix pos_emb;       // max_positions x hidden
  Matrix region_proj;   // d_region x hidden
  Vector region_bias;   // hidden
  Vector emb_ln_g, emb_ln_b;
  std::vector<LayerParams> layers;
  Matrix head_w;        // hidden x vocab_size (absent when tied)
  Vector head_b;        // vocab_size
  bool tied = false;
};

// Applies f(name, array) to every parameter array in a fixed, documented
// order (the checkpoint serialization order). `array` is Matrix& or
// Vector&; take it as auto&.
template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f("tok_emb", p.tok_emb);
  f("seg_emb", p.seg_emb);
  f("pos_emb", p.pos_emb);
  f("region_proj", p.region_proj);
  f("region_bias", p.region_bias);
  f("emb_ln_g", p.emb_ln_g);
  f("emb_ln_b", p.emb_ln_b);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& lp = p.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    f(pre + "wq", lp.wq);
    f(pre + "bq", lp.bq);
    f(pre + "wk", lp.wk);
    f(pre + "bk", lp.bk);
    f(pre + "wv", lp.wv);
    f(pre + "bv", lp.bv);
    f(pre + "wo", lp.wo);
    f(pre + "bo", lp.bo);
    f(pre + "ln1_g", lp.ln1_g);
    f(pre + "ln1_b", lp.ln1_b);
    f(pre + "w1", lp.w1);
    f(pre + "b1", lp.b1);
    f(pre + "w2", lp.w2);
    f(pre + "b2", lp.b2);
    f(pre + "ln2_g", lp.ln2_g);
    f(pre + "ln2_b", lp.ln2_b);
  }
  if (!p.tied) f("head_w", p.head_w);
  f("head_b", p.head_b);
}

// Lockstep visit over two parameter sets with identical structure.
template <typename PA, typename PB, typename F>
void visit_params_pair(PA& a, PB& b, F&& f) {
  f("tok_emb", a.tok_emb, b.tok_emb);
  f("seg_emb", a.seg_emb, b.seg_emb);
  f("pos_emb", a.pos_emb, b.pos_emb);
  f("region_proj", a.region_proj, b.region_proj);
  f("region_bias", a.region_bias, b.region_bias);
  f("emb_ln_g", a.emb_ln_g, b.emb_ln_g);
  f("emb_ln_b", a.emb_ln_b, b.emb_ln_b);
  for (size_t l = 0; l < a.layers.size(); ++l) {
    auto& la = a.layers[l];
    auto& lb = b.layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    f(pre + "wq", la.wq, lb.wq);
    f(pre + "bq", la.bq, lb.bq);
    f(pre + "wk", la.wk, lb.wk);
    f(pre + "bk", la.bk, lb.bk);
    f(pre + "wv", la.wv, lb.wv);
    f(pre + "bv", la.bv, lb.bv);
    f(pre + "wo", la.wo, lb.wo);
    f(pre + "bo", la.bo, lb.bo);
    f(pre + "ln1_g", la.ln1_g, lb.ln1_g);
    f(pre + "ln1_b", la.ln1_b, lb.ln1_b);
    f(pre + "w1", la.w1, lb.w1);
    f(pre + "b1", la.b1, lb.b1);
    f(pre + "w2", la.w2, lb.w2);
    f(pre + "b2", la.b2, lb.b2);
    f(pre + "ln2_g", la.ln2_g, lb.ln2_g);
    f(pre + "ln2_b", la.ln2_b, lb.ln2_b);
  }
  if (!a.tied) f("head_w", a.head_w, b.head_w);
  f("head_b", a.head_b, b.head_b);
}

// Zero-filled parameter set with the config's shapes (gradient buffers).
Parameters zero_parameters(const EncoderConfig& config);

// Seeded init: N(0, 0.02) weights and embeddings, zero biases, unit
// layer-norm scales.
Parameters init_parameters(const EncoderConfig& config, uint64_t seed);

struct LayerCache {
  Matrix x_in, q, k, v, ctx, x1, xhat1, u, g, xhat2;
  Vector invstd1, invstd2;
  std::vector<Matrix> probs;  // per head, S x S
  Matrix drop_attn, drop_ff;  // empty when dropout is off
};

struct ForwardCache {
  Matrix emb_raw;   // pre-layer-norm summed embeddings
  Matrix xhat_emb;
  Vector invstd_emb;
  Matrix drop_emb;
  std::vector<LayerCache> layers;
};

/// Output of one forward pass: contextual representations for every input
/// row plus everything backward needs.
struct ForwardResult {
  Matrix last_layer;  // (S_text + K) x hidden
  ForwardCache cache;
};

// Deterministic given (params, batch). dropout_rng enables dropout when
// config.dropout > 0; pass nullptr for the deterministic path.
ForwardResult forward(const EncoderConfig& config, const Parameters& params,
                      const EncodedBatch& batch, Rng* dropout_rng = nullptr);

// Prediction-head logits for one row of last_layer.
Vector logits_at(const EncoderConfig& config, const Parameters& params,
                 const ForwardResult& result, int position);

// Numerically stable softmax.
Vector softmax(const Vector& logits);

struct SlotGrad {
  int position = 0;
  Vector dlogits;  // dLoss/dlogits at that row, vocab_size
};

// Analytic gradients of a loss whose logit-gradients at the queried rows
// are given. Arrays untouched by the batch keep exactly zero gradient.
Parameters backward(const EncoderConfig& config, const Parameters& params,
                    const EncodedBatch& batch, const ForwardResult& result,
                    const std::vector<SlotGrad>& slot_grads);

}  // namespace vivo
