#include "vivo/encoder.hpp"

#include <cmath>

namespace vivo {

namespace {

constexpr double kLnEps = 1e-12;
constexpr double kMaskBias = -1e9;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_prime(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

// Row-wise layer norm; fills xhat and invstd for backward.
Matrix layer_norm(const Matrix& x, const Vector& g, const Vector& b,
                  Matrix& xhat, Vector& invstd) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  xhat.resize(rows, cols);
  invstd.resize(rows);
  Matrix y(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    invstd[i] = inv;
    xhat.row(i) = (x.row(i).array() - mean) * inv;
    y.row(i) = xhat.row(i).cwiseProduct(g.transpose()) + b.transpose();
  }
  return y;
}

// Gradient through layer norm. Accumulates dg/db, returns dx.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat,
                           const Vector& invstd, const Vector& g, Vector& dg,
                           Vector& db) {
  const Eigen::Index rows = dy.rows(), cols = dy.cols();
  Matrix dx(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    dg += dy.row(i).cwiseProduct(xhat.row(i)).transpose();
    db += dy.row(i).transpose();
    const RowVector dxhat = dy.row(i).cwiseProduct(g.transpose());
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = invstd[i] * (dxhat.array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

// Row softmax over scores that already carry the -1e9 mask bias. Masked
// entries underflow to exactly zero after max subtraction, so disallowed
// positions contribute nothing (mask honesty is exact, not approximate).
// A row with no allowed column at all yields an all-zero row: its output
// is then the residual path alone.
Matrix masked_softmax_rows(const Matrix& scores, const BoolMatrix& allowed) {
  const Eigen::Index rows = scores.rows(), cols = scores.cols();
  Matrix p = Matrix::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!allowed.row(i).any()) continue;
    const double mx = scores.row(i).maxCoeff();
    const Eigen::ArrayXd e = (scores.row(i).transpose().array() - mx).exp();
    p.row(i) = (e / e.sum()).transpose();
  }
  return p;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                    Rng& rng) {
  Matrix m(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform_real() < rate ? 0.0 : keep_scale;
    }
  }
  return m;
}

void check_batch(const EncoderConfig& config, const EncodedBatch& batch) {
  const int s_text = batch.text_len();
  const int k = batch.n_regions();
  if (static_cast<int>(batch.segment_ids.size()) != s_text + k ||
      static_cast<int>(batch.position_ids.size()) != s_text) {
    throw Error(ErrorKind::ShapeMismatch, "segment/position id lengths");
  }
  if (batch.attn_mask.rows() != s_text + k ||
      batch.attn_mask.cols() != s_text + k) {
    throw Error(ErrorKind::ShapeMismatch, "attention mask dimensions");
  }
  if (k > 0 && batch.regions.cols() != config.d_region) {
    throw Error(ErrorKind::ShapeMismatch,
                "region width " + std::to_string(batch.regions.cols()) +
                    " != d_region " + std::to_string(config.d_region));
  }
  for (int t = 0; t < s_text; ++t) {
    if (batch.token_ids[t] < 0 || batch.token_ids[t] >= config.vocab_size) {
      throw Error(ErrorKind::ShapeMismatch, "token id out of vocabulary range");
    }
    if (batch.position_ids[t] < 0 ||
        batch.position_ids[t] >= config.max_positions) {
      throw Error(ErrorKind::ShapeMismatch, "position id exceeds max_positions");
    }
  }
  for (int i = 0; i < s_text + k; ++i) {
    if (batch.segment_ids[i] < 0 || batch.segment_ids[i] >= config.n_segments) {
      throw Error(ErrorKind::ShapeMismatch, "segment id out of range");
    }
  }
  if (k > 0 && !batch.regions.allFinite()) {
    throw Error(ErrorKind::NonFiniteInput, "region features are not finite");
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1 || hidden < 1 || heads < 1 || ff_dim < 1 || vocab_size < 1 ||
      max_positions < 1 || n_segments < 3 || d_region < 7) {
    throw Error(ErrorKind::ConfigError, "encoder dimensions must be positive");
  }
  if (hidden % heads != 0) {
    throw Error(ErrorKind::ConfigError, "hidden must be divisible by heads");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw Error(ErrorKind::ConfigError, "dropout must be in [0, 1)");
  }
}

Parameters zero_parameters(const EncoderConfig& config) {
  config.validate();
  Parameters p;
  p.tied = config.tie_head;
  p.tok_emb = Matrix::Zero(config.vocab_size, config.hidden);
  p.seg_emb = Matrix::Zero(config.n_segments, config.hidden);
  p.pos_emb = Matrix::Zero(config.max_positions, config.hidden);
  p.region_proj = Matrix::Zero(config.d_region, config.hidden);
  p.region_bias = Vector::Zero(config.hidden);
  p.emb_ln_g = Vector::Zero(config.hidden);
  p.emb_ln_b = Vector::Zero(config.hidden);
  p.layers.resize(config.layers);
  for (auto& lp : p.layers) {
    lp.wq = lp.wk = lp.wv = lp.wo = Matrix::Zero(config.hidden, config.hidden);
    lp.bq = lp.bk = lp.bv = lp.bo = Vector::Zero(config.hidden);
    lp.ln1_g = Vector::Zero(config.hidden);
    lp.ln1_b = Vector::Zero(config.hidden);
    lp.w1 = Matrix::Zero(config.hidden, config.ff_dim);
    lp.b1 = Vector::Zero(config.ff_dim);
    lp.w2 = Matrix::Zero(config.ff_dim, config.hidden);
    lp.b2 = Vector::Zero(config.hidden);
    lp.ln2_g = Vector::Zero(config.hidden);
    lp.ln2_b = Vector::Zero(config.hidden);
  }
  if (!config.tie_head) {
    p.head_w = Matrix::Zero(config.hidden, config.vocab_size);
  }
  p.head_b = Vector::Zero(config.vocab_size);
  return p;
}

Parameters init_parameters(const EncoderConfig& config, uint64_t seed) {
  Parameters p = zero_parameters(config);
  Rng rng(seed);
  constexpr double kInitStd = 0.02;
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = rng.normal(0.0, kInitStd);
      }
    }
  };
  fill(p.tok_emb);
  fill(p.seg_emb);
  fill(p.pos_emb);
  fill(p.region_proj);
  p.emb_ln_g.setOnes();
  for (auto& lp : p.layers) {
    fill(lp.wq);
    fill(lp.wk);
    fill(lp.wv);
    fill(lp.wo);
    fill(lp.w1);
    fill(lp.w2);
    lp.ln1_g.setOnes();
    lp.ln2_g.setOnes();
  }
  if (!config.tie_head) fill(p.head_w);
  return p;
}

ForwardResult forward(const EncoderConfig& config, const Parameters& params,
                      const EncodedBatch& batch, Rng* dropout_rng) {
  config.validate();
  check_batch(config, batch);

  const int s_text = batch.text_len();
  const int k = batch.n_regions();
  const int s = s_text + k;
  const int h = config.hidden;
  const int dh = config.head_dim();
  const bool use_dropout = config.dropout > 0.0 && dropout_rng != nullptr;

  ForwardResult out;
  ForwardCache& cache = out.cache;

  // Input rows: token+segment+position sums for text, projected
  // appearance+geometry plus segment embedding for regions.
  Matrix e(s, h);
  for (int t = 0; t < s_text; ++t) {
    e.row(t) = params.tok_emb.row(batch.token_ids[t]) +
               params.seg_emb.row(batch.segment_ids[t]) +
               params.pos_emb.row(batch.position_ids[t]);
  }
  if (k > 0) {
    e.bottomRows(k) = batch.regions * params.region_proj;
    for (int r = 0; r < k; ++r) {
      e.row(s_text + r) += params.region_bias.transpose() +
                           params.seg_emb.row(batch.segment_ids[s_text + r]);
    }
  }
  cache.emb_raw = e;
  Matrix x = layer_norm(e, params.emb_ln_g, params.emb_ln_b, cache.xhat_emb,
                        cache.invstd_emb);
  if (use_dropout) {
    cache.drop_emb = dropout_mask(s, h, config.dropout, *dropout_rng);
    x = x.cwiseProduct(cache.drop_emb);
  }

  Matrix bias = Matrix::Zero(s, s);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      if (!batch.attn_mask(i, j)) bias(i, j) = kMaskBias;
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.layers.resize(config.layers);
  for (int l = 0; l < config.layers; ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.x_in = x;

    lc.q = x * lp.wq;
    lc.q.rowwise() += lp.bq.transpose();
    lc.k = x * lp.wk;
    lc.k.rowwise() += lp.bk.transpose();
    lc.v = x * lp.wv;
    lc.v.rowwise() += lp.bv.transpose();

    lc.ctx.resize(s, h);
    lc.probs.resize(config.heads);
    for (int head = 0; head < config.heads; ++head) {
      const auto qh = lc.q.middleCols(head * dh, dh);
      const auto kh = lc.k.middleCols(head * dh, dh);
      const auto vh = lc.v.middleCols(head * dh, dh);
      Matrix scores = qh * kh.transpose() * scale + bias;
      lc.probs[head] = masked_softmax_rows(scores, batch.attn_mask);
      lc.ctx.middleCols(head * dh, dh) = lc.probs[head] * vh;
    }

    Matrix attn_out = lc.ctx * lp.wo;
    attn_out.rowwise() += lp.bo.transpose();
    if (use_dropout) {
      lc.drop_attn = dropout_mask(s, h, config.dropout, *dropout_rng);
      attn_out = attn_out.cwiseProduct(lc.drop_attn);
    }
    lc.x1 = layer_norm(x + attn_out, lp.ln1_g, lp.ln1_b, lc.xhat1, lc.invstd1);

    lc.u = lc.x1 * lp.w1;
    lc.u.rowwise() += lp.b1.transpose();
    lc.g = lc.u.unaryExpr([](double v) { return gelu(v); });
    Matrix ff_out = lc.g * lp.w2;
    ff_out.rowwise() += lp.b2.transpose();
    if (use_dropout) {
      lc.drop_ff = dropout_mask(s, h, config.dropout, *dropout_rng);
      ff_out = ff_out.cwiseProduct(lc.drop_ff);
    }
    x = layer_norm(lc.x1 + ff_out, lp.ln2_g, lp.ln2_b, lc.xhat2, lc.invstd2);
  }

  out.last_layer = x;
  return out;
}

Vector logits_at(const EncoderConfig& config, const Parameters& params,
                 const ForwardResult& result, int position) {
  if (position < 0 || position >= result.last_layer.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "logits position out of range");
  }
  const RowVector row = result.last_layer.row(position);
  Vector logits;
  if (config.tie_head) {
    logits = params.tok_emb * row.transpose();
  } else {
    logits = (row * params.head_w).transpose();
  }
  logits += params.head_b;
  return logits;
}

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

Parameters backward(const EncoderConfig& config, const Parameters& params,
                    const EncodedBatch& batch, const ForwardResult& result,
                    const std::vector<SlotGrad>& slot_grads) {
  if (static_cast<int>(result.cache.layers.size()) != config.layers ||
      result.last_layer.rows() != batch.total_len()) {
    throw Error(ErrorKind::MissingForwardCache,
                "forward cache does not match this batch/config");
  }

  const int s_text = batch.text_len();
  const int k = batch.n_regions();
  const int s = s_text + k;
  const int h = config.hidden;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Parameters grads = zero_parameters(config);

  // Head: dlogits -> dlast_layer and head gradients.
  Matrix dx = Matrix::Zero(s, h);
  for (const SlotGrad& sg : slot_grads) {
    if (sg.position < 0 || sg.position >= s) {
      throw Error(ErrorKind::ShapeMismatch, "slot gradient position out of range");
    }
    if (sg.dlogits.size() != config.vocab_size) {
      throw Error(ErrorKind::ShapeMismatch, "slot gradient width != vocab size");
    }
    const RowVector row = result.last_layer.row(sg.position);
    if (config.tie_head) {
      grads.tok_emb += sg.dlogits * row;
      dx.row(sg.position) += (params.tok_emb.transpose() * sg.dlogits).transpose();
    } else {
      grads.head_w += row.transpose() * sg.dlogits.transpose();
      dx.row(sg.position) += (params.head_w * sg.dlogits).transpose();
    }
    grads.head_b += sg.dlogits;
  }

  for (int l = config.layers - 1; l >= 0; --l) {
    const LayerParams& lp = params.layers[l];
    LayerParams& gl = grads.layers[l];
    const LayerCache& lc = result.cache.layers[l];

    // x2 = LN2(x1 + ff_out)
    Matrix ds2 = layer_norm_backward(dx, lc.xhat2, lc.invstd2, lp.ln2_g,
                                     gl.ln2_g, gl.ln2_b);
    Matrix dff = ds2;
    if (lc.drop_ff.size() > 0) dff = dff.cwiseProduct(lc.drop_ff);
    Matrix dx1 = ds2;

    gl.w2 += lc.g.transpose() * dff;
    gl.b2 += dff.colwise().sum().transpose();
    Matrix dg = dff * lp.w2.transpose();
    Matrix du = dg.cwiseProduct(
        lc.u.unaryExpr([](double v) { return gelu_prime(v); }));
    gl.w1 += lc.x1.transpose() * du;
    gl.b1 += du.colwise().sum().transpose();
    dx1 += du * lp.w1.transpose();

    // x1 = LN1(x + attn_out)
    Matrix ds1 = layer_norm_backward(dx1, lc.xhat1, lc.invstd1, lp.ln1_g,
                                     gl.ln1_g, gl.ln1_b);
    Matrix dattn = ds1;
    if (lc.drop_attn.size() > 0) dattn = dattn.cwiseProduct(lc.drop_attn);
    dx = ds1;  // residual branch

    gl.wo += lc.ctx.transpose() * dattn;
    gl.bo += dattn.colwise().sum().transpose();
    Matrix dctx = dattn * lp.wo.transpose();

    Matrix dq = Matrix::Zero(s, h), dk = Matrix::Zero(s, h),
           dv = Matrix::Zero(s, h);
    for (int head = 0; head < config.heads; ++head) {
      const auto qh = lc.q.middleCols(head * dh, dh);
      const auto kh = lc.k.middleCols(head * dh, dh);
      const auto vh = lc.v.middleCols(head * dh, dh);
      const Matrix& p = lc.probs[head];
      const auto dctx_h = dctx.middleCols(head * dh, dh);

      Matrix dp = dctx_h * vh.transpose();
      dv.middleCols(head * dh, dh) += p.transpose() * dctx_h;

      // softmax rows: dscore = p .* (dp - rowsum(dp .* p))
      Matrix dscore(s, s);
      for (int i = 0; i < s; ++i) {
        const double dot = dp.row(i).cwiseProduct(p.row(i)).sum();
        dscore.row(i) = p.row(i).cwiseProduct(dp.row(i).array() - dot);
      }
      dq.middleCols(head * dh, dh) += dscore * kh * scale;
      dk.middleCols(head * dh, dh) += dscore.transpose() * qh * scale;
    }

    gl.wq += lc.x_in.transpose() * dq;
    gl.bq += dq.colwise().sum().transpose();
    gl.wk += lc.x_in.transpose() * dk;
    gl.bk += dk.colwise().sum().transpose();
    gl.wv += lc.x_in.transpose() * dv;
    gl.bv += dv.colwise().sum().transpose();
    dx += dq * lp.wq.transpose() + dk * lp.wk.transpose() +
          dv * lp.wv.transpose();
  }

  if (result.cache.drop_emb.size() > 0) {
    dx = dx.cwiseProduct(result.cache.drop_emb);
  }
  Matrix de = layer_norm_backward(dx, result.cache.xhat_emb,
                                  result.cache.invstd_emb, params.emb_ln_g,
                                  grads.emb_ln_g, grads.emb_ln_b);
  for (int t = 0; t < s_text; ++t) {
    grads.tok_emb.row(batch.token_ids[t]) += de.row(t);
    grads.seg_emb.row(batch.segment_ids[t]) += de.row(t);
    grads.pos_emb.row(batch.position_ids[t]) += de.row(t);
  }
  if (k > 0) {
    grads.region_proj += batch.regions.transpose() * de.bottomRows(k);
    grads.region_bias += de.bottomRows(k).colwise().sum().transpose();
    for (int r = 0; r < k; ++r) {
      grads.seg_emb.row(batch.segment_ids[s_text + r]) += de.row(s_text + r);
    }
  }
  return grads;
}

}  // namespace vivo
