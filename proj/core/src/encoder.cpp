#include "cohlab/encoder.hpp"

#include <cmath>

namespace cohlab {

void EncoderConfig::validate() const {
  if (n_layers < 1) throw ContractError("EncoderConfig: n_layers must be >= 1");
  if (n_heads < 1) throw ContractError("EncoderConfig: n_heads must be >= 1");
  if (d_model % n_heads != 0)
    throw ContractError("EncoderConfig: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  if (max_seq_len < 2)
    throw ContractError("EncoderConfig: max_seq_len must be >= 2");
  if (vocab_size == 0) throw ContractError("EncoderConfig: vocab_size must be set");
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "bq", l.bq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "bk", l.bk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "bv", l.bv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "bo", l.bo);
    out.emplace_back(p + "ln1_g", l.ln1_g);
    out.emplace_back(p + "ln1_b", l.ln1_b);
    out.emplace_back(p + "ff_w1", l.ff_w1);
    out.emplace_back(p + "ff_b1", l.ff_b1);
    out.emplace_back(p + "ff_w2", l.ff_w2);
    out.emplace_back(p + "ff_b2", l.ff_b2);
    out.emplace_back(p + "ln2_g", l.ln2_g);
    out.emplace_back(p + "ln2_b", l.ln2_b);
  }
  out.emplace_back("final_ln_g", final_ln_g);
  out.emplace_back("final_ln_b", final_ln_b);
  return out;
}

std::vector<Tensor> EncoderParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

EncoderParams init_encoder_params(const EncoderConfig& cfg, std::mt19937_64& rng,
                                  double init_std) {
  cfg.validate();
  const double std_init = init_std;
  auto w = [&](std::size_t r, std::size_t c) {
    return Tensor::randn({r, c}, std_init, rng, true);
  };
  auto zeros1 = [&](std::size_t n) { return Tensor::zeros({n}, true); };
  auto ones1 = [&](std::size_t n) { return Tensor::full({n}, 1.0, true); };

  EncoderParams p;
  p.tok_emb = w(cfg.vocab_size, cfg.d_model);
  p.pos_emb = w(cfg.max_seq_len, cfg.d_model);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    EncoderParams::Layer l;
    l.wq = w(cfg.d_model, cfg.d_model);
    l.bq = zeros1(cfg.d_model);
    l.wk = w(cfg.d_model, cfg.d_model);
    l.bk = zeros1(cfg.d_model);
    l.wv = w(cfg.d_model, cfg.d_model);
    l.bv = zeros1(cfg.d_model);
    l.wo = w(cfg.d_model, cfg.d_model);
    l.bo = zeros1(cfg.d_model);
    l.ln1_g = ones1(cfg.d_model);
    l.ln1_b = zeros1(cfg.d_model);
    l.ff_w1 = w(cfg.d_model, cfg.d_ff);
    l.ff_b1 = zeros1(cfg.d_ff);
    l.ff_w2 = w(cfg.d_ff, cfg.d_model);
    l.ff_b2 = zeros1(cfg.d_model);
    l.ln2_g = ones1(cfg.d_model);
    l.ln2_b = zeros1(cfg.d_model);
    p.layers.push_back(std::move(l));
  }
  p.final_ln_g = ones1(cfg.d_model);
  p.final_ln_b = zeros1(cfg.d_model);
  return p;
}

MhaResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const std::vector<bool>& mask, std::size_t n_heads,
                               const EncoderParams::Layer& layer,
                               const RunContext& ctx, double dropout_p) {
  const std::size_t L = q.dim(0);
  const std::size_t d_model = q.dim(1);
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw ShapeError("multi_head_attention: q/k/v shapes differ");
  if (mask.size() != L)
    throw ShapeError("multi_head_attention: mask length != sequence length");
  if (d_model % n_heads != 0)
    throw ShapeError("multi_head_attention: d_model not divisible by n_heads");
  const std::size_t d_head = d_model / n_heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d_head));

  Tensor qp = add_bias(matmul(q, layer.wq), layer.bq);
  Tensor kp = add_bias(matmul(k, layer.wk), layer.bk);
  Tensor vp = add_bias(matmul(v, layer.wv), layer.bv);

  MhaResult res;
  std::vector<Tensor> head_outs;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(qp, h * d_head, d_head);
    Tensor kh = slice_cols(kp, h * d_head, d_head);
    Tensor vh = slice_cols(vp, h * d_head, d_head);
    Tensor scores = scale(matmul(qh, transpose(kh)), scale_factor);
    Tensor attn = softmax_masked_rows(scores, mask);
    res.attn.push_back(attn);
    head_outs.push_back(matmul(attn, vh));
  }
  Tensor concat = concat_cols(head_outs);
  Tensor out = add_bias(matmul(concat, layer.wo), layer.bo);
  res.output = ctx.apply_dropout(out, dropout_p);
  return res;
}

namespace {

// Pre-norm stack over embedded inputs [L x d]; shared by the token-level and
// vector-level entry points.
Tensor run_layers(const EncoderConfig& cfg, const EncoderParams& params,
                  Tensor x, const std::vector<bool>& mask, const RunContext& ctx) {
  for (const auto& layer : params.layers) {
    Tensor normed = layer_norm(x, layer.ln1_g, layer.ln1_b, 1e-5);
    MhaResult mha = multi_head_attention(normed, normed, normed, mask,
                                         cfg.n_heads, layer, ctx, cfg.dropout_p);
    x = add(x, mha.output);
    Tensor normed2 = layer_norm(x, layer.ln2_g, layer.ln2_b, 1e-5);
    Tensor ff = add_bias(matmul(normed2, layer.ff_w1), layer.ff_b1);
    ff = gelu(ff);
    ff = add_bias(matmul(ff, layer.ff_w2), layer.ff_b2);
    ff = ctx.apply_dropout(ff, cfg.dropout_p);
    x = add(x, ff);
  }
  return layer_norm(x, params.final_ln_g, params.final_ln_b, 1e-5);
}

}  // namespace

Tensor encode_sequence(const EncoderConfig& cfg, const EncoderParams& params,
                       const std::vector<std::size_t>& token_ids,
                       const std::vector<bool>& mask, const RunContext& ctx) {
  const std::size_t L = token_ids.size();
  if (L > cfg.max_seq_len)
    throw ContractError("sequence length " + std::to_string(L) +
                        " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  if (mask.size() != L)
    throw ShapeError("encode: mask length != sequence length");
  for (std::size_t id : token_ids)
    if (id >= cfg.vocab_size)
      throw IndexError("token id " + std::to_string(id) +
                       " outside vocabulary of size " +
                       std::to_string(cfg.vocab_size));
  Tensor tok = embedding_lookup(params.tok_emb, token_ids);
  std::vector<std::size_t> positions(L);
  for (std::size_t i = 0; i < L; ++i) positions[i] = i;
  Tensor pos = embedding_lookup(params.pos_emb, positions);
  Tensor x = ctx.apply_dropout(add(tok, pos), cfg.dropout_p);
  return run_layers(cfg, params, std::move(x), mask, ctx);
}

Tensor encode_vectors(const EncoderConfig& cfg, const EncoderParams& params,
                      const std::vector<Tensor>& inputs, const RunContext& ctx) {
  if (inputs.empty()) throw ContractError("encode_vectors: empty input");
  if (inputs.size() > cfg.max_seq_len)
    throw ContractError("encode_vectors: input length " +
                        std::to_string(inputs.size()) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  Tensor x = stack_rows(inputs);
  std::vector<std::size_t> positions(inputs.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  Tensor pos = embedding_lookup(params.pos_emb, positions);
  x = ctx.apply_dropout(add(x, pos), cfg.dropout_p);
  std::vector<bool> mask(inputs.size(), true);
  return run_layers(cfg, params, std::move(x), mask, ctx);
}

EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params,
                     const std::vector<std::vector<std::size_t>>& token_ids,
                     const std::vector<std::vector<bool>>& masks,
                     const RunContext& ctx) {
  if (token_ids.empty()) throw ContractError("encode: empty batch");
  if (masks.size() != token_ids.size())
    throw ShapeError("encode: batch mask count mismatch");
  EncoderOutput out;
  std::vector<Tensor> cls_rows;
  for (std::size_t b = 0; b < token_ids.size(); ++b) {
    Tensor h = encode_sequence(cfg, params, token_ids[b], masks[b], ctx);
    cls_rows.push_back(row(h, 0));
    out.per_seq.push_back(std::move(h));
  }
  out.hidden = stack_matrices(out.per_seq);
  out.cls = stack_rows(cls_rows);
  return out;
}

PoolStrategy pool_strategy_from_string(const std::string& s) {
  if (s == "min") return PoolStrategy::min;
  if (s == "max") return PoolStrategy::max;
  if (s == "mean") return PoolStrategy::mean;
  if (s == "sum") return PoolStrategy::sum;
  if (s == "attention") return PoolStrategy::attention;
  if (s == "none") return PoolStrategy::none;
  throw ContractError("unknown pooling strategy '" + s + "'");
}

std::string to_string(PoolStrategy s) {
  switch (s) {
    case PoolStrategy::min: return "min";
    case PoolStrategy::max: return "max";
    case PoolStrategy::mean: return "mean";
    case PoolStrategy::sum: return "sum";
    case PoolStrategy::attention: return "attention";
    case PoolStrategy::none: return "none";
  }
  throw ContractError("invalid pooling strategy");
}

Tensor pool(const Tensor& hidden, std::size_t seg_begin, std::size_t seg_end,
            PoolStrategy strategy, const Tensor* attn_query) {
  if (seg_begin >= seg_end || seg_end > hidden.dim(0))
    throw IndexError("pool: empty or out-of-range segment [" +
                     std::to_string(seg_begin) + "," + std::to_string(seg_end) +
                     ") for " + shape_str(hidden.shape()));
  switch (strategy) {
    case PoolStrategy::min:
      return pool_rows(hidden, seg_begin, seg_end, PoolKind::min);
    case PoolStrategy::max:
      return pool_rows(hidden, seg_begin, seg_end, PoolKind::max);
    case PoolStrategy::mean:
      return pool_rows(hidden, seg_begin, seg_end, PoolKind::mean);
    case PoolStrategy::sum:
      return pool_rows(hidden, seg_begin, seg_end, PoolKind::sum);
    case PoolStrategy::none:
      return row(hidden, seg_end - 1);
    case PoolStrategy::attention: {
      if (!attn_query)
        throw ContractError("attention pooling requires a learned query vector");
      Tensor seg = slice_rows(hidden, seg_begin, seg_end - seg_begin);
      Tensor scores = matmul(seg, *attn_query);          // [len x 1]
      Tensor weights = softmax(scores, 0);               // over positions
      Tensor pooled = matmul(transpose(weights), seg);   // [1 x d]
      return row(pooled, 0);
    }
  }
  throw ContractError("invalid pooling strategy");
}

}  // namespace cohlab
