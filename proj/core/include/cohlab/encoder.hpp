#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cohlab/tensor.hpp"

namespace cohlab {

struct EncoderConfig {
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t d_model = 16;
  std::size_t d_ff = 32;
  double dropout_p = 0.1;
  std::size_t max_seq_len = 512;
  std::size_t vocab_size = 0;

  void validate() const;
};

/// All learnable tensors of one encoder stack, addressable by name.
/// Name schema: tok_emb, pos_emb, layer<i>.{wq,bq,wk,bk,wv,bv,wo,bo,
/// ln1_g,ln1_b,ff_w1,ff_b1,ff_w2,ff_b2,ln2_g,ln2_b}, final_ln_g, final_ln_b.
struct EncoderParams {
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln2_g, ln2_b;
  };
  Tensor tok_emb;  // [vocab x d_model]
  Tensor pos_emb;  // [max_seq_len x d_model]
  std::vector<Layer> layers;
  Tensor final_ln_g, final_ln_b;

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
};

EncoderParams init_encoder_params(const EncoderConfig& cfg, std::mt19937_64& rng,
                                  double init_std = 0.02);

/// Dropout / train-eval context threaded through every forward pass.
struct RunContext {
  bool train = false;
  std::mt19937_64* dropout_rng = nullptr;

  Tensor apply_dropout(const Tensor& x, double p) const {
    if (!train || p == 0.0) return x;
    if (!dropout_rng) throw ContractError("train-mode forward without dropout rng");
    return dropout(x, p, *dropout_rng, true);
  }
};

struct EncoderOutput {
  Tensor hidden;                 // [B x L x d_model]
  Tensor cls;                    // [B x d_model]
  std::vector<Tensor> per_seq;   // per batch row, [L x d_model]
};

struct MhaResult {
  Tensor output;              // [L x d_model]
  std::vector<Tensor> attn;   // per head, [L x L] weights (masked keys exactly 0)
};

/// Scaled dot-product multi-head self-attention over one sequence.
MhaResult multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const std::vector<bool>& mask, std::size_t n_heads,
                               const EncoderParams::Layer& layer,
                               const RunContext& ctx, double dropout_p);

/// Pre-norm encoder over one token sequence; returns last-layer states [L x d].
Tensor encode_sequence(const EncoderConfig& cfg, const EncoderParams& params,
                       const std::vector<std::size_t>& token_ids,
                       const std::vector<bool>& mask, const RunContext& ctx);

/// Same stack but over already-embedded input vectors (used by the
/// second-level document encoders); position embeddings are added here.
Tensor encode_vectors(const EncoderConfig& cfg, const EncoderParams& params,
                      const std::vector<Tensor>& inputs, const RunContext& ctx);

/// Batched encode. token_ids rows must share one padded length L.
EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params,
                     const std::vector<std::vector<std::size_t>>& token_ids,
                     const std::vector<std::vector<bool>>& masks,
                     const RunContext& ctx);

enum class PoolStrategy { min, max, mean, sum, attention, none };

PoolStrategy pool_strategy_from_string(const std::string& s);
std::string to_string(PoolStrategy s);

/// Reduces hidden rows [seg_begin, seg_end) to one vector. "attention"
/// needs a learned query vector [d x 1]; "none" takes the segment's last row.
Tensor pool(const Tensor& hidden, std::size_t seg_begin, std::size_t seg_end,
            PoolStrategy strategy, const Tensor* attn_query = nullptr);

}  // namespace cohlab
