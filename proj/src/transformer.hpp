#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"
#include "tokenizer.hpp"

namespace c3 {

struct TransformerConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_mlp = 128;
  std::size_t vocab = vocab::kSize;
  std::size_t max_seq_len = 256;
  double rope_base = 10000.0;
  double eps = 1e-6;
  // Without a head the model only produces hidden states; the final norm is
  // dropped with it since nothing consumes it.
  bool lm_head = true;

  std::size_t d_head() const { return n_heads == 0 ? 0 : d_model / n_heads; }
  void validate() const;
  std::size_t parameter_count() const;
  bool operator==(const TransformerConfig&) const = default;
};

template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
};
template <typename Real>
using ParamList = std::vector<NamedParam<Real>>;

template <typename Real>
struct LayerWeights {
  Tensor<Real> attn_norm;  // [d]
  Tensor<Real> wq, wk, wv, wo;  // [d, d], stored [in, out]
  Tensor<Real> mlp_norm;  // [d]
  Tensor<Real> w_gate, w_up;  // [d, d_mlp]
  Tensor<Real> w_down;  // [d_mlp, d]
};

template <typename Real>
struct TransformerWeights {
  Tensor<Real> embedding;  // [V, d]
  std::vector<LayerWeights<Real>> layers;
  Tensor<Real> final_norm;  // [d], lm_head only
  Tensor<Real> head;  // [d, V], lm_head only

  // normal(0, 0.02) projections and embeddings, unit norm gains.
  static TransformerWeights init(const TransformerConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList<Real>& out) const;
};

template <typename Real>
struct ForwardOutput {
  Tensor<Real> hidden;  // final-layer residual stream, one row per input row
  Tensor<Real> logits;  // undefined when the config has no head
};

template <typename Real>
struct KVCache {
  std::vector<Tensor<Real>> keys;    // per layer, post-rotation [t, d]
  std::vector<Tensor<Real>> values;  // per layer [t, d]
  std::size_t length = 0;
};

// Full causal forward over embedding rows. Positions must be strictly
// increasing and below max_seq_len.
template <typename Real>
ForwardOutput<Real> forward(const TransformerWeights<Real>& w, const TransformerConfig& cfg,
                            const Tensor<Real>& input_rows, std::span<const std::int64_t> positions);

template <typename Real>
Tensor<Real> forward_hidden(const TransformerWeights<Real>& w, const TransformerConfig& cfg,
                            const Tensor<Real>& input_rows, std::span<const std::int64_t> positions);

// Final norm + output head over hidden rows.
template <typename Real>
Tensor<Real> lm_logits(const TransformerWeights<Real>& w, const TransformerConfig& cfg, const Tensor<Real>& hidden);

// Feeds new_rows at positions start_position.. on top of the cached prefix.
// start_position must equal the cached length.
template <typename Real>
Tensor<Real> forward_incremental(const TransformerWeights<Real>& w, const TransformerConfig& cfg,
                                 KVCache<Real>& cache, const Tensor<Real>& new_rows, std::int64_t start_position);

template <typename Real>
Tensor<Real> embed_tokens(const TransformerWeights<Real>& w, std::span<const Token> ids) {
  return embedding(w.embedding, std::span<const std::int32_t>(ids.data(), ids.size()));
}

std::vector<std::int64_t> position_range(std::int64_t start, std::size_t count);

}  // namespace c3
