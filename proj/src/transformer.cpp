#include "transformer.hpp"

#include <array>

namespace c3 {

void TransformerConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, "transformer config: " + msg); };
  if (n_layers == 0) bad("n_layers must be at least 1");
  if (d_model == 0 || n_heads == 0) bad("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) {
    bad("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_head() % 2 != 0) bad("d_head " + std::to_string(d_head()) + " must be even for rotary embeddings");
  if (d_mlp == 0) bad("d_mlp must be positive");
  if (vocab == 0) bad("vocab must be positive");
  if (max_seq_len == 0) bad("max_seq_len must be positive");
  if (!(eps > 0)) bad("eps must be positive");
  if (!(rope_base > 0)) bad("rope_base must be positive");
}

std::size_t TransformerConfig::parameter_count() const {
  const std::size_t per_layer = 2 * d_model + 4 * d_model * d_model + 3 * d_model * d_mlp;
  std::size_t n = vocab * d_model + n_layers * per_layer;
  if (lm_head) n += d_model + d_model * vocab;
  return n;
}

std::vector<std::int64_t> position_range(std::int64_t start, std::size_t count) {
  std::vector<std::int64_t> p(count);
  for (std::size_t i = 0; i < count; ++i) p[i] = start + std::int64_t(i);
  return p;
}

namespace {

template <typename Real>
Tensor<Real> normal_tensor(Shape shape, Rng& rng, double stddev) {
  auto t = Tensor<Real>::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = Real(rng.normal() * stddev);
  return t;
}

template <typename Real>
Tensor<Real> ones(std::size_t n) {
  return Tensor<Real>::full({n}, Real(1), true);
}

template <typename Real>
Tensor<Real> run_blocks(const TransformerWeights<Real>& w, const TransformerConfig& cfg, Tensor<Real> h,
                        std::span<const std::int64_t> positions, KVCache<Real>* cache) {
  const Real eps = Real(cfg.eps);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    auto a = rms_norm(h, L.attn_norm, eps);
    auto q = rope(linear(a, L.wq), positions, cfg.n_heads, cfg.rope_base);
    auto k = rope(linear(a, L.wk), positions, cfg.n_heads, cfg.rope_base);
    auto v = linear(a, L.wv);
    if (cache != nullptr) {
      if (cache->length > 0) {
        const std::array<Tensor<Real>, 2> kk{cache->keys[l], k}, vv{cache->values[l], v};
        k = concat_rows<Real>(kk);
        v = concat_rows<Real>(vv);
      }
      cache->keys[l] = k;
      cache->values[l] = v;
    }
    auto o = causal_attention(q, k, v, cfg.n_heads);
    h = add(h, linear(o, L.wo));
    auto m = rms_norm(h, L.mlp_norm, eps);
    auto gated = mul(silu(linear(m, L.w_gate)), linear(m, L.w_up));
    h = add(h, linear(gated, L.w_down));
  }
  return h;
}

void check_positions(const TransformerConfig& cfg, std::size_t rows, std::span<const std::int64_t> positions) {
  if (positions.size() != rows) {
    fail(ErrorKind::kDimension,
         "forward got " + std::to_string(rows) + " rows but " + std::to_string(positions.size()) + " positions");
  }
  if (rows > cfg.max_seq_len || (!positions.empty() && positions.back() >= std::int64_t(cfg.max_seq_len))) {
    fail(ErrorKind::kInvalidArgument, "sequence of " + std::to_string(rows) + " rows exceeds max_seq_len " +
                                          std::to_string(cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || (i > 0 && positions[i] <= positions[i - 1])) {
      fail(ErrorKind::kInvalidArgument, "positions must be non-negative and strictly increasing");
    }
  }
}

}  // namespace

template <typename Real>
TransformerWeights<Real> TransformerWeights<Real>::init(const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kStd = 0.02;
  const std::size_t d = cfg.d_model;
  TransformerWeights w;
  w.embedding = normal_tensor<Real>({cfg.vocab, d}, rng, kStd);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerWeights<Real> L;
    L.attn_norm = ones<Real>(d);
    L.wq = normal_tensor<Real>({d, d}, rng, kStd);
    L.wk = normal_tensor<Real>({d, d}, rng, kStd);
    L.wv = normal_tensor<Real>({d, d}, rng, kStd);
    L.wo = normal_tensor<Real>({d, d}, rng, kStd);
    L.mlp_norm = ones<Real>(d);
    L.w_gate = normal_tensor<Real>({d, cfg.d_mlp}, rng, kStd);
    L.w_up = normal_tensor<Real>({d, cfg.d_mlp}, rng, kStd);
    L.w_down = normal_tensor<Real>({cfg.d_mlp, d}, rng, kStd);
    w.layers.push_back(std::move(L));
  }
  if (cfg.lm_head) {
    w.final_norm = ones<Real>(d);
    w.head = normal_tensor<Real>({d, cfg.vocab}, rng, kStd);
  }
  return w;
}

template <typename Real>
void TransformerWeights<Real>::collect(const std::string& prefix, ParamList<Real>& out) const {
  out.push_back({prefix + "embedding", embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = prefix + "layers." + std::to_string(l) + ".";
    out.push_back({p + "attn_norm", L.attn_norm});
    out.push_back({p + "wq", L.wq});
    out.push_back({p + "wk", L.wk});
    out.push_back({p + "wv", L.wv});
    out.push_back({p + "wo", L.wo});
    out.push_back({p + "mlp_norm", L.mlp_norm});
    out.push_back({p + "w_gate", L.w_gate});
    out.push_back({p + "w_up", L.w_up});
    out.push_back({p + "w_down", L.w_down});
  }
  if (final_norm.defined()) out.push_back({prefix + "final_norm", final_norm});
  if (head.defined()) out.push_back({prefix + "head", head});
}

template <typename Real>
Tensor<Real> forward_hidden(const TransformerWeights<Real>& w, const TransformerConfig& cfg,
                            const Tensor<Real>& input_rows, std::span<const std::int64_t> positions) {
  if (input_rows.ndim() != 2 || input_rows.dim(1) != cfg.d_model) {
    fail(ErrorKind::kDimension, "forward expects rows of width " + std::to_string(cfg.d_model) + ", got " +
                                    shape_str(input_rows.shape()));
  }
  check_positions(cfg, input_rows.dim(0), positions);
  return run_blocks<Real>(w, cfg, input_rows, positions, nullptr);
}

template <typename Real>
Tensor<Real> lm_logits(const TransformerWeights<Real>& w, const TransformerConfig& cfg, const Tensor<Real>& hidden) {
  if (!cfg.lm_head) fail(ErrorKind::kInvalidArgument, "model has no output head");
  return linear(rms_norm(hidden, w.final_norm, Real(cfg.eps)), w.head);
}

template <typename Real>
ForwardOutput<Real> forward(const TransformerWeights<Real>& w, const TransformerConfig& cfg,
                            const Tensor<Real>& input_rows, std::span<const std::int64_t> positions) {
  ForwardOutput<Real> out;
  out.hidden = forward_hidden(w, cfg, input_rows, positions);
  if (cfg.lm_head) out.logits = lm_logits(w, cfg, out.hidden);
  return out;
}

template <typename Real>
Tensor<Real> forward_incremental(const TransformerWeights<Real>& w, const TransformerConfig& cfg,
                                 KVCache<Real>& cache, const Tensor<Real>& new_rows, std::int64_t start_position) {
  if (start_position != std::int64_t(cache.length)) {
    fail(ErrorKind::kInvalidArgument, "incremental forward at position " + std::to_string(start_position) +
                                          " but cache holds " + std::to_string(cache.length) + " positions");
  }
  if (new_rows.ndim() != 2 || new_rows.dim(1) != cfg.d_model) {
    fail(ErrorKind::kDimension, "forward expects rows of width " + std::to_string(cfg.d_model) + ", got " +
                                    shape_str(new_rows.shape()));
  }
  if (new_rows.dim(0) == 0) return Tensor<Real>::zeros({0, cfg.vocab});
  if (cache.keys.size() != cfg.n_layers) {
    cache.keys.assign(cfg.n_layers, {});
    cache.values.assign(cfg.n_layers, {});
  }
  const auto positions = position_range(start_position, new_rows.dim(0));
  if (cache.length + new_rows.dim(0) > cfg.max_seq_len) {
    fail(ErrorKind::kInvalidArgument, "sequence of " + std::to_string(cache.length + new_rows.dim(0)) +
                                          " rows exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  auto h = run_blocks<Real>(w, cfg, new_rows, positions, &cache);
  cache.length += new_rows.dim(0);
  return lm_logits(w, cfg, h);
}

#define C3_INSTANTIATE_TRANSFORMER(R)                                                                     \
  template struct TransformerWeights<R>;                                                                  \
  template ForwardOutput<R> forward(const TransformerWeights<R>&, const TransformerConfig&,              \
                                    const Tensor<R>&, std::span<const std::int64_t>);                     \
  template Tensor<R> forward_hidden(const TransformerWeights<R>&, const TransformerConfig&,              \
                                    const Tensor<R>&, std::span<const std::int64_t>);                     \
  template Tensor<R> lm_logits(const TransformerWeights<R>&, const TransformerConfig&, const Tensor<R>&); \
  template Tensor<R> forward_incremental(const TransformerWeights<R>&, const TransformerConfig&,         \
                                         KVCache<R>&, const Tensor<R>&, std::int64_t);

C3_INSTANTIATE_TRANSFORMER(float)
C3_INSTANTIATE_TRANSFORMER(double)

}  // namespace c3
