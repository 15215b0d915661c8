#include "cascade.hpp"

#include <array>

namespace c3 {

void CascadeConfig::validate() const {
  encoder.validate();
  decoder.validate();
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, "cascade config: " + msg); };
  if (n_latent == 0) bad("n_latent must be at least 1");
  if (encoder.lm_head) bad("encoder must not have an output head");
  if (!decoder.lm_head) bad("decoder needs an output head");
  if (encoder.vocab != decoder.vocab) bad("encoder and decoder vocabularies differ");
  if (encoder.max_seq_len <= n_latent) bad("encoder max_seq_len must exceed n_latent");
  if (decoder.max_seq_len <= n_latent + prompt_tokens().size() + 1) bad("decoder max_seq_len too small for prompt");
  if (encoder.parameter_count() >= decoder.parameter_count()) {
    bad("encoder (" + std::to_string(encoder.parameter_count()) + " params) must be smaller than decoder (" +
        std::to_string(decoder.parameter_count()) + " params)");
  }
}

template <typename Real>
CascadeModel<Real> CascadeModel<Real>::init(const CascadeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  CascadeModel m;
  m.config = cfg;
  m.encoder = TransformerWeights<Real>::init(cfg.encoder, rng);
  m.query = Tensor<Real>::zeros({cfg.n_latent, cfg.encoder.d_model}, true);
  for (auto& v : m.query.data()) v = Real(rng.normal() * 0.02);
  m.proj_weight = Tensor<Real>::zeros({cfg.encoder.d_model, cfg.decoder.d_model}, true);
  for (auto& v : m.proj_weight.data()) v = Real(rng.normal() * 0.02);
  m.proj_bias = Tensor<Real>::zeros({cfg.decoder.d_model}, true);
  m.decoder = TransformerWeights<Real>::init(cfg.decoder, rng);
  return m;
}

template <typename Real>
ParamList<Real> CascadeModel<Real>::parameters() const {
  ParamList<Real> out;
  encoder.collect("encoder.", out);
  out.push_back({"query", query});
  out.push_back({"projector.weight", proj_weight});
  out.push_back({"projector.bias", proj_bias});
  decoder.collect("decoder.", out);
  return out;
}

template <typename Real>
std::size_t CascadeModel<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename Real>
void CascadeModel<Real>::zero_grad() const {
  for (auto p : parameters()) p.tensor.zero_grad();
}

template <typename Real>
Tensor<Real> encode(const CascadeModel<Real>& model, std::span<const Token> text) {
  const auto& cfg = model.config;
  if (text.empty()) fail(ErrorKind::kInvalidArgument, "cannot encode an empty text");
  if (text.size() > cfg.max_text_tokens()) {
    fail(ErrorKind::kInvalidArgument, "text of " + std::to_string(text.size()) + " tokens exceeds encoder limit of " +
                                          std::to_string(cfg.max_text_tokens()) + " (max_seq_len " +
                                          std::to_string(cfg.encoder.max_seq_len) + " minus " +
                                          std::to_string(cfg.n_latent) + " query rows)");
  }
  const std::array<Tensor<Real>, 2> parts{embed_tokens(model.encoder, text), model.query};
  const auto rows = concat_rows<Real>(parts);
  const auto positions = position_range(0, rows.dim(0));
  const auto hidden = forward_hidden(model.encoder, cfg.encoder, rows, positions);
  return slice_rows(hidden, text.size(), cfg.n_latent);
}

template <typename Real>
Tensor<Real> project(const CascadeModel<Real>& model, const Tensor<Real>& latent) {
  return linear(latent, model.proj_weight, model.proj_bias);
}

TokenSequence decoder_suffix(std::span<const Token> text) {
  TokenSequence ids = prompt_tokens();
  ids.push_back(vocab::kBos);
  ids.insert(ids.end(), text.begin(), text.end());
  return ids;
}

TeacherTargets teacher_targets(std::size_t n_latent, std::span<const Token> text) {
  const std::size_t lead = n_latent + prompt_tokens().size();
  const std::size_t total = lead + 1 + text.size();
  TeacherTargets t;
  t.targets.assign(total, vocab::kPad);
  t.mask.assign(total, 0);
  for (std::size_t i = 0; i <= text.size(); ++i) {
    t.targets[lead + i] = i < text.size() ? text[i] : vocab::kEos;
    t.mask[lead + i] = 1;
  }
  return t;
}

namespace {

template <typename Real>
Tensor<Real> decoder_hidden(const CascadeModel<Real>& model, std::span<const Token> text) {
  const auto latent = project(model, encode(model, text));
  const auto suffix = decoder_suffix(text);
  const std::array<Tensor<Real>, 2> parts{latent, embed_tokens(model.decoder, suffix)};
  const auto rows = concat_rows<Real>(parts);
  const auto positions = position_range(0, rows.dim(0));
  return forward_hidden(model.decoder, model.config.decoder, rows, positions);
}

}  // namespace

template <typename Real>
Tensor<Real> decoder_logits(const CascadeModel<Real>& model, std::span<const Token> text) {
  return lm_logits(model.decoder, model.config.decoder, decoder_hidden(model, text));
}

template <typename Real>
Tensor<Real> reconstruction_nll(const CascadeModel<Real>& model, std::span<const Token> text, std::size_t* count) {
  const auto hidden = decoder_hidden(model, text);
  const std::size_t lead = model.config.n_latent + prompt_tokens().size();
  const std::size_t n = text.size() + 1;
  const auto logits = lm_logits(model.decoder, model.config.decoder, slice_rows(hidden, lead, n));
  std::vector<std::int32_t> targets(text.begin(), text.end());
  targets.push_back(vocab::kEos);
  const std::vector<std::uint8_t> mask(n, 1);
  if (count != nullptr) *count = n;
  return nll_sum(logits, std::span<const std::int32_t>(targets), std::span<const std::uint8_t>(mask));
}

template <typename Real>
Tensor<Real> reconstruction_loss(const CascadeModel<Real>& model, std::span<const Token> text) {
  std::size_t count = 0;
  auto total = reconstruction_nll(model, text, &count);
  return scale(total, Real(1) / Real(count));
}

template <typename Real>
Generation generate(const CascadeModel<Real>& model, const Tensor<Real>& projected_latent,
                    std::size_t max_new_tokens) {
  const auto& dcfg = model.config.decoder;
  if (projected_latent.ndim() != 2 || projected_latent.dim(1) != dcfg.d_model) {
    fail(ErrorKind::kDimension, "generation expects latent rows of width " + std::to_string(dcfg.d_model) +
                                    ", got " + shape_str(projected_latent.shape()));
  }
  const NoGradScope<Real> no_grad;
  KVCache<Real> cache;
  const auto suffix = decoder_suffix({});
  const std::array<Tensor<Real>, 2> parts{projected_latent, embed_tokens(model.decoder, suffix)};
  auto logits = forward_incremental(model.decoder, dcfg, cache, concat_rows<Real>(parts), 0);

  Generation gen;
  while (gen.tokens.size() < max_new_tokens) {
    const Real* row = logits.data().data() + (logits.dim(0) - 1) * logits.dim(1);
    Token best = 0;
    for (Token t = 1; t < 256; ++t) {
      if (row[t] > row[best]) best = t;
    }
    if (row[vocab::kEos] > row[best]) best = vocab::kEos;
    if (best == vocab::kEos) {
      gen.hit_eos = true;
      break;
    }
    gen.tokens.push_back(best);
    if (cache.length >= dcfg.max_seq_len || gen.tokens.size() == max_new_tokens) break;
    const Token next[1] = {best};
    logits = forward_incremental(model.decoder, dcfg, cache, embed_tokens(model.decoder, next),
                                 std::int64_t(cache.length));
  }
  return gen;
}

template <typename Real>
Generation reconstruct(const CascadeModel<Real>& model, std::span<const Token> text, std::size_t max_new_tokens) {
  const NoGradScope<Real> no_grad;
  return generate(model, project(model, encode(model, text)), max_new_tokens);
}

#define C3_INSTANTIATE_CASCADE(R)                                                                          \
  template struct CascadeModel<R>;                                                                         \
  template Tensor<R> encode(const CascadeModel<R>&, std::span<const Token>);                               \
  template Tensor<R> project(const CascadeModel<R>&, const Tensor<R>&);                                    \
  template Tensor<R> decoder_logits(const CascadeModel<R>&, std::span<const Token>);                       \
  template Tensor<R> reconstruction_nll(const CascadeModel<R>&, std::span<const Token>, std::size_t*);     \
  template Tensor<R> reconstruction_loss(const CascadeModel<R>&, std::span<const Token>);                  \
  template Generation generate(const CascadeModel<R>&, const Tensor<R>&, std::size_t);                     \
  template Generation reconstruct(const CascadeModel<R>&, std::span<const Token>, std::size_t);

C3_INSTANTIATE_CASCADE(float)
C3_INSTANTIATE_CASCADE(double)

}  // namespace c3
