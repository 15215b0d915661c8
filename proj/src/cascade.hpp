#pragma once

// Encoder -> context query -> projector -> decoder cascade.
//
// The encoder sees [text embeddings; query rows] under plain causal attention
// and the final-layer states at the query positions form the latent context.
// The decoder sees [projected latent; prompt; BOS; text] and is trained to
// emit the text followed by EOS.

#include <cstdint>
#include <span>
#include <vector>

#include "transformer.hpp"

namespace c3 {

struct CascadeConfig {
  TransformerConfig encoder;
  TransformerConfig decoder;
  std::size_t n_latent = 8;

  // Encoder without head, decoder with head, shared vocabulary, encoder strictly
  // smaller than decoder.
  void validate() const;
  std::size_t max_text_tokens() const { return encoder.max_seq_len - n_latent; }
  bool operator==(const CascadeConfig&) const = default;
};

template <typename Real>
struct CascadeModel {
  CascadeConfig config;
  TransformerWeights<Real> encoder;
  Tensor<Real> query;        // [N, D_enc]
  Tensor<Real> proj_weight;  // [D_enc, D_dec]
  Tensor<Real> proj_bias;    // [D_dec]
  TransformerWeights<Real> decoder;

  static CascadeModel init(const CascadeConfig& cfg, std::uint64_t seed);
  // Fixed order: encoder.*, query, projector.*, decoder.*
  ParamList<Real> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
};

// Latent context [N, D_enc]. Text must hold 1..max_text_tokens() tokens.
template <typename Real>
Tensor<Real> encode(const CascadeModel<Real>& model, std::span<const Token> text);

// Per-row affine map [N, D_enc] -> [N, D_dec].
template <typename Real>
Tensor<Real> project(const CascadeModel<Real>& model, const Tensor<Real>& latent);

// Decoder input ids after the latent rows: prompt, BOS, then the text.
TokenSequence decoder_suffix(std::span<const Token> text);

// Targets and loss mask over every decoder position for teacher forcing.
// Latent and prompt positions are masked out; the BOS position predicts the
// first text token and the last text position predicts EOS.
struct TeacherTargets {
  std::vector<std::int32_t> targets;
  std::vector<std::uint8_t> mask;
};
TeacherTargets teacher_targets(std::size_t n_latent, std::span<const Token> text);

// Full decoder logits for every position of the teacher-forced sequence.
template <typename Real>
Tensor<Real> decoder_logits(const CascadeModel<Real>& model, std::span<const Token> text);

// Summed next-token NLL over loss positions; count receives their number
// (text length + 1).
template <typename Real>
Tensor<Real> reconstruction_nll(const CascadeModel<Real>& model, std::span<const Token> text, std::size_t* count);

// Mean next-token cross-entropy over loss positions.
template <typename Real>
Tensor<Real> reconstruction_loss(const CascadeModel<Real>& model, std::span<const Token> text);

struct Generation {
  TokenSequence tokens;  // EOS excluded
  bool hit_eos = false;
};

// Greedy decoding from [latent rows; prompt; BOS]. Only byte ids and EOS are
// candidates. Stops at EOS, max_new_tokens or the decoder's max_seq_len.
template <typename Real>
Generation generate(const CascadeModel<Real>& model, const Tensor<Real>& projected_latent,
                    std::size_t max_new_tokens);

template <typename Real>
Generation reconstruct(const CascadeModel<Real>& model, std::span<const Token> text, std::size_t max_new_tokens);

}  // namespace c3
