#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "training.hpp"

using namespace c3;
using namespace c3::testing;

namespace {

TokenSequence random_text(std::size_t n, std::mt19937_64& rng) {
  TokenSequence ids(n);
  for (auto& t : ids) t = Token(32 + rng() % 95);
  return ids;
}

// One-layer, one-head encoder written out step by step in plain loops.
std::vector<double> reference_encode(const CascadeModel<double>& m, const TokenSequence& text) {
  const auto& cfg = m.config.encoder;
  const std::size_t d = cfg.d_model, n = m.config.n_latent, T = text.size() + n;
  std::vector<std::vector<double>> h(T, std::vector<double>(d));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < d; ++c) {
      h[t][c] = t < text.size() ? m.encoder.embedding.at(std::size_t(text[t]), c) : m.query.at(t - text.size(), c);
    }
  }
  auto norm = [&](const std::vector<double>& x, const Tensor<double>& g) {
    double ms = 0;
    for (double v : x) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / double(d) + cfg.eps);
    std::vector<double> y(d);
    for (std::size_t c = 0; c < d; ++c) y[c] = x[c] * inv * g.data()[c];
    return y;
  };
  auto matvec = [](const std::vector<double>& x, const Tensor<double>& w) {
    std::vector<double> y(w.dim(1), 0.0);
    for (std::size_t i = 0; i < w.dim(0); ++i) {
      for (std::size_t j = 0; j < w.dim(1); ++j) y[j] += x[i] * w.at(i, j);
    }
    return y;
  };
  auto rotate = [&](std::vector<double> v, std::size_t pos) {
    const std::size_t half = d / 2;
    for (std::size_t j = 0; j < half; ++j) {
      const double a = double(pos) * std::pow(cfg.rope_base, -2.0 * double(j) / double(d));
      const double x = v[j], y = v[j + half];
      v[j] = x * std::cos(a) - y * std::sin(a);
      v[j + half] = y * std::cos(a) + x * std::sin(a);
    }
    return v;
  };
  const auto& L = m.encoder.layers[0];
  std::vector<std::vector<double>> q(T), k(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto a = norm(h[t], L.attn_norm);
    q[t] = rotate(matvec(a, L.wq), t);
    k[t] = rotate(matvec(a, L.wk), t);
    v[t] = matvec(a, L.wv);
  }
  std::vector<double> out;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> w(t + 1);
    double mx = -1e300, z = 0;
    for (std::size_t s = 0; s <= t; ++s) {
      double dot = 0;
      for (std::size_t c = 0; c < d; ++c) dot += q[t][c] * k[s][c];
      w[s] = dot / std::sqrt(double(d));
      mx = std::max(mx, w[s]);
    }
    for (auto& x : w) z += (x = std::exp(x - mx));
    std::vector<double> o(d, 0.0);
    for (std::size_t s = 0; s <= t; ++s) {
      for (std::size_t c = 0; c < d; ++c) o[c] += w[s] / z * v[s][c];
    }
    auto r = h[t];
    const auto ao = matvec(o, L.wo);
    for (std::size_t c = 0; c < d; ++c) r[c] += ao[c];
    const auto mn = norm(r, L.mlp_norm);
    const auto g = matvec(mn, L.w_gate), u = matvec(mn, L.w_up);
    std::vector<double> act(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) act[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
    const auto down = matvec(act, L.w_down);
    for (std::size_t c = 0; c < d; ++c) r[c] += down[c];
    if (t >= text.size()) out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace

TEST_CASE("cascade config enforces the encoder/decoder contract") {
  auto c = small_cascade();
  CHECK_NOTHROW(c.validate());
  auto swapped = c;
  std::swap(swapped.encoder, swapped.decoder);
  swapped.encoder.lm_head = false;
  swapped.decoder.lm_head = true;
  CHECK_THROWS_AS(swapped.validate(), Error);  // encoder now larger
  auto with_head = c;
  with_head.encoder.lm_head = true;
  CHECK_THROWS_AS(with_head.validate(), Error);
  auto zero = c;
  zero.n_latent = 0;
  CHECK_THROWS_AS(zero.validate(), Error);
  auto vocab_mismatch = c;
  vocab_mismatch.decoder.vocab = 300;
  CHECK_THROWS_AS(vocab_mismatch.validate(), Error);
}

TEST_CASE("encode returns N x D_enc regardless of text length") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {1u, 3u, 8u}) {
    auto cfg = small_cascade(n, 520);
    const auto m = CascadeModel<float>::init(cfg, 2);
    for (std::size_t len : {1u, 7u, 64u, 300u, 500u}) {
      const auto z = encode(m, random_text(len, rng));
      CHECK(z.shape() == Shape{n, cfg.encoder.d_model});
    }
  }
}

TEST_CASE("encode rejects empty and over-long text") {
  const auto m = CascadeModel<float>::init(small_cascade(4, 16), 3);
  CHECK_THROWS_AS(encode(m, TokenSequence{}), Error);
  std::mt19937_64 rng(4);
  CHECK_NOTHROW(encode(m, random_text(16, rng)));
  CHECK_THROWS_AS(encode(m, random_text(17, rng)), Error);
}

TEST_CASE("encode matches a loop-level reference implementation") {
  CascadeConfig cfg;
  cfg.n_latent = 3;
  cfg.encoder = small_transformer(1, 8, 1, false, 32);
  cfg.decoder = small_transformer(1, 16, 2, true, 64);
  auto m = CascadeModel<double>::init(cfg, 5);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> dist(0.0, 0.5);
  for (auto& p : m.parameters()) {
    if (p.name.find("norm") == std::string::npos) {
      for (auto& v : p.tensor.data()) v = dist(rng);
    }
  }
  const auto text = random_text(9, rng);
  const auto z = encode(m, text);
  const auto ref = reference_encode(m, text);
  REQUIRE(ref.size() == z.numel());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(z.data()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
}

TEST_CASE("projector is an affine per-row map") {
  auto m = CascadeModel<double>::init(small_cascade(), 7);
  std::mt19937_64 rng(8);
  auto latent = random_tensor({4, 16}, rng, 1.0, false);
  SUBCASE("zero weight yields the bias on every row") {
    std::fill(m.proj_weight.data().begin(), m.proj_weight.data().end(), 0.0);
    for (std::size_t c = 0; c < 24; ++c) m.proj_bias.data()[c] = double(c);
    const auto y = project(m, latent);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 24; ++c) CHECK(y.at(r, c) == double(c));
    }
  }
  SUBCASE("identity block copies the latent") {
    std::fill(m.proj_weight.data().begin(), m.proj_weight.data().end(), 0.0);
    std::fill(m.proj_bias.data().begin(), m.proj_bias.data().end(), 0.0);
    for (std::size_t i = 0; i < 16; ++i) m.proj_weight.data()[i * 24 + i] = 1.0;
    const auto y = project(m, latent);
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 24; ++c) CHECK(y.at(r, c) == (c < 16 ? latent.at(r, c) : 0.0));
    }
  }
}

TEST_CASE("teacher targets cover only text and EOS positions") {
  const TokenSequence text = {'a', 'b', 'c'};
  const auto t = teacher_targets(4, text);
  const std::size_t lead = 4 + prompt_tokens().size();
  REQUIRE(t.targets.size() == lead + 1 + 3);
  for (std::size_t i = 0; i < lead; ++i) CHECK(t.mask[i] == 0);
  CHECK(t.targets[lead] == 'a');
  CHECK(t.targets[lead + 2] == 'c');
  CHECK(t.targets[lead + 3] == vocab::kEos);
  std::size_t active = 0;
  for (auto v : t.mask) active += v;
  CHECK(active == 4);
  const auto s = decoder_suffix(text);
  CHECK(s.size() == prompt_tokens().size() + 1 + 3);
  CHECK(s[prompt_tokens().size()] == vocab::kBos);
}

TEST_CASE("reconstruction loss equals masked cross-entropy of the full decoder logits") {
  const auto m = CascadeModel<double>::init(small_cascade(), 9);
  std::mt19937_64 rng(10);
  const auto text = random_text(12, rng);
  const auto logits = decoder_logits(m, text);
  const auto tt = teacher_targets(m.config.n_latent, text);
  const double expected = cross_entropy(logits, tt.targets, tt.mask).item();
  CHECK(reconstruction_loss(m, text).item() == doctest::Approx(expected).epsilon(1e-12));
  std::size_t count = 0;
  reconstruction_nll(m, text, &count);
  CHECK(count == text.size() + 1);
}

TEST_CASE("loss positions see the text only through the latent") {
  // Changing a text token changes the latent; with the decoder prefix fixed,
  // the first loss position depends on the text only via that path.
  auto m = CascadeModel<double>::init(small_cascade(), 11);
  std::fill(m.proj_weight.data().begin(), m.proj_weight.data().end(), 0.0);
  std::mt19937_64 rng(12);
  auto a = random_text(10, rng);
  auto b = a;
  b[5] = Token(b[5] == 'x' ? 'y' : 'x');
  const std::size_t bos_row = m.config.n_latent + prompt_tokens().size();
  const auto la = decoder_logits(m, a), lb = decoder_logits(m, b);
  for (std::size_t c = 0; c < vocab::kSize; ++c) CHECK(la.at(bos_row, c) == lb.at(bos_row, c));
}

TEST_CASE("zeroed projected latents make reconstructions input independent") {
  const auto m = CascadeModel<float>::init(small_cascade(), 13);
  std::mt19937_64 rng(14);
  const auto zero = Tensor<float>::zeros({m.config.n_latent, m.config.decoder.d_model});
  const auto g1 = generate(m, zero, 20);
  const auto g2 = generate(m, zero, 20);
  CHECK(g1.tokens == g2.tokens);
  // With zero latents the decoder input is identical for any text.
  for (int i = 0; i < 5; ++i) {
    auto text = random_text(8 + rng() % 20, rng);
    auto z = project(m, encode(m, text));
    std::fill(z.data().begin(), z.data().end(), 0.0f);
    CHECK(generate(m, z, 20).tokens == g1.tokens);
  }
}

TEST_CASE("greedy generation obeys the token limit and emits bytes only") {
  const auto m = CascadeModel<float>::init(small_cascade(), 15);
  std::mt19937_64 rng(16);
  const auto text = random_text(10, rng);
  const auto g = reconstruct(m, text, 7);
  CHECK(g.tokens.size() <= 7);
  for (auto t : g.tokens) CHECK(t < 256);
  CHECK(reconstruct(m, text, 0).tokens.empty());
}

TEST_CASE("greedy generation matches argmax over full recomputation") {
  const auto m = CascadeModel<double>::init(small_cascade(), 17);
  std::mt19937_64 rng(18);
  const auto text = random_text(6, rng);
  const auto g = reconstruct(m, text, 10);
  // Recompute each step without a cache.
  const auto latent = project(m, encode(m, text));
  TokenSequence produced;
  for (std::size_t step = 0; step < g.tokens.size(); ++step) {
    auto suffix = decoder_suffix(produced);
    const std::array<Tensor<double>, 2> parts{latent, embed_tokens(m.decoder, suffix)};
    const auto rows = concat_rows<double>(parts);
    const auto out = forward(m.decoder, m.config.decoder, rows, position_range(0, rows.dim(0)));
    const std::size_t last = rows.dim(0) - 1;
    Token best = 0;
    for (Token t = 1; t < 256; ++t) {
      if (out.logits.at(last, std::size_t(t)) > out.logits.at(last, std::size_t(best))) best = t;
    }
    CHECK(best == g.tokens[step]);
    produced.push_back(best);
  }
}

TEST_CASE("cascade gradients match finite differences") {
  auto m = CascadeModel<double>::init(small_cascade(), 19);
  rescale_for_finite_differences(m.parameters(), 20);
  std::mt19937_64 rng(20);
  const auto text = random_text(5, rng);
  // The full sweep lives in the acceptance suite; here only the small tensors.
  std::vector<std::pair<std::string, T64>> inputs;
  for (const auto& p : m.parameters()) {
    if (p.tensor.numel() <= 600) inputs.emplace_back(p.name, p.tensor);
  }
  const auto loss = [&] { return reconstruction_loss(m, text); };
  const auto coarse = check_gradients(inputs, loss, 1e-3);
  INFO(coarse.worst_tensor);
  CHECK(coarse.max_tensor_rel <= 1e-4);
  const auto fine = check_gradients(inputs, loss, 1e-4);
  INFO(fine.worst);
  CHECK(fine.max_rel <= 1e-4);
}

TEST_CASE("a few optimizer steps lower the reconstruction loss") {
  auto m = CascadeModel<float>::init(small_cascade(), 21);
  std::mt19937_64 rng(22);
  const std::vector<TokenSequence> docs = {random_text(12, rng), random_text(15, rng)};
  TrainConfig cfg = TrainConfig::desk();
  cfg.peak_lr = 3e-3;
  cfg.warmup_steps = 5;
  cfg.total_steps = 150;
  cfg.batch_per_step = 2;
  auto state = fresh_train_state(m, docs.size(), cfg);
  const auto result = train(m, state, docs, cfg);
  REQUIRE(result.curve.size() == 150);
  CHECK(result.curve.back().loss < 0.5 * result.curve.front().loss);
}

TEST_CASE("initialization is a pure function of the seed") {
  const auto a = CascadeModel<float>::init(small_cascade(), 23);
  const auto b = CascadeModel<float>::init(small_cascade(), 23);
  const auto c = CascadeModel<float>::init(small_cascade(), 24);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
    differs |= !std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pc[i].tensor.data().begin());
  }
  CHECK(differs);
  CHECK(a.parameter_count() == a.config.encoder.parameter_count() + a.config.decoder.parameter_count() +
                                   4 * 16 + 16 * 24 + 24);
}
