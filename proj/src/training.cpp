#include "training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "checkpoint.hpp"

namespace c3 {

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.peak_lr = 3e-4;
  c.warmup_steps = 100;
  c.total_steps = 20000;
  c.batch_per_step = 32;
  c.accumulation_steps = 1;
  c.weight_decay = 0.01;
  c.beta1 = 0.9;
  c.beta2 = 0.999;
  c.adam_eps = 1e-8;
  c.checkpoint_every = 500;
  return c;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.peak_lr = 1e-5;
  c.warmup_steps = 100;
  c.total_steps = 40000;
  c.batch_per_step = 16;  // 2 per device on 8 devices
  c.accumulation_steps = 16;
  c.checkpoint_every = 1000;
  return c;
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorKind::kInvalidArgument, "train config: " + msg); };
  if (total_steps < 0) bad("total_steps must be non-negative");
  if (warmup_steps < 0) bad("warmup_steps must be non-negative");
  if (total_steps > 0 && warmup_steps >= total_steps) bad("warmup_steps must be smaller than total_steps");
  if (!(peak_lr >= 0) || !(min_lr >= 0) || min_lr > peak_lr) bad("need 0 <= min_lr <= peak_lr");
  if (batch_per_step == 0 || accumulation_steps == 0) bad("batch_per_step and accumulation_steps must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) bad("adam_eps must be positive");
  if (!(weight_decay >= 0)) bad("weight_decay must be non-negative");
  if (checkpoint_every < 0) bad("checkpoint_every must be non-negative");
  if (!(stop_loss >= 0)) bad("stop_loss must be non-negative");
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0) fail(ErrorKind::kInvalidArgument, "negative schedule step " + std::to_string(step));
  if (step >= cfg.total_steps) return cfg.min_lr;
  if (step < cfg.warmup_steps) return cfg.peak_lr * double(step) / double(cfg.warmup_steps);
  const double progress = double(step - cfg.warmup_steps) / double(cfg.total_steps - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Real>
void adamw_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                  std::int64_t t, const AdamHyper& hp) {
  const Real b1 = Real(hp.beta1), b2 = Real(hp.beta2);
  const Real c1 = Real(1.0 / (1.0 - std::pow(hp.beta1, double(t))));
  const Real c2 = Real(1.0 / (1.0 - std::pow(hp.beta2, double(t))));
  const Real lr = Real(hp.lr), eps = Real(hp.eps);
  const Real decay = Real(1.0 - hp.lr * hp.weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Real g = grad.empty() ? Real(0) : grad[i];
    m[i] = b1 * m[i] + (Real(1) - b1) * g;
    v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
    const Real m_hat = m[i] * c1;
    const Real v_hat = v[i] * c2;
    param[i] = param[i] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename Real>
void adamw_step(const ParamList<Real>& params, AdamState<Real>& state, double lr, const TrainConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    fail(ErrorKind::kInternal, "optimizer state does not match parameter list");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (Real g : p.tensor.grad()) {
      if (!std::isfinite(g)) fail(ErrorKind::kNumeric, "non-finite gradient in parameter " + p.name);
    }
  }
  const std::int64_t t = state.step + 1;
  const AdamHyper hp{lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    std::span<const Real> g;
    if (tensor.has_grad()) g = std::as_const(tensor).grad();
    adamw_update<Real>(tensor.data(), g, state.m[i], state.v[i], t, hp);
  }
  state.step = t;
}

DocSampler::DocSampler(std::size_t n_docs, std::uint64_t seed) : engine_(splitmix64(seed ^ 0xD0C5A3B1E5ULL)) {
  order_.resize(n_docs);
  for (std::size_t i = 0; i < n_docs; ++i) order_[i] = std::uint32_t(i);
  cursor_ = n_docs;  // shuffle on first draw
}

void DocSampler::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = std::size_t(engine_() % i);
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

std::size_t DocSampler::next() {
  if (order_.empty()) fail(ErrorKind::kInvalidArgument, "sampling from an empty corpus");
  if (cursor_ >= order_.size()) reshuffle();
  return order_[cursor_++];
}

std::string DocSampler::engine_state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void DocSampler::restore(const std::string& engine_state, std::vector<std::uint32_t> order, std::size_t cursor) {
  std::istringstream is(engine_state);
  is >> engine_;
  if (!is) fail(ErrorKind::kFormat, "malformed sampler state");
  if (cursor > order.size()) fail(ErrorKind::kFormat, "sampler cursor out of range");
  order_ = std::move(order);
  cursor_ = cursor;
}

template <typename Real>
TrainState<Real> fresh_train_state(const CascadeModel<Real>& model, std::size_t n_docs, const TrainConfig& cfg) {
  TrainState<Real> s;
  for (const auto& p : model.parameters()) {
    s.adam.m.emplace_back(p.tensor.numel(), Real(0));
    s.adam.v.emplace_back(p.tensor.numel(), Real(0));
  }
  s.sampler = DocSampler(n_docs, cfg.seed);
  return s;
}

template <typename Real>
double accumulate_micro_batch(const CascadeModel<Real>& model, std::span<const TokenSequence> docs,
                              std::size_t accumulation_steps) {
  GradTape<Real> tape;
  Tensor<Real> total;
  std::size_t count = 0;
  for (const auto& doc : docs) {
    std::size_t n = 0;
    auto nll = reconstruction_nll(model, doc, &n);
    total = total.defined() ? add(total, nll) : nll;
    count += n;
  }
  const double loss = double(total.item()) / double(count);
  tape.backward(scale(total, Real(1.0 / (double(count) * double(accumulation_steps)))));
  return loss;
}

namespace {

void write_csv_row(std::ofstream& csv, const StepRecord& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.step << ',' << r.lr << ',' << r.loss << '\n';
  csv << os.str();
  csv.flush();
}

}  // namespace

template <typename Real>
TrainResult train(CascadeModel<Real>& model, TrainState<Real>& state, std::span<const TokenSequence> corpus,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (corpus.empty()) fail(ErrorKind::kInvalidArgument, "training corpus is empty");
  for (const auto& doc : corpus) {
    if (doc.empty() || doc.size() > model.config.max_text_tokens()) {
      fail(ErrorKind::kInvalidArgument, "document of " + std::to_string(doc.size()) +
                                            " tokens does not fit the encoder (limit " +
                                            std::to_string(model.config.max_text_tokens()) + ")");
    }
    const std::size_t dec_len = model.config.n_latent + prompt_tokens().size() + 1 + doc.size();
    if (dec_len > model.config.decoder.max_seq_len) {
      fail(ErrorKind::kInvalidArgument, "document of " + std::to_string(doc.size()) +
                                            " tokens does not fit the decoder max_seq_len " +
                                            std::to_string(model.config.decoder.max_seq_len));
    }
  }
  if (state.sampler.order().size() != corpus.size()) {
    fail(ErrorKind::kInvalidArgument, "train state was built for a corpus of " +
                                          std::to_string(state.sampler.order().size()) + " documents, got " +
                                          std::to_string(corpus.size()));
  }

  TrainResult result;
  const bool write = !options.out_dir.empty();
  std::ofstream csv;
  const auto ckpt_path = options.out_dir / "checkpoint.c3ck";
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    const auto csv_path = options.out_dir / "loss.csv";
    const bool resume = state.step() > 0 && std::filesystem::exists(csv_path);
    csv.open(csv_path, resume ? std::ios::app : std::ios::trunc);
    if (!csv) fail(ErrorKind::kIo, "cannot open " + csv_path.string());
    if (!resume) csv << "step,lr,loss\n";
  }
  auto save = [&] {
    if (!write) return;
    save_checkpoint(ckpt_path, model, cfg, state, options.config_hash);
    result.checkpoint = ckpt_path;
  };

  const auto params = model.parameters();
  const std::int64_t end = options.until_step >= 0 ? std::min(options.until_step, cfg.total_steps) : cfg.total_steps;
  std::vector<TokenSequence> batch;
  bool dirty = false;
  while (state.step() < end) {
    const std::int64_t step = state.step() + 1;
    double loss_acc = 0;
    for (std::size_t a = 0; a < cfg.accumulation_steps; ++a) {
      batch.clear();
      for (std::size_t b = 0; b < cfg.batch_per_step; ++b) batch.push_back(corpus[state.sampler.next()]);
      loss_acc += accumulate_micro_batch<Real>(model, batch, cfg.accumulation_steps);
    }
    const double loss = loss_acc / double(cfg.accumulation_steps);
    if (!std::isfinite(loss)) {
      std::string where = write && std::filesystem::exists(ckpt_path) ? "; last good checkpoint " + ckpt_path.string()
                                                                      : "";
      fail(ErrorKind::kNumeric, "loss diverged at step " + std::to_string(step) + where);
    }
    const double lr = lr_schedule(step, cfg);
    adamw_step(params, state.adam, lr, cfg);
    model.zero_grad();
    state.last_loss = loss;
    state.ema_loss = step == 1 ? loss : 0.98 * state.ema_loss + 0.02 * loss;
    dirty = true;

    const StepRecord rec{step, lr, loss};
    result.curve.push_back(rec);
    if (write) write_csv_row(csv, rec);
    if (options.on_step) options.on_step(rec);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save();
      dirty = false;
    }
    if (cfg.stop_loss > 0 && loss < cfg.stop_loss) {
      result.stopped_on_loss = true;
      break;
    }
  }
  if (dirty || (write && !std::filesystem::exists(ckpt_path))) save();
  return result;
}

#define C3_INSTANTIATE_TRAINING(R)                                                                       \
  template void adamw_update(std::span<R>, std::span<const R>, std::span<R>, std::span<R>, std::int64_t, \
                             const AdamHyper&);                                                          \
  template void adamw_step(const ParamList<R>&, AdamState<R>&, double, const TrainConfig&);              \
  template TrainState<R> fresh_train_state(const CascadeModel<R>&, std::size_t, const TrainConfig&);     \
  template double accumulate_micro_batch(const CascadeModel<R>&, std::span<const TokenSequence>,         \
                                         std::size_t);                                                   \
  template TrainResult train(CascadeModel<R>&, TrainState<R>&, std::span<const TokenSequence>,           \
                             const TrainConfig&, const TrainOptions&);

C3_INSTANTIATE_TRAINING(float)
C3_INSTANTIATE_TRAINING(double)

}  // namespace c3
