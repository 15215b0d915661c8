#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cascade.hpp"

namespace c3 {

struct TrainConfig {
  double peak_lr = 3e-4;
  std::int64_t warmup_steps = 100;
  std::int64_t total_steps = 5000;
  double min_lr = 0.0;
  std::size_t batch_per_step = 32;
  std::size_t accumulation_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_every = 0;  // 0: only at the end of a run
  double stop_loss = 0.0;             // stop once a step's loss falls below this; 0 disables

  static TrainConfig desk();
  // The published large-scale recipe, kept for reference runs.
  static TrainConfig paper();

  std::size_t effective_batch() const { return batch_per_step * accumulation_steps; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Linear warmup to peak_lr, then cosine decay to min_lr at total_steps.
// Steps past the end return min_lr.
double lr_schedule(std::int64_t step, const TrainConfig& cfg);

struct AdamHyper {
  double lr = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0;
};

// One decoupled-weight-decay Adam update of a single buffer at (1-based) step t:
// p <- p * (1 - lr*wd), then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
template <typename Real>
void adamw_update(std::span<Real> param, std::span<const Real> grad, std::span<Real> m, std::span<Real> v,
                  std::int64_t t, const AdamHyper& hp);

template <typename Real>
struct AdamState {
  std::int64_t step = 0;  // completed updates
  std::vector<std::vector<Real>> m, v;  // aligned with the parameter list
};

// Updates every parameter from its grad buffer (missing buffers count as zero).
// A non-finite gradient aborts before any parameter changes.
template <typename Real>
void adamw_step(const ParamList<Real>& params, AdamState<Real>& state, double lr, const TrainConfig& cfg);

// Epoch-wise shuffled document order.
class DocSampler {
 public:
  DocSampler() = default;
  DocSampler(std::size_t n_docs, std::uint64_t seed);
  std::size_t next();

  std::string engine_state() const;
  void restore(const std::string& engine_state, std::vector<std::uint32_t> order, std::size_t cursor);
  const std::vector<std::uint32_t>& order() const { return order_; }
  std::size_t cursor() const { return cursor_; }

 private:
  void reshuffle();
  std::mt19937_64 engine_;
  std::vector<std::uint32_t> order_;
  std::size_t cursor_ = 0;
};

template <typename Real>
struct TrainState {
  AdamState<Real> adam;
  DocSampler sampler;
  double last_loss = 0;
  double ema_loss = 0;

  std::int64_t step() const { return adam.step; }
};

template <typename Real>
TrainState<Real> fresh_train_state(const CascadeModel<Real>& model, std::size_t n_docs, const TrainConfig& cfg);

struct StepRecord {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::string config_hash;        // copied into checkpoint headers
  std::int64_t until_step = -1;   // stop early at this step (exclusive of later steps); -1: run to total
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> curve;
  bool stopped_on_loss = false;
  std::filesystem::path checkpoint;  // last written, if any
};

// Gradient of one micro-batch: pooled mean NLL over all loss positions of its
// documents, scaled by 1/accumulation_steps. Returns the unscaled loss.
template <typename Real>
double accumulate_micro_batch(const CascadeModel<Real>& model, std::span<const TokenSequence> docs,
                              std::size_t accumulation_steps);

template <typename Real>
TrainResult train(CascadeModel<Real>& model, TrainState<Real>& state, std::span<const TokenSequence> corpus,
                  const TrainConfig& cfg, const TrainOptions& options = {});

}  // namespace c3
