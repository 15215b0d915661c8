#include "config_io.hpp"

#include <cstdio>

namespace c3 {

namespace {

template <typename T>
void read(const Json& j, const char* key, T* out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    *out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kInvalidArgument, std::string(where) + "." + key + ": wrong type");
  }
}

void require_object(const Json& j, std::string_view where) {
  if (!j.is_object()) fail(ErrorKind::kInvalidArgument, std::string(where) + " must be a JSON object");
}

}  // namespace

void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorKind::kInvalidArgument, "unknown key \"" + key + "\" in " + std::string(where));
  }
}

Json to_json(const TransformerConfig& c) {
  return Json{{"n_layers", c.n_layers}, {"d_model", c.d_model},         {"n_heads", c.n_heads},
              {"d_mlp", c.d_mlp},       {"vocab", c.vocab},             {"max_seq_len", c.max_seq_len},
              {"rope_base", c.rope_base}, {"eps", c.eps},               {"lm_head", c.lm_head}};
}

void from_json(const Json& j, TransformerConfig* c, std::string_view where) {
  require_object(j, where);
  reject_unknown_keys(j, {"n_layers", "d_model", "n_heads", "d_mlp", "vocab", "max_seq_len", "rope_base", "eps", "lm_head"},
                      where);
  read(j, "n_layers", &c->n_layers, where);
  read(j, "d_model", &c->d_model, where);
  read(j, "n_heads", &c->n_heads, where);
  read(j, "d_mlp", &c->d_mlp, where);
  read(j, "vocab", &c->vocab, where);
  read(j, "max_seq_len", &c->max_seq_len, where);
  read(j, "rope_base", &c->rope_base, where);
  read(j, "eps", &c->eps, where);
  read(j, "lm_head", &c->lm_head, where);
}

Json to_json(const CascadeConfig& c) {
  return Json{{"encoder", to_json(c.encoder)}, {"decoder", to_json(c.decoder)}, {"n_latent", c.n_latent}};
}

void from_json(const Json& j, CascadeConfig* c, std::string_view where) {
  require_object(j, where);
  reject_unknown_keys(j, {"encoder", "decoder", "n_latent"}, where);
  c->encoder.lm_head = false;
  c->decoder.lm_head = true;
  if (j.contains("encoder")) from_json(j["encoder"], &c->encoder, std::string(where) + ".encoder");
  if (j.contains("decoder")) from_json(j["decoder"], &c->decoder, std::string(where) + ".decoder");
  read(j, "n_latent", &c->n_latent, where);
}

Json to_json(const TrainConfig& c) {
  return Json{{"peak_lr", c.peak_lr},
              {"warmup_steps", c.warmup_steps},
              {"total_steps", c.total_steps},
              {"min_lr", c.min_lr},
              {"batch_per_step", c.batch_per_step},
              {"accumulation_steps", c.accumulation_steps},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every},
              {"stop_loss", c.stop_loss}};
}

void from_json(const Json& j, TrainConfig* c, std::string_view where) {
  require_object(j, where);
  reject_unknown_keys(j,
                      {"preset", "peak_lr", "warmup_steps", "total_steps", "min_lr", "batch_per_step",
                       "accumulation_steps", "beta1", "beta2", "adam_eps", "weight_decay", "seed", "checkpoint_every",
                       "stop_loss"},
                      where);
  if (j.contains("preset")) {
    const auto preset = j["preset"].is_string() ? j["preset"].get<std::string>() : std::string();
    if (preset == "desk") {
      *c = TrainConfig::desk();
    } else if (preset == "paper") {
      *c = TrainConfig::paper();
    } else {
      fail(ErrorKind::kInvalidArgument, std::string(where) + ".preset must be \"desk\" or \"paper\"");
    }
  }
  read(j, "peak_lr", &c->peak_lr, where);
  read(j, "warmup_steps", &c->warmup_steps, where);
  read(j, "total_steps", &c->total_steps, where);
  read(j, "min_lr", &c->min_lr, where);
  read(j, "batch_per_step", &c->batch_per_step, where);
  read(j, "accumulation_steps", &c->accumulation_steps, where);
  read(j, "beta1", &c->beta1, where);
  read(j, "beta2", &c->beta2, where);
  read(j, "adam_eps", &c->adam_eps, where);
  read(j, "weight_decay", &c->weight_decay, where);
  read(j, "seed", &c->seed, where);
  read(j, "checkpoint_every", &c->checkpoint_every, where);
  read(j, "stop_loss", &c->stop_loss, where);
}

std::string json_hash(const Json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace c3
