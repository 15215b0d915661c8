#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "cascade.hpp"
#include "tensor.hpp"

namespace c3::testing {

using T64 = Tensor<double>;

inline T64 random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> data(shape_numel(shape));
  for (auto& x : data) x = dist(rng);
  return T64::from(std::move(shape), std::move(data), requires_grad);
}

// sum(t * w): a scalar with a non-trivial gradient for every element of t.
inline T64 weighted_sum(const T64& t, const T64& w) { return sum(mul(t, w)); }

struct GradCheck {
  double max_rel = 0;  // worst single element
  double max_abs = 0;
  std::string worst;
  double max_tensor_rel = 0;  // worst ||a - n|| / max(||a||, ||n||) over input tensors
  std::string worst_tensor;
  std::size_t elements = 0;
  std::vector<double> element_rel;  // in input order
};

// |a - n| / max(|a|, |n|, floor), where floor keeps near-zero gradients from
// turning round-off into unbounded relative error.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences over every element of every input. loss() must rebuild
// the graph from the current input data each call.
inline GradCheck check_gradients(const std::vector<std::pair<std::string, T64>>& inputs,
                                 const std::function<T64()>& loss, double step = 1e-3, double floor = 1e-6) {
  for (const auto& [name, t0] : inputs) T64(t0).zero_grad();
  {
    GradTape<double> tape;
    tape.backward(loss());
  }
  GradCheck out;
  NoGradScope<double> no_grad;
  for (const auto& [name, t0] : inputs) {
    T64 t = t0;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + step;
      const double up = loss().item();
      t.data()[i] = saved - step;
      const double down = loss().item();
      t.data()[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double rel = relative_error(analytic[i], numeric, floor);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++out.elements;
      out.element_rel.push_back(rel);
      out.max_abs = std::max(out.max_abs, std::abs(analytic[i] - numeric));
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) + " numeric " +
                    std::to_string(numeric);
      }
    }
    const double tensor_rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    if (tensor_rel > out.max_tensor_rel) {
      out.max_tensor_rel = tensor_rel;
      out.worst_tensor = name;
    }
  }
  return out;
}

// Redraws every non-norm parameter on the unit activation scale: matrices with
// std 1/sqrt(rows), vectors and embeddings with std 1.
template <typename Params>
void rescale_for_finite_differences(const Params& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto p : params) {
    if (p.name.find("norm") != std::string::npos) continue;
    const auto& shape = p.tensor.shape();
    const bool matrix = shape.size() == 2 && p.name.find("embedding") == std::string::npos && p.name != "query";
    const double sd = matrix ? 1.0 / std::sqrt(double(shape[0])) : 1.0;
    for (auto& v : p.tensor.data()) v = sd * dist(rng);
  }
}

inline TransformerConfig small_transformer(std::size_t layers, std::size_t d, std::size_t heads, bool head,
                                           std::size_t max_len = 96) {
  TransformerConfig c;
  c.n_layers = layers;
  c.d_model = d;
  c.n_heads = heads;
  c.d_mlp = 2 * d;
  c.max_seq_len = max_len;
  c.lm_head = head;
  return c;
}

inline CascadeConfig small_cascade(std::size_t n_latent = 4, std::size_t max_text = 64) {
  CascadeConfig c;
  c.n_latent = n_latent;
  c.encoder = small_transformer(2, 16, 2, false, max_text + n_latent);
  c.decoder = small_transformer(2, 24, 2, true, n_latent + 19 + max_text + 1);
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("c3_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<std::uint8_t> file_bytes(const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  if (FILE* f = std::fopen(path.c_str(), "rb")) {
    int c;
    while ((c = std::fgetc(f)) != EOF) out.push_back(std::uint8_t(c));
    std::fclose(f);
  }
  return out;
}

}  // namespace c3::testing
