#pragma once

// Binary checkpoint:
//   "C3CK" | u32 version | u64 header length | UTF-8 JSON header
//   then per tensor: u32 name length | name | u8 dtype (0 f32, 1 f64) | u8 ndim | ndim x u64 dims | data
// All integers and scalars little-endian, tensor data row-major. The header
// carries both transformer configs, N, the train config, vocabulary ids,
// optimizer/sampler counters and the expected tensor count.

#include <cstdint>
#include <filesystem>
#include <string>

#include "cascade.hpp"
#include "config_io.hpp"
#include "training.hpp"

namespace c3 {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
struct Checkpoint {
  CascadeModel<Real> model;
  TrainConfig train;
  TrainState<Real> state;
  std::string config_hash;
  Json header;
};

// Written to a temporary sibling and renamed into place.
template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const CascadeModel<Real>& model, const TrainConfig& train,
                     const TrainState<Real>& state, const std::string& config_hash);

// kIo if unreadable, kFormat for bad magic/version/header/dtype,
// kShapeMismatch when tensors disagree with the header config, kTruncated
// when the file ends early.
template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path);

}  // namespace c3
