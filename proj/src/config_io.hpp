#pragma once

// JSON mapping for configuration records. Readers reject unknown keys.

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cascade.hpp"
#include "training.hpp"

namespace c3 {

using Json = nlohmann::ordered_json;

Json to_json(const TransformerConfig& cfg);
Json to_json(const CascadeConfig& cfg);
Json to_json(const TrainConfig& cfg);

// Missing keys keep the defaults already in *out.
void from_json(const Json& j, TransformerConfig* out, std::string_view where);
void from_json(const Json& j, CascadeConfig* out, std::string_view where);
void from_json(const Json& j, TrainConfig* out, std::string_view where);

// Throws kInvalidArgument naming the first key of j not in allowed.
void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view where);

// FNV-1a 64 over the compact dump, as 16 hex digits.
std::string json_hash(const Json& j);

}  // namespace c3
