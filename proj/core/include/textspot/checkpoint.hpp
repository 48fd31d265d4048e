#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "textspot/params.hpp"

namespace textspot::diff {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Single-file format: magic line, JSON manifest (names, shapes, dtype, step
/// count, caller metadata), then the raw little-endian buffers in manifest
/// order. Optimizer moments are appended when save_optimizer is set.
template <typename T>
void save_checkpoint(const ParameterStore<T>& store, const std::string& path,
                     int64_t step, const nlohmann::json& meta,
                     bool save_optimizer = true);

struct CheckpointInfo {
  int64_t step = 0;
  std::string dtype;
  bool has_optimizer = false;
};

/// Loads into an existing store; every manifest entry must match a parameter
/// with the same name and shape (and vice versa). Values convert between
/// f32/f64 when the stored dtype differs from T.
template <typename T>
CheckpointInfo load_checkpoint(ParameterStore<T>& store, const std::string& path);

/// Reads only the manifest (for model-config discovery before construction).
nlohmann::json peek_checkpoint_meta(const std::string& path);

}  // namespace textspot::diff
