#pragma once

#include <string>

#include "mergeprobe/checkpoint.hpp"

namespace mergeprobe {

// Checkpoint container, a safetensors-compatible subset:
//
//   [8-byte little-endian u64: header length N]
//   [N bytes UTF-8 JSON: tensor name -> {dtype, shape, data_offsets},
//    plus optional "__metadata__": {string: string}]
//   [payload: concatenated little-endian tensor data]
//
// data_offsets are [begin, end) byte offsets relative to the payload start.
// Accepted dtypes are "F32" and "F16"; f16 values are upcast to f32 exactly
// at load. Non-finite weights are a load error, not a warning.

/// Load a checkpoint. Errors: MalformedContainer (bad length field, bad JSON,
/// offset/shape contradictions, unsupported dtype), DuplicateTensorName,
/// NonFiniteWeights (offending tensor names listed), IoFailure.
Checkpoint load_checkpoint(const std::string& path);

/// Save as F32. Written bytes are a pure function of checkpoint content:
/// header keys in lexicographic order, fixed JSON formatting, little-endian
/// payload. load(save(c)) == c exactly.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);

/// Serialized container bytes (what save_checkpoint writes).
std::string checkpoint_bytes(const Checkpoint& checkpoint);

/// Exact f16 -> f32 upcast (handles subnormals, inf, nan).
float f16_to_f32(std::uint16_t bits);

}  // namespace mergeprobe
