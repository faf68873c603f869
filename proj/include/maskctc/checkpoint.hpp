#pragma once

#include <string>
#include <vector>

#include "maskctc/model.hpp"

namespace maskctc {

// Parameter container, little-endian:
//   magic "MCTC", format version u32, tensor count u32, then per tensor:
//   name (u32 length + UTF-8), rank u32, dims u32[rank], raw f32 payload.
// Tensors appear in lexicographic name order, so save -> load -> save is
// byte-identical. A JSON sidecar (same path with ".json" appended)
// carries the model config, type, feature dim and vocab.
void save_params(const ParamMap<float>& params, const std::string& path);
ParamMap<float> load_params(const std::string& path);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

// Element-wise arithmetic mean of the named tensors across checkpoints
// (accumulated in 64-bit, rounded to f32). Name or shape mismatch is a
// checkpoint-incompatible data error.
ParamMap<float> average_checkpoints(const std::vector<std::string>& paths);

// Indices of the top-n entries by score, descending; ties keep the
// earlier checkpoint.
std::vector<size_t> select_top_by_score(const std::vector<double>& scores, size_t n);

}  // namespace maskctc
