#pragma once

#include <map>
#include <string>

#include "dadet/nn.hpp"
#include "dadet/tensor.hpp"

namespace dadet {

// Checkpoint file layout (little-endian throughout):
//   magic   8 bytes  "DDCKPT01"
//   count   u32      number of entries
//   entry*  count times, sorted by name:
//     name_len u32, name bytes (no terminator)
//     ndim     u32, dims u32[ndim]
//     data     f32[prod(dims)]

void save_checkpoint(const ParamMap& params, const std::string& path);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// Copies loaded tensors into the model's parameters; throws CheckpointError
/// listing missing / unexpected / shape-mismatched names.
void restore_into(const ParamMap& params,
                  const std::map<std::string, Tensor>& loaded);

}  // namespace dadet
