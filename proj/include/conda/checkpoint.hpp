#pragma once

#include <map>
#include <string>

#include "conda/tensor.hpp"

namespace conda {

// Binary checkpoint: magic "CNDA", version u16, tensor count u32, then per
// tensor a length-prefixed name, rank u8, u64 dims, and float32 payload. All
// integers and floats are little-endian. Values are stored at float32
// precision regardless of the in-memory type.
void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace conda
