#pragma once

#include <map>
#include <string>

#include "calvin/tensor.hpp"

namespace calvin {

// Binary parameter file. Layout: the magic string "CALVIN1", a uint64 entry
// count, then per entry {uint64 name length, UTF-8 name bytes, uint64 rank,
// rank × uint64 extents, raw float32 data}. All integers and floats are
// little-endian. Entries are written in name order so identical contents
// always produce identical bytes.
void checkpoint_save(const std::string& path, const std::map<std::string, Tensor>& params);

std::map<std::string, Tensor> checkpoint_load(const std::string& path);

}  // namespace calvin
