#pragma once

#include <map>
#include <string>

#include "gator/tensor.hpp"

namespace gator {

// Flat binary container of named float64 arrays (weights, gate checkpoints).
// Layout, all header lines '\n'-terminated ASCII:
//   GATOR-ARRAYS 1
//   <count>
//   <name> <rank> <dim_0> ... <dim_{rank-1}> <byte_offset>   (count lines)
//   DATA
// followed by the raw little-endian IEEE-754 doubles of every array,
// concatenated in header order; byte_offset is relative to the first byte
// after "DATA\n". Arrays are written sorted by name.
using ArrayMap = std::map<std::string, Tensor>;

std::string encode_arrays(const ArrayMap& arrays);
ArrayMap decode_arrays(const std::string& bytes);

void save_arrays(const std::string& path, const ArrayMap& arrays);
ArrayMap load_arrays(const std::string& path);

}  // namespace gator
