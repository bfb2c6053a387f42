#pragma once

#include <iosfwd>
#include <string>

#include "dlfs/tensor.hpp"

namespace dlfs {

// DTEN tensor file, bit-exact:
//   "DTEN" | version u32 LE = 1 | dtype u8 (1 = f64) | rank u8 |
//   dims: rank x u64 LE | payload: product(dims) x f64 LE
// No padding, no checksum. load(save(t)) reproduces t byte for byte.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Stream forms used by the checkpoint container.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
int64_t tensor_record_size(const Tensor& t);

}  // namespace dlfs
