#pragma once

#include <string>
#include <vector>

#include "adaptlab/autodiff.hpp"

namespace adaptlab {

// Binary tensor container, little-endian: magic "ADLB", u32 format version,
// then one record per tensor: u32 name length, UTF-8 name, u32 rank,
// u32 dims[rank], row-major f64 payload. Records run to end of file.
// Round-trips are bit-exact.
constexpr std::uint32_t kCheckpointVersion = 1;

void save_tensors(const std::string& path,
                  const std::vector<const ParamTensor*>& tensors);

std::vector<ParamTensor> load_tensors(const std::string& path);

}  // namespace adaptlab
