#include "adaptlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adaptlab {

namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xFF), char((v >> 8) & 0xFF), char((v >> 16) & 0xFF),
               char((v >> 24) & 0xFF)};
  os.write(b, 4);
}

void put_f64(std::ofstream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

bool get_u32(std::ifstream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
      std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  return true;
}

bool get_f64(std::ifstream& is, double& d) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  std::memcpy(&d, &v, 8);
  return true;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<const ParamTensor*>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write("ADLB", 4);
  put_u32(os, kCheckpointVersion);
  for (const ParamTensor* t : tensors) {
    put_u32(os, std::uint32_t(t->name.size()));
    os.write(t->name.data(), std::streamsize(t->name.size()));
    put_u32(os, std::uint32_t(t->shape.size()));
    for (int d : t->shape) put_u32(os, std::uint32_t(d));
    // row-major payload; storage shape is (1, n) for rank-1 tensors
    for (int r = 0; r < t->values.rows(); ++r)
      for (int c = 0; c < t->values.cols(); ++c) put_f64(os, t->values(r, c));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<ParamTensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "ADLB", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint32_t version;
  if (!get_u32(is, version) || version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  std::vector<ParamTensor> out;
  std::uint32_t name_len;
  while (get_u32(is, name_len)) {
    ParamTensor t;
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated name in " + path);
    std::uint32_t rank;
    if (!get_u32(is, rank) || rank < 1 || rank > 2)
      throw std::runtime_error("checkpoint: unsupported rank for '" + t.name +
                               "' in " + path);
    std::uint32_t dims[2] = {0, 0};
    for (std::uint32_t i = 0; i < rank; ++i)
      if (!get_u32(is, dims[i]))
        throw std::runtime_error("checkpoint: truncated dims in " + path);
    int rows = rank == 1 ? 1 : int(dims[0]);
    int cols = rank == 1 ? int(dims[0]) : int(dims[1]);
    t.shape.assign(dims, dims + rank);
    t.values.resize(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (!get_f64(is, t.values(r, c)))
          throw std::runtime_error("checkpoint: truncated payload for '" +
                                   t.name + "' in " + path);
    t.grad = MatrixXd::Zero(rows, cols);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace adaptlab
