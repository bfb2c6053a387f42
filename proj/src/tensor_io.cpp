#include "dlfs/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dlfs/errors.hpp"

namespace dlfs {

namespace {

constexpr char kMagic[4] = {'D', 'T', 'E', 'N'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 1;

void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<uint64_t>(d)); }

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw TruncatedFile("u32");
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw TruncatedFile("u64");
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 255) throw ShapeMismatch("tensor rank out of range for DTEN");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  os.put(static_cast<char>(kDtypeF64));
  os.put(static_cast<char>(t.rank()));
  for (int64_t d : t.shape()) put_u64(os, static_cast<uint64_t>(d));
  for (int64_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4)) throw TruncatedFile("magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw BadMagic("not a DTEN file");
  const uint32_t version = get_u32(is);
  if (version != kVersion) throw BadMagic("unsupported DTEN version " + std::to_string(version));
  const int dtype = is.get();
  if (dtype == EOF) throw TruncatedFile("dtype");
  if (dtype != kDtypeF64) throw DtypeUnsupported("dtype code " + std::to_string(dtype));
  const int rank = is.get();
  if (rank == EOF) throw TruncatedFile("rank");
  if (rank == 0) throw ShapeMismatch("rank 0 tensor");
  std::vector<int64_t> shape(static_cast<size_t>(rank));
  int64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const uint64_t d = get_u64(is);
    if (d == 0 || d > (1ull << 32)) throw ShapeMismatch("bad dimension in DTEN header");
    shape[static_cast<size_t>(i)] = static_cast<int64_t>(d);
    count *= shape[static_cast<size_t>(i)];
  }
  std::vector<double> data(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) data[static_cast<size_t>(i)] = get_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

int64_t tensor_record_size(const Tensor& t) {
  return 4 + 4 + 1 + 1 + 8 * t.rank() + 8 * t.size();
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  write_tensor(os, t);
  if (!os) throw IoError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFile(path);
  return read_tensor(is);
}

}  // namespace dlfs
