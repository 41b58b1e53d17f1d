#include "taformer/core/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace taf {
namespace {

constexpr std::array<char, 8> kMagic = {'T', 'A', 'F', 'T', 'E', 'N', 'S', '1'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void read_exact(std::istream& is, unsigned char* dst, std::size_t n, std::size_t offset, const char* what) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw FormatError(std::string("truncated tensor record: expected ") + what + " at byte offset " +
                      std::to_string(offset));
  }
}

std::uint32_t get_u32(std::istream& is, std::size_t& offset, const char* what) {
  unsigned char b[4];
  read_exact(is, b, 4, offset, what);
  offset += 4;
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_f64(os, v);
}

Tensor read_tensor(std::istream& is, std::size_t& offset) {
  std::array<unsigned char, 8> magic{};
  read_exact(is, magic.data(), magic.size(), offset, "magic");
  if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("bad tensor magic at byte offset " + std::to_string(offset));
  }
  offset += magic.size();
  const std::size_t rank_offset = offset;
  const std::uint32_t rank = get_u32(is, offset, "rank");
  if (rank > kMaxRank) {
    throw FormatError("implausible tensor rank " + std::to_string(rank) + " at byte offset " + std::to_string(rank_offset));
  }
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(is, offset, "dimension");
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  std::vector<unsigned char> buf(n * 8);
  read_exact(is, buf.data(), buf.size(), offset, "payload");
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(buf[i * 8 + k]) << (8 * k);
    data[i] = std::bit_cast<double>(v);
  }
  offset += buf.size();
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { save_tensors(path, {t}); }

Tensor load_tensor(const std::filesystem::path& path) {
  auto all = load_tensors(path);
  if (all.size() != 1) {
    throw FormatError(path.string() + ": expected one tensor record, found " + std::to_string(all.size()));
  }
  return all.front();
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(os, t);
  if (!os) throw FormatError("write failed for " + path.string());
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<Tensor> out;
  std::size_t offset = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    try {
      out.push_back(read_tensor(is, offset));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw FormatError(path.string() + ": empty tensor file (no record at byte offset 0)");
  return out;
}

}  // namespace taf
