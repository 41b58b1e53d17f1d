#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "taformer/core/tensor.hpp"

namespace taf {

// Tensor record layout: 8-byte magic "TAFTENS1", u32 rank, rank x u32 dims,
// then the payload as little-endian IEEE-754 f64. Files may hold several
// records back to back.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const Tensor& t);
/// Reads one record starting at byte `offset`; advances `offset` past it.
Tensor read_tensor(std::istream& is, std::size_t& offset);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace taf
