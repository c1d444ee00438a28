#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rpg/nn.hpp"
#include "rpg/tensor.hpp"

namespace rpg {

// Weights file ("RPGW"):
//   magic[4] | u32 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f64 data[prod(dims)]
// All integers and floats little-endian.
inline constexpr std::array<char, 4> kWeightsMagic{'R', 'P', 'G', 'W'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  void bytes(const void* p, std::size_t n);
  void u32(std::uint32_t v);
  void f64(double v);
  void tensor(const NamedTensor& t);

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}
  void bytes(void* p, std::size_t n);
  std::uint32_t u32();
  double f64();
  NamedTensor tensor();

 private:
  std::istream& is_;
};

/// Writes magic, version and the tensor block.
void write_tensor_file(std::ostream& os, const std::array<char, 4>& magic, const std::vector<NamedTensor>& tensors);
/// Reads magic/version/tensor block; throws FormatError on any mismatch or truncation.
std::vector<NamedTensor> read_tensor_file(std::istream& is, const std::array<char, 4>& magic);

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

/// Net topology plus parameters, all tensor names prefixed with `prefix`.
void append_net(std::vector<NamedTensor>& out, const FeedforwardNet& net, const std::string& prefix);
FeedforwardNet extract_net(const std::vector<NamedTensor>& tensors, const std::string& prefix);

}  // namespace rpg
