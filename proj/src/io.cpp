#include "rpg/io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "rpg/errors.hpp"

namespace rpg {
namespace {

// Sanity caps for reading untrusted headers.
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;
constexpr std::size_t kMaxElements = std::size_t{1} << 31;

}  // namespace

void BinaryWriter::bytes(const void* p, std::size_t n) {
  os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os_) throw FormatError("write failed");
}

void BinaryWriter::u32(std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 4);
}

void BinaryWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  bytes(b, 8);
}

void BinaryWriter::tensor(const NamedTensor& t) {
  if (t.name.size() > kMaxName) throw FormatError("tensor name too long");
  u32(static_cast<std::uint32_t>(t.name.size()));
  bytes(t.name.data(), t.name.size());
  u32(static_cast<std::uint32_t>(t.tensor.rank()));
  for (auto d : t.tensor.dims()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("dimension exceeds 32 bits");
    u32(static_cast<std::uint32_t>(d));
  }
  for (double v : t.tensor.values()) f64(v);
}

void BinaryReader::bytes(void* p, std::size_t n) {
  is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("truncated file");
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double BinaryReader::f64() {
  unsigned char b[8];
  bytes(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

NamedTensor BinaryReader::tensor() {
  NamedTensor t;
  const auto name_len = u32();
  if (name_len > kMaxName) throw FormatError("tensor name length " + std::to_string(name_len) + " too large");
  t.name.resize(name_len);
  bytes(t.name.data(), name_len);
  const auto rank = u32();
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " too large");
  Dims dims(rank);
  std::size_t n = 1;
  for (auto& d : dims) {
    d = u32();
    if (d != 0 && n > kMaxElements / d) throw FormatError("tensor '" + t.name + "' dims overflow");
    n *= d;
  }
  std::vector<double> data(n);
  for (auto& v : data) v = f64();
  t.tensor = Tensor(std::move(dims), std::move(data));
  return t;
}

void write_tensor_file(std::ostream& os, const std::array<char, 4>& magic, const std::vector<NamedTensor>& tensors) {
  BinaryWriter w(os);
  w.bytes(magic.data(), magic.size());
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) w.tensor(t);
}

std::vector<NamedTensor> read_tensor_file(std::istream& is, const std::array<char, 4>& magic) {
  BinaryReader r(is);
  std::array<char, 4> got{};
  r.bytes(got.data(), got.size());
  if (got != magic)
    throw FormatError("bad magic: expected '" + std::string(magic.data(), 4) + "', got '" +
                      std::string(got.data(), 4) + "'");
  const auto version = r.u32();
  if (version != kFormatVersion) throw FormatError("unsupported format version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(r.tensor());
  return out;
}

void save_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor_file(os, kWeightsMagic, tensors);
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor_file(is, kWeightsMagic);
}

const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw FormatError("missing tensor '" + name + "'");
}

void append_net(std::vector<NamedTensor>& out, const FeedforwardNet& net, const std::string& prefix) {
  std::vector<double> in(net.input_dims().begin(), net.input_dims().end());
  const std::size_t rank = in.size(), depth = net.layers().size();
  out.push_back({prefix + "input_dims", Tensor(Dims{rank}, std::move(in))});
  std::vector<double> kinds;
  std::vector<double> widths;
  for (const auto& l : net.layers()) {
    kinds.push_back(static_cast<double>(l.kind()));
    widths.push_back(static_cast<double>(dims_product(l.out_dims())));
  }
  out.push_back({prefix + "layer_kinds", Tensor(Dims{depth}, std::move(kinds))});
  out.push_back({prefix + "layer_widths", Tensor(Dims{depth}, std::move(widths))});
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& l = net.layers()[i];
    if (!l.has_params()) continue;
    out.push_back({prefix + "layer" + std::to_string(i) + ".weight", l.weight()});
    out.push_back({prefix + "layer" + std::to_string(i) + ".bias", l.bias()});
  }
}

FeedforwardNet extract_net(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  const Tensor& in = find_tensor(tensors, prefix + "input_dims");
  Dims input;
  for (double v : in.values()) input.push_back(static_cast<std::size_t>(v));
  const Tensor& kinds = find_tensor(tensors, prefix + "layer_kinds");
  const Tensor& widths = find_tensor(tensors, prefix + "layer_widths");
  if (kinds.size() != widths.size()) throw FormatError("layer kinds/widths length mismatch");
  FeedforwardNet net(input);
  try {
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      const Dims cur = net.output_dims();
      switch (static_cast<LayerKind>(static_cast<int>(kinds[i]))) {
        case LayerKind::affine: {
          Layer l = Layer::affine(cur, static_cast<std::size_t>(widths[i]));
          l.weight() = find_tensor(tensors, prefix + "layer" + std::to_string(i) + ".weight");
          l.bias() = find_tensor(tensors, prefix + "layer" + std::to_string(i) + ".bias");
          if (l.weight().dims() != Dims{static_cast<std::size_t>(widths[i]), dims_product(cur)} ||
              l.bias().dims() != Dims{static_cast<std::size_t>(widths[i])})
            throw FormatError("affine parameter shape mismatch in layer " + std::to_string(i));
          net.add(std::move(l));
          break;
        }
        case LayerKind::relu: net.add(Layer::relu(cur)); break;
        case LayerKind::tanh: net.add(Layer::tanh(cur)); break;
        case LayerKind::softmax: net.add(Layer::softmax(dims_product(cur))); break;
        case LayerKind::avg_pool: net.add(Layer::avg_pool(cur)); break;
        default: throw FormatError("unknown layer kind " + std::to_string(kinds[i]));
      }
    }
  } catch (const ShapeError& e) {
    throw FormatError(std::string("inconsistent net topology: ") + e.what());
  }
  return net;
}

}  // namespace rpg
