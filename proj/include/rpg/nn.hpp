#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "rpg/tensor.hpp"

namespace rpg {

enum class LayerKind : std::uint8_t { affine = 0, relu = 1, tanh = 2, softmax = 3, avg_pool = 4 };

std::string_view to_string(LayerKind kind);

/// One stage of a feedforward net. Each kind hand-codes its forward and backward pass.
///
/// Affine layers flatten their input and hold weight (out x in, row-major) and bias (out).
/// Average pooling takes a (rows, cols, channels) input and averages non-overlapping
/// 2x2 windows per channel; rows and cols must be even.
class Layer {
 public:
  static Layer affine(Dims in_dims, std::size_t out);
  static Layer relu(Dims dims);
  static Layer tanh(Dims dims);
  static Layer softmax(std::size_t n);
  static Layer avg_pool(Dims in_dims);

  LayerKind kind() const noexcept { return kind_; }
  const Dims& in_dims() const noexcept { return in_dims_; }
  const Dims& out_dims() const noexcept { return out_dims_; }
  bool has_params() const noexcept { return kind_ == LayerKind::affine; }

  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& bias() const { return bias_; }

  Tensor forward(const Tensor& x) const;

  /// Backpropagates grad_out. For affine layers accumulates into grad_weight / grad_bias.
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& grad_out, Tensor* grad_weight,
                  Tensor* grad_bias) const;

 private:
  Layer(LayerKind kind, Dims in, Dims out);

  LayerKind kind_;
  Dims in_dims_;
  Dims out_dims_;
  Tensor weight_;
  Tensor bias_;
};

/// Activations recorded during a forward pass; activations[0] is the input.
struct ForwardTrace {
  std::vector<Tensor> activations;
  const Tensor& output() const { return activations.back(); }
};

struct NetGradients {
  std::vector<Tensor> params;  // same order as FeedforwardNet::parameters()
  Tensor input;
};

class FeedforwardNet {
 public:
  FeedforwardNet() = default;
  explicit FeedforwardNet(Dims input_dims) : input_dims_(std::move(input_dims)) {}

  /// Appends a layer; throws ShapeError if it does not chain onto the current output.
  FeedforwardNet& add(Layer layer);

  const Dims& input_dims() const noexcept { return input_dims_; }
  const Dims& output_dims() const;
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  bool is_classifier() const;

  Tensor forward(const Tensor& x) const;
  ForwardTrace forward_trace(const Tensor& x) const;

  /// Reverse-mode gradients of a scalar loss given dLoss/dOutput.
  NetGradients gradients(const ForwardTrace& trace, const Tensor& loss_grad) const;
  NetGradients gradients(const Tensor& x, const Tensor& loss_grad) const {
    return gradients(forward_trace(x), loss_grad);
  }

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  NetGradients zero_gradients() const;
  std::size_t parameter_count() const;

  friend bool operator==(const FeedforwardNet& a, const FeedforwardNet& b);

 private:
  void check_input(const Tensor& x) const;

  Dims input_dims_;
  std::vector<Layer> layers_;
};

struct MlpSpec {
  Dims input_dims;
  std::vector<std::size_t> hidden;  // relu after each
  std::size_t outputs = 0;
  bool softmax_head = true;
};

/// Builds flatten -> [affine -> relu]* -> affine [-> softmax], He-normal weights, zero bias.
FeedforwardNet make_mlp(const MlpSpec& spec, std::uint64_t seed);

/// Fills every parameter with N(0, stddev).
void randomize_parameters(FeedforwardNet& net, std::mt19937_64& rng, double stddev);

}  // namespace rpg
