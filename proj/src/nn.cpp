#include "rpg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "rpg/errors.hpp"

namespace rpg {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::affine: return "affine";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::softmax: return "softmax";
    case LayerKind::avg_pool: return "avg_pool";
  }
  return "unknown";
}

Layer::Layer(LayerKind kind, Dims in, Dims out) : kind_(kind), in_dims_(std::move(in)), out_dims_(std::move(out)) {}

Layer Layer::affine(Dims in_dims, std::size_t out) {
  const std::size_t in = dims_product(in_dims);
  if (in == 0 || out == 0) throw ShapeError("affine layer needs non-empty input and output");
  Layer l(LayerKind::affine, std::move(in_dims), Dims{out});
  l.weight_ = Tensor(Dims{out, in});
  l.bias_ = Tensor(Dims{out});
  return l;
}

Layer Layer::relu(Dims dims) { return Layer(LayerKind::relu, dims, dims); }
Layer Layer::tanh(Dims dims) { return Layer(LayerKind::tanh, dims, dims); }
Layer Layer::softmax(std::size_t n) { return Layer(LayerKind::softmax, Dims{n}, Dims{n}); }

Layer Layer::avg_pool(Dims in_dims) {
  if (in_dims.size() != 3 || in_dims[0] % 2 || in_dims[1] % 2 || in_dims[0] == 0 || in_dims[1] == 0)
    throw ShapeError("avg_pool expects even (rows, cols, channels), got " + dims_to_string(in_dims));
  Dims out{in_dims[0] / 2, in_dims[1] / 2, in_dims[2]};
  return Layer(LayerKind::avg_pool, std::move(in_dims), std::move(out));
}

Tensor Layer::forward(const Tensor& x) const {
  if (x.size() != dims_product(in_dims_))
    throw ShapeError(std::string(to_string(kind_)) + " forward: got " + dims_to_string(x.dims()) + ", expected " +
                     dims_to_string(in_dims_));
  Tensor y(out_dims_);
  switch (kind_) {
    case LayerKind::affine: {
      const std::size_t in = x.size();
      const double* w = weight_.values().data();
      const double* xv = x.values().data();
      for (std::size_t o = 0; o < y.size(); ++o) {
        const double* row = w + o * in;
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * xv[i];
        y[o] = acc + bias_[o];
      }
      break;
    }
    case LayerKind::relu:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case LayerKind::tanh:
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x[i]);
      break;
    case LayerKind::softmax: {
      const double m = *std::max_element(x.values().begin(), x.values().end());
      double z = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) z += (y[i] = std::exp(x[i] - m));
      for (auto& v : y.values()) v /= z;
      break;
    }
    case LayerKind::avg_pool: {
      const std::size_t cols = in_dims_[1], ch = in_dims_[2];
      for (std::size_t r = 0; r < out_dims_[0]; ++r)
        for (std::size_t c = 0; c < out_dims_[1]; ++c)
          for (std::size_t k = 0; k < ch; ++k) {
            auto in_at = [&](std::size_t rr, std::size_t cc) { return x[(rr * cols + cc) * ch + k]; };
            y[(r * out_dims_[1] + c) * ch + k] =
                0.25 * (in_at(2 * r, 2 * c) + in_at(2 * r, 2 * c + 1) + in_at(2 * r + 1, 2 * c) +
                        in_at(2 * r + 1, 2 * c + 1));
          }
      break;
    }
  }
  return y;
}

Tensor Layer::backward(const Tensor& x, const Tensor& y, const Tensor& grad_out, Tensor* grad_weight,
                       Tensor* grad_bias) const {
  if (grad_out.size() != y.size()) throw ShapeError("backward: gradient does not match layer output");
  Tensor gx(in_dims_);
  switch (kind_) {
    case LayerKind::affine: {
      const std::size_t in = x.size();
      const double* w = weight_.values().data();
      const double* xv = x.values().data();
      double* gxv = gx.values().data();
      double* gw = grad_weight ? grad_weight->values().data() : nullptr;
      for (std::size_t o = 0; o < grad_out.size(); ++o) {
        const double g = grad_out[o];
        if (grad_bias) (*grad_bias)[o] += g;
        if (g == 0.0) continue;
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) gxv[i] += g * row[i];
        if (gw) {
          double* grow = gw + o * in;
          for (std::size_t i = 0; i < in; ++i) grow[i] += g * xv[i];
        }
      }
      break;
    }
    case LayerKind::relu:
      // subgradient 0 at exactly 0
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
      break;
    case LayerKind::tanh:
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = grad_out[i] * (1.0 - y[i] * y[i]);
      break;
    case LayerKind::softmax: {
      double pg = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) pg += y[i] * grad_out[i];
      for (std::size_t i = 0; i < y.size(); ++i) gx[i] = y[i] * (grad_out[i] - pg);
      break;
    }
    case LayerKind::avg_pool: {
      const std::size_t cols = in_dims_[1], ch = in_dims_[2];
      for (std::size_t r = 0; r < out_dims_[0]; ++r)
        for (std::size_t c = 0; c < out_dims_[1]; ++c)
          for (std::size_t k = 0; k < ch; ++k) {
            const double g = 0.25 * grad_out[(r * out_dims_[1] + c) * ch + k];
            gx[((2 * r) * cols + 2 * c) * ch + k] += g;
            gx[((2 * r) * cols + 2 * c + 1) * ch + k] += g;
            gx[((2 * r + 1) * cols + 2 * c) * ch + k] += g;
            gx[((2 * r + 1) * cols + 2 * c + 1) * ch + k] += g;
          }
      break;
    }
  }
  return gx;
}

FeedforwardNet& FeedforwardNet::add(Layer layer) {
  const Dims& current = output_dims();
  if (dims_product(current) != dims_product(layer.in_dims()))
    throw ShapeError("layer " + std::string(to_string(layer.kind())) + " expects " +
                     dims_to_string(layer.in_dims()) + " but net produces " + dims_to_string(current));
  if (layer.kind() != LayerKind::affine && layer.kind() != LayerKind::softmax && current != layer.in_dims())
    throw ShapeError("elementwise layer dims must match exactly");
  if (is_classifier()) throw ShapeError("softmax must be the final layer");
  layers_.push_back(std::move(layer));
  return *this;
}

const Dims& FeedforwardNet::output_dims() const {
  return layers_.empty() ? input_dims_ : layers_.back().out_dims();
}

bool FeedforwardNet::is_classifier() const {
  return !layers_.empty() && layers_.back().kind() == LayerKind::softmax;
}

void FeedforwardNet::check_input(const Tensor& x) const {
  if (x.dims() != input_dims_)
    throw ShapeError("net input: got " + dims_to_string(x.dims()) + ", expected " + dims_to_string(input_dims_));
}

Tensor FeedforwardNet::forward(const Tensor& x) const {
  check_input(x);
  Tensor a = x;
  for (const auto& layer : layers_) a = layer.forward(a);
  if (!a.all_finite()) throw NumericError("non-finite network output");
  return a;
}

ForwardTrace FeedforwardNet::forward_trace(const Tensor& x) const {
  check_input(x);
  ForwardTrace t;
  t.activations.reserve(layers_.size() + 1);
  t.activations.push_back(x);
  for (const auto& layer : layers_) t.activations.push_back(layer.forward(t.activations.back()));
  if (!t.output().all_finite()) throw NumericError("non-finite network output");
  return t;
}

NetGradients FeedforwardNet::zero_gradients() const {
  NetGradients g;
  for (const auto* p : parameters()) g.params.emplace_back(p->dims());
  g.input = Tensor(input_dims_);
  return g;
}

NetGradients FeedforwardNet::gradients(const ForwardTrace& trace, const Tensor& loss_grad) const {
  if (trace.activations.size() != layers_.size() + 1) throw ShapeError("trace does not belong to this net");
  if (loss_grad.size() != dims_product(output_dims()))
    throw ShapeError("loss gradient has " + std::to_string(loss_grad.size()) + " entries, net outputs " +
                     dims_to_string(output_dims()));
  NetGradients g = zero_gradients();
  Tensor grad = loss_grad.reshaped(output_dims());
  std::size_t p = g.params.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const Layer& layer = layers_[li];
    Tensor* gw = nullptr;
    Tensor* gb = nullptr;
    if (layer.has_params()) {
      p -= 2;
      gw = &g.params[p];
      gb = &g.params[p + 1];
    }
    grad = layer.backward(trace.activations[li], trace.activations[li + 1], grad, gw, gb);
  }
  g.input = grad.reshaped(input_dims_);
  return g;
}

std::vector<Tensor*> FeedforwardNet::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_)
    if (l.has_params()) {
      out.push_back(&l.weight());
      out.push_back(&l.bias());
    }
  return out;
}

std::vector<const Tensor*> FeedforwardNet::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_)
    if (l.has_params()) {
      out.push_back(&l.weight());
      out.push_back(&l.bias());
    }
  return out;
}

std::size_t FeedforwardNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

bool operator==(const FeedforwardNet& a, const FeedforwardNet& b) {
  if (a.input_dims_ != b.input_dims_ || a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const Layer& x = a.layers_[i];
    const Layer& y = b.layers_[i];
    if (x.kind() != y.kind() || x.in_dims() != y.in_dims() || x.out_dims() != y.out_dims()) return false;
    if (x.has_params() && (x.weight() != y.weight() || x.bias() != y.bias())) return false;
  }
  return true;
}

FeedforwardNet make_mlp(const MlpSpec& spec, std::uint64_t seed) {
  FeedforwardNet net(spec.input_dims);
  std::mt19937_64 rng(seed);
  Dims current = spec.input_dims;
  auto add_affine = [&](std::size_t out) {
    Layer l = Layer::affine(current, out);
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(dims_product(current))));
    for (auto& w : l.weight().values()) w = nd(rng);
    net.add(std::move(l));
    current = Dims{out};
  };
  for (std::size_t h : spec.hidden) {
    add_affine(h);
    net.add(Layer::relu(current));
  }
  add_affine(spec.outputs);
  if (spec.softmax_head) net.add(Layer::softmax(spec.outputs));
  return net;
}

void randomize_parameters(FeedforwardNet& net, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto* p : net.parameters())
    for (auto& v : p->values()) v = nd(rng);
}

}  // namespace rpg
