#include "layoutret/mlp.hpp"

#include <cmath>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

real activate(Activation a, real x) {
  switch (a) {
    case Activation::Identity:
      return x;
    case Activation::Relu:
      return x > 0 ? x : real(0);
    case Activation::Silu:
      return x / (real(1) + std::exp(-x));
  }
  return x;
}

real activate_grad(Activation a, real x) {
  switch (a) {
    case Activation::Identity:
      return 1;
    case Activation::Relu:
      return x > 0 ? real(1) : real(0);
    case Activation::Silu: {
      const real s = real(1) / (real(1) + std::exp(-x));
      return s * (real(1) + x * (real(1) - s));
    }
  }
  return 1;
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    require_dim(layers_[i].out_dim(), layers_[i + 1].in_dim(), "Mlp layer chain");
  }
  for (const auto& l : layers_) require_dim(l.out_dim(), l.bias.cols(), "Mlp bias");
}

Mlp Mlp::make(std::initializer_list<std::size_t> widths, Activation hidden, Rng& rng,
              Activation output, real output_gain) {
  return make(std::span<const std::size_t>(widths.begin(), widths.size()), hidden, rng, output,
              output_gain);
}

Mlp Mlp::make(std::span<const std::size_t> widths, Activation hidden, Rng& rng, Activation output,
              real output_gain) {
  if (widths.size() < 2) throw ShapeError("Mlp::make needs at least input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    const bool last = i + 2 == widths.size();
    DenseLayer layer{DenseMatrix(out, in), DenseMatrix(1, out), last ? output : hidden};
    const double limit =
        std::sqrt(6.0 / static_cast<double>(in + out)) * (last ? double(output_gain) : 1.0);
    for (real& w : layer.weight.data()) w = static_cast<real>((2.0 * rng.uniform() - 1.0) * limit);
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

Vector Mlp::forward(std::span<const real> input) const {
  require_dim(in_dim(), input.size(), "mlp_forward input");
  Vector x(input.begin(), input.end());
  for (const auto& layer : layers_) {
    Vector y(layer.out_dim());
    for (std::size_t o = 0; o < y.size(); ++o) {
      y[o] = activate(layer.activation, dot(layer.weight.row(o), x) + layer.bias(0, o));
    }
    x = std::move(y);
  }
  return x;
}

Vector Mlp::forward(std::span<const real> input, MlpTape& tape) const {
  require_dim(in_dim(), input.size(), "mlp_forward input");
  tape.inputs.assign(layers_.size(), {});
  tape.pre.assign(layers_.size(), {});
  Vector x(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Vector pre(layer.out_dim());
    for (std::size_t o = 0; o < pre.size(); ++o) {
      pre[o] = dot(layer.weight.row(o), x) + layer.bias(0, o);
    }
    Vector y(pre.size());
    for (std::size_t o = 0; o < pre.size(); ++o) y[o] = activate(layer.activation, pre[o]);
    tape.inputs[l] = std::move(x);
    tape.pre[l] = std::move(pre);
    x = std::move(y);
  }
  return x;
}

Vector Mlp::backward(const MlpTape& tape, std::span<const real> output_grad, Mlp& grads) const {
  require_dim(out_dim(), output_grad.size(), "mlp_backward output gradient");
  require_dim(layers_.size(), tape.inputs.size(), "mlp_backward tape depth");
  require_dim(layers_.size(), grads.layers_.size(), "mlp_backward gradient depth");
  Vector g(output_grad.begin(), output_grad.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    auto& glayer = grads.layers_[l];
    const Vector& x = tape.inputs[l];
    const Vector& pre = tape.pre[l];
    for (std::size_t o = 0; o < g.size(); ++o) g[o] *= activate_grad(layer.activation, pre[o]);
    Vector gin(layer.in_dim(), real(0));
    for (std::size_t o = 0; o < g.size(); ++o) {
      const real go = g[o];
      if (go == real(0)) continue;
      glayer.bias(0, o) += go;
      axpy(go, x, glayer.weight.row(o));
      axpy(go, layer.weight.row(o), gin);
    }
    g = std::move(gin);
  }
  return g;
}

Mlp::Gradients Mlp::backward(std::span<const real> input, std::span<const real> output_grad) const {
  MlpTape tape;
  forward(input, tape);
  Gradients out{zeros_like(), {}};
  out.input = backward(tape, output_grad, out.params);
  return out;
}

Mlp Mlp::zeros_like() const {
  Mlp z;
  z.layers_.reserve(layers_.size());
  for (const auto& l : layers_) {
    z.layers_.push_back({l.weight.zeros_like(), l.bias.zeros_like(), l.activation});
  }
  return z;
}

void Mlp::collect(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".weight", &layers_[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", &layers_[i].bias});
  }
}

bool operator==(const Mlp& a, const Mlp& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.activation != y.activation || !(x.weight == y.weight) || !(x.bias == y.bias)) return false;
  }
  return true;
}

}  // namespace layoutret::inline LAYOUTRET_ABI
