#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "layoutret/params.hpp"
#include "layoutret/rng.hpp"
#include "layoutret/tensor.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

enum class Activation { Identity, Relu, Silu };

struct DenseLayer {
  DenseMatrix weight;  // out x in
  DenseMatrix bias;    // 1 x out
  Activation activation = Activation::Identity;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// Intermediate values of one forward pass, needed by backward().
struct MlpTape {
  std::vector<Vector> inputs;  // input to each layer
  std::vector<Vector> pre;     // pre-activation of each layer
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// Layer widths {in, h1, ..., out}; hidden layers use `hidden`, the last
  /// layer `output`. Weights are Glorot-uniform scaled by `output_gain` on the
  /// last layer; biases start at zero.
  static Mlp make(std::initializer_list<std::size_t> widths, Activation hidden, Rng& rng,
                  Activation output = Activation::Identity, real output_gain = 1);
  static Mlp make(std::span<const std::size_t> widths, Activation hidden, Rng& rng,
                  Activation output = Activation::Identity, real output_gain = 1);

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  Vector forward(std::span<const real> input) const;
  Vector forward(std::span<const real> input, MlpTape& tape) const;

  /// Accumulates parameter gradients into `grads` (same architecture) and
  /// returns the gradient with respect to the input.
  Vector backward(const MlpTape& tape, std::span<const real> output_grad, Mlp& grads) const;

  struct Gradients;
  /// Convenience form: recomputes the forward pass and returns fresh gradients.
  Gradients backward(std::span<const real> input, std::span<const real> output_grad) const;

  Mlp zeros_like() const;
  void collect(const std::string& prefix, ParamList& out);

  friend bool operator==(const Mlp&, const Mlp&);

 private:
  std::vector<DenseLayer> layers_;
};

struct Mlp::Gradients {
  Mlp params;
  Vector input;
};

real activate(Activation a, real x);
real activate_grad(Activation a, real x);

}  // namespace layoutret::inline LAYOUTRET_ABI
