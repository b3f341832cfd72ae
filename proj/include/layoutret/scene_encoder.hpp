#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "layoutret/mlp.hpp"
#include "layoutret/scene_graph.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

struct SceneEncoderConfig {
  std::size_t sem_dim = 48;      // d_sem of the input node features
  std::size_t hidden_dim = 64;   // d
  std::size_t relation_dim = 8;  // learned part of the edge embedding
  std::size_t layers = 3;        // L
  std::size_t mlp_width = 64;

  /// e: relation row plus a one-hot of the edge kind.
  std::size_t edge_dim() const { return relation_dim + 2; }
  /// 2d + 1 + e
  std::size_t message_input_dim() const { return 2 * hidden_dim + 1 + edge_dim(); }
};

/// One equivariant message-passing layer. `message` maps
/// [d_ij, h_i, h_j, e_ij] to a feature update; `coord` maps
/// [d_ij, h_i', h_j', e_ij] to a scalar gate on (x_i - x_j).
struct EquivariantLayer {
  Mlp message;
  Mlp coord;
};

/// Per-edge values recorded during a layer pass.
struct EdgeRecord {
  std::size_t dst = 0;  // i: the receiving node
  std::size_t src = 0;  // j
  Vec3 diff{};          // x_i - x_j
  real dist = 0;        // squared distance
  Vector message_input;
  Vector coord_input;
  MlpTape message_tape;
  MlpTape coord_tape;
  real gate = 0;        // tanh(coord output)
};

struct LayerTape {
  std::vector<Vector> h_in;
  std::vector<Vec3> x_in;
  std::vector<Vector> h_out;
  std::vector<std::size_t> in_degree;
  std::vector<EdgeRecord> edges;
};

struct LayerState {
  std::vector<Vector> h;
  std::vector<Vec3> x;
};

struct EncoderTape {
  std::vector<MlpTape> input_tapes;
  std::vector<LayerTape> layers;
  std::size_t node_count = 0;
};

struct LayoutResult {
  Vector embedding;             // e_layout, dimension d
  std::vector<Position> positions;  // final node positions
};

/// Edge embedding for (kind, relation): the table row followed by a one-hot
/// of the edge kind. Throws GraphError on an out-of-vocabulary relation.
Vector edge_embedding(const DenseMatrix& relation_table, EdgeKind kind, Relation relation);
std::size_t relation_row(EdgeKind kind, Relation relation);

/// One layer: h_i' = h_i + sum_j f_h(d_ij, h_i, h_j, e_ij)
///            x_i' = x_i + sum_j (x_i - x_j) tanh(f_x(d_ij, h_i', h_j', e_ij)) / (|N(i)| + 1)
/// where N(i) are the sources of edges into i and d_ij = |x_i - x_j|^2.
LayerState egcl_forward(const EquivariantLayer& layer, const std::vector<Vector>& h,
                        const std::vector<Vec3>& x, const SceneGraph& g,
                        const DenseMatrix& relation_table, LayerTape* tape = nullptr);

/// Gradient of one layer. `grad_h` and `grad_x` hold the upstream gradients
/// on the layer outputs and are replaced by the gradients on its inputs.
void egcl_backward(const EquivariantLayer& layer, const LayerTape& tape, const SceneGraph& g,
                   std::vector<Vector>& grad_h, std::vector<Vec3>& grad_x,
                   EquivariantLayer& layer_grads, DenseMatrix& relation_table_grads);

/// Stacked equivariant layers with mean pooling into a layout embedding.
class SceneEncoder {
 public:
  SceneEncoder() = default;
  static SceneEncoder init(const SceneEncoderConfig& config, Rng& rng);

  const SceneEncoderConfig& config() const { return config_; }

  /// h_i^0 = input_proj(t_i). Positions are not part of the node features.
  std::vector<Vector> init_node_features(const SceneGraph& g) const;

  /// Empty graph gives the zero embedding and no positions.
  LayoutResult encode(const SceneGraph& g) const;
  LayoutResult encode(const SceneGraph& g, EncoderTape& tape) const;

  /// Accumulates parameter gradients for an upstream gradient on e_layout.
  void backward(const SceneGraph& g, const EncoderTape& tape,
                std::span<const real> grad_embedding, SceneEncoder& grads) const;

  SceneEncoder zeros_like() const;
  void collect(const std::string& prefix, ParamList& out);

  Mlp input_proj;
  std::vector<EquivariantLayer> layers;
  DenseMatrix relation_table;  // (2 * kRelationCount) x relation_dim

 private:
  LayoutResult run(const SceneGraph& g, EncoderTape* tape) const;

  SceneEncoderConfig config_;
};

}  // namespace layoutret::inline LAYOUTRET_ABI
