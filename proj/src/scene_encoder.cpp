#include "layoutret/scene_encoder.hpp"

#include <array>
#include <cmath>
#include <unordered_map>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

struct EdgeIndex {
  std::size_t dst;
  std::size_t src;
};

std::vector<EdgeIndex> index_edges(const SceneGraph& g) {
  std::unordered_map<std::string_view, std::size_t> ids;
  for (std::size_t i = 0; i < g.size(); ++i) ids.emplace(g.nodes()[i].id, i);
  std::vector<EdgeIndex> out;
  out.reserve(g.edges().size());
  for (const auto& e : g.edges()) {
    const auto s = ids.find(e.src);
    const auto d = ids.find(e.dst);
    if (s == ids.end() || d == ids.end()) throw GraphError("edge endpoint missing from graph");
    out.push_back({d->second, s->second});
  }
  return out;
}

Vector concat_input(real dist, std::span<const real> hi, std::span<const real> hj,
                    std::span<const real> e) {
  Vector in;
  in.reserve(1 + hi.size() + hj.size() + e.size());
  in.push_back(dist);
  in.insert(in.end(), hi.begin(), hi.end());
  in.insert(in.end(), hj.begin(), hj.end());
  in.insert(in.end(), e.begin(), e.end());
  return in;
}

}  // namespace

std::size_t relation_row(EdgeKind kind, Relation relation) {
  const auto r = static_cast<std::size_t>(relation);
  if (r >= kRelationCount) throw GraphError("unknown relation label " + std::to_string(r));
  return static_cast<std::size_t>(kind) * kRelationCount + r;
}

Vector edge_embedding(const DenseMatrix& relation_table, EdgeKind kind, Relation relation) {
  const auto row = relation_table.row(relation_row(kind, relation));
  Vector e(row.begin(), row.end());
  e.push_back(kind == EdgeKind::Physical ? real(1) : real(0));
  e.push_back(kind == EdgeKind::Semantic ? real(1) : real(0));
  return e;
}

LayerState egcl_forward(const EquivariantLayer& layer, const std::vector<Vector>& h,
                        const std::vector<Vec3>& x, const SceneGraph& g,
                        const DenseMatrix& relation_table, LayerTape* tape) {
  const std::size_t n = g.size();
  require_dim(n, h.size(), "egcl_forward features");
  require_dim(n, x.size(), "egcl_forward positions");
  const auto edges = index_edges(g);

  std::vector<std::size_t> degree(n, 0);
  for (const auto& e : edges) ++degree[e.dst];

  std::vector<EdgeRecord> records(edges.size());
  LayerState out{h, x};
  // Sums are carried in double so the result does not depend on edge order.
  std::vector<std::vector<double>> acc(n);
  for (std::size_t i = 0; i < n; ++i) acc[i].assign(h[i].begin(), h[i].end());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto& r = records[k];
    r.dst = edges[k].dst;
    r.src = edges[k].src;
    real dist = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      r.diff[c] = x[r.dst][c] - x[r.src][c];
      dist += r.diff[c] * r.diff[c];
    }
    r.dist = dist;
    const auto& edge = g.edges()[k];
    const Vector e = edge_embedding(relation_table, edge.kind, edge.relation);
    r.message_input = concat_input(dist, h[r.dst], h[r.src], e);
    const Vector m = tape ? layer.message.forward(r.message_input, r.message_tape)
                          : layer.message.forward(r.message_input);
    require_dim(h[r.dst].size(), m.size(), "egcl_forward message");
    for (std::size_t a = 0; a < m.size(); ++a) acc[r.dst][a] += m[a];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < acc[i].size(); ++a) out.h[i][a] = static_cast<real>(acc[i][a]);
  }

  std::vector<std::array<double, 3>> shift(n, std::array<double, 3>{});
  for (std::size_t k = 0; k < edges.size(); ++k) {
    auto& r = records[k];
    const auto& edge = g.edges()[k];
    const Vector e = edge_embedding(relation_table, edge.kind, edge.relation);
    r.coord_input = concat_input(r.dist, out.h[r.dst], out.h[r.src], e);
    const Vector c = tape ? layer.coord.forward(r.coord_input, r.coord_tape)
                          : layer.coord.forward(r.coord_input);
    require_dim(1, c.size(), "egcl_forward coordinate gate");
    r.gate = std::tanh(c[0]);
    for (std::size_t a = 0; a < 3; ++a) shift[r.dst][a] += double(r.diff[a]) * r.gate;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double scale = 1.0 / static_cast<double>(degree[i] + 1);
    for (std::size_t a = 0; a < 3; ++a) {
      out.x[i][a] = static_cast<real>(x[i][a] + shift[i][a] * scale);
    }
  }

  if (tape) {
    tape->h_in = h;
    tape->x_in = x;
    tape->h_out = out.h;
    tape->in_degree = std::move(degree);
    tape->edges = std::move(records);
  }
  return out;
}

void egcl_backward(const EquivariantLayer& layer, const LayerTape& tape, const SceneGraph& g,
                   std::vector<Vector>& grad_h, std::vector<Vec3>& grad_x,
                   EquivariantLayer& layer_grads, DenseMatrix& relation_table_grads) {
  const std::size_t n = tape.h_in.size();
  require_dim(n, grad_h.size(), "egcl_backward features");
  require_dim(n, grad_x.size(), "egcl_backward positions");
  const std::size_t d = n ? tape.h_in[0].size() : 0;

  // Positions pass straight through; features too (residual).
  std::vector<Vec3> gx_in = grad_x;
  std::vector<Vector> gh_out = grad_h;  // total gradient on h' after the coord path

  auto add_edge_input_grad = [&](const EdgeRecord& r, const Vector& gin,
                                 std::vector<Vector>& gh_target, std::size_t k) {
    for (std::size_t a = 0; a < d; ++a) {
      gh_target[r.dst][a] += gin[1 + a];
      gh_target[r.src][a] += gin[1 + d + a];
    }
    const auto& edge = g.edges()[k];
    auto row = relation_table_grads.row(relation_row(edge.kind, edge.relation));
    for (std::size_t a = 0; a < row.size(); ++a) row[a] += gin[1 + 2 * d + a];
    const real gdist = gin[0];
    for (std::size_t a = 0; a < 3; ++a) {
      const real gdiff = 2 * gdist * r.diff[a];
      gx_in[r.dst][a] += gdiff;
      gx_in[r.src][a] -= gdiff;
    }
  };

  for (std::size_t k = 0; k < tape.edges.size(); ++k) {
    const auto& r = tape.edges[k];
    const real scale = real(1) / static_cast<real>(tape.in_degree[r.dst] + 1);
    real ggate = 0;
    for (std::size_t a = 0; a < 3; ++a) ggate += grad_x[r.dst][a] * r.diff[a];
    ggate *= scale;
    for (std::size_t a = 0; a < 3; ++a) {
      const real gdiff = scale * r.gate * grad_x[r.dst][a];
      gx_in[r.dst][a] += gdiff;
      gx_in[r.src][a] -= gdiff;
    }
    const real graw = ggate * (1 - r.gate * r.gate);
    if (graw == real(0)) continue;
    const Vector gin = layer.coord.backward(r.coord_tape, std::span<const real>(&graw, 1),
                                            layer_grads.coord);
    add_edge_input_grad(r, gin, gh_out, k);
  }

  std::vector<Vector> gh_in = gh_out;
  for (std::size_t k = 0; k < tape.edges.size(); ++k) {
    const auto& r = tape.edges[k];
    const Vector gin = layer.message.backward(r.message_tape, gh_out[r.dst], layer_grads.message);
    add_edge_input_grad(r, gin, gh_in, k);
  }

  grad_h = std::move(gh_in);
  grad_x = std::move(gx_in);
}

SceneEncoder SceneEncoder::init(const SceneEncoderConfig& config, Rng& rng) {
  SceneEncoder enc;
  enc.config_ = config;
  Rng proj_rng = rng.split(1);
  enc.input_proj = Mlp::make({config.sem_dim, config.mlp_width, config.hidden_dim},
                             Activation::Silu, proj_rng);
  const std::size_t in = config.message_input_dim();
  for (std::size_t l = 0; l < config.layers; ++l) {
    Rng lrng = rng.split(100 + l);
    EquivariantLayer layer;
    // Small output gains keep the residual stack close to identity at init.
    layer.message = Mlp::make({in, config.mlp_width, config.mlp_width, config.hidden_dim},
                              Activation::Silu, lrng, Activation::Identity, real(0.3));
    layer.coord = Mlp::make({in, config.mlp_width, config.mlp_width, 1}, Activation::Silu, lrng,
                            Activation::Identity, real(0.01));
    enc.layers.push_back(std::move(layer));
  }
  enc.relation_table = DenseMatrix(2 * kRelationCount, config.relation_dim);
  Rng trng = rng.split(2);
  for (real& v : enc.relation_table.data()) v = static_cast<real>(0.5 * trng.normal());
  return enc;
}

std::vector<Vector> SceneEncoder::init_node_features(const SceneGraph& g) const {
  std::vector<Vector> h;
  h.reserve(g.size());
  for (const auto& n : g.nodes()) {
    require_dim(config_.sem_dim, n.feature.size(), "init_node_features semantic feature");
    h.push_back(input_proj.forward(n.feature));
  }
  return h;
}

LayoutResult SceneEncoder::encode(const SceneGraph& g) const { return run(g, nullptr); }

LayoutResult SceneEncoder::encode(const SceneGraph& g, EncoderTape& tape) const {
  return run(g, &tape);
}

LayoutResult SceneEncoder::run(const SceneGraph& g, EncoderTape* tape) const {
  if (tape) {
    *tape = {};
    tape->node_count = g.size();
  }
  if (g.empty()) return {Vector(config_.hidden_dim, real(0)), {}};
  const std::size_t n = g.size();
  std::vector<Vector> h;
  h.reserve(n);
  if (tape) tape->input_tapes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = g.nodes()[i].feature;
    require_dim(config_.sem_dim, t.size(), "init_node_features semantic feature");
    h.push_back(tape ? input_proj.forward(t, tape->input_tapes[i]) : input_proj.forward(t));
  }

  // The layers only see differences of positions, so working relative to the
  // centroid changes nothing mathematically but keeps float rounding
  // independent of where the scene sits in space.
  std::array<double, 3> centroid{};
  for (const auto& node : g.nodes()) {
    for (std::size_t a = 0; a < 3; ++a) centroid[a] += node.position[a];
  }
  for (double& c : centroid) c /= static_cast<double>(n);
  std::vector<Vec3> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      x[i][a] = static_cast<real>(g.nodes()[i].position[a] - centroid[a]);
    }
  }

  if (tape) tape->layers.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto s = egcl_forward(layers[l], h, x, g, relation_table, tape ? &tape->layers[l] : nullptr);
    h = std::move(s.h);
    x = std::move(s.x);
  }
  std::vector<double> sum(config_.hidden_dim, 0.0);
  for (const auto& hi : h) {
    for (std::size_t a = 0; a < sum.size(); ++a) sum[a] += hi[a];
  }
  Vector pooled(config_.hidden_dim);
  for (std::size_t a = 0; a < sum.size(); ++a) pooled[a] = static_cast<real>(sum[a] / double(n));
  std::vector<Position> positions(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < 3; ++a) positions[i][a] = double(x[i][a]) + centroid[a];
  }
  return {std::move(pooled), std::move(positions)};
}

void SceneEncoder::backward(const SceneGraph& g, const EncoderTape& tape,
                            std::span<const real> grad_embedding, SceneEncoder& grads) const {
  require_dim(config_.hidden_dim, grad_embedding.size(), "essgnn_backward upstream gradient");
  const std::size_t n = tape.node_count;
  if (n == 0) return;
  std::vector<Vector> gh(n, Vector(grad_embedding.begin(), grad_embedding.end()));
  for (auto& v : gh) {
    for (real& a : v) a /= static_cast<real>(n);
  }
  std::vector<Vec3> gx(n, Vec3{});
  for (std::size_t l = layers.size(); l-- > 0;) {
    egcl_backward(layers[l], tape.layers[l], g, gh, gx, grads.layers[l], grads.relation_table);
  }
  for (std::size_t i = 0; i < n; ++i) input_proj.backward(tape.input_tapes[i], gh[i], grads.input_proj);
}

SceneEncoder SceneEncoder::zeros_like() const {
  SceneEncoder z;
  z.config_ = config_;
  z.input_proj = input_proj.zeros_like();
  for (const auto& l : layers) z.layers.push_back({l.message.zeros_like(), l.coord.zeros_like()});
  z.relation_table = relation_table.zeros_like();
  return z;
}

void SceneEncoder::collect(const std::string& prefix, ParamList& out) {
  input_proj.collect(prefix + ".input_proj", out);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].message.collect(prefix + ".layer" + std::to_string(l) + ".message", out);
    layers[l].coord.collect(prefix + ".layer" + std::to_string(l) + ".coord", out);
  }
  out.push_back({prefix + ".relation_table", &relation_table});
}

}  // namespace layoutret::inline LAYOUTRET_ABI
