#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance runner. Meant for the double-precision build.

#include "layoutret/objective.hpp"
#include "layoutret/scene_encoder.hpp"
#include "support.hpp"

namespace gradcheck {

using namespace layoutret;
using testsupport::GradCheck;

inline void merge(GradCheck& into, const GradCheck& r) {
  into.checked += r.checked;
  into.failed += r.failed;
  if (r.worst > into.worst) {
    into.worst = r.worst;
    into.worst_name = r.worst_name;
  }
}

inline SceneEncoderConfig small_encoder_config() {
  SceneEncoderConfig c;
  c.sem_dim = 6;
  c.hidden_dim = 8;
  c.relation_dim = 4;
  c.layers = 3;
  c.mlp_width = 8;
  return c;
}

// Wraps a vector so it can be perturbed like a parameter tensor.
struct VectorParam {
  DenseMatrix m;
  explicit VectorParam(const Vector& v) : m(1, v.size()) { std::copy(v.begin(), v.end(), m.data().begin()); }
  Vector value() const { return Vector(m.data().begin(), m.data().end()); }
};

inline GradCheck check_random_mlps(std::size_t count, std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t depth = 1 + rng.below(3);
    std::vector<std::size_t> widths{1 + rng.below(16)};
    for (std::size_t l = 0; l < depth; ++l) widths.push_back(1 + rng.below(16));
    const Activation out = rng.bernoulli(0.5) ? Activation::Identity : Activation::Silu;
    Mlp net = Mlp::make(widths, Activation::Silu, rng, out);
    for (auto& layer : net.layers()) {
      for (real& b : layer.bias.data()) b = static_cast<real>(0.1 * rng.normal());
    }
    const Vector x = testsupport::random_vector(rng, widths.front());
    const Vector c = testsupport::random_vector(rng, widths.back());
    auto grads = net.backward(x, c);
    ParamList p, g;
    net.collect("mlp" + std::to_string(t), p);
    grads.params.collect("mlp" + std::to_string(t), g);
    merge(total, testsupport::check_gradients(p, g, [&] { return dot(c, net.forward(x)); }, rng));
  }
  return total;
}

inline GradCheck check_mlp_inputs(std::size_t count, std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  for (std::size_t t = 0; t < count; ++t) {
    const Mlp net = Mlp::make({1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(12)},
                              Activation::Silu, rng);
    VectorParam x(testsupport::random_vector(rng, net.in_dim()));
    const Vector c = testsupport::random_vector(rng, net.out_dim());
    VectorParam gx(net.backward(x.value(), c).input);
    merge(total, testsupport::check_gradients({{"input", &x.m}}, {{"input", &gx.m}},
                                              [&] { return dot(c, net.forward(x.value())); }, rng));
  }
  return total;
}

// e_layout . c for random graphs of `min_nodes`..`max_nodes` nodes.
inline GradCheck check_scene_encoder(std::size_t count, std::size_t min_nodes, std::size_t max_nodes,
                                     std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  const auto cfg = small_encoder_config();
  for (std::size_t t = 0; t < count; ++t) {
    SceneEncoder enc = SceneEncoder::init(cfg, rng);
    // Larger coordinate gains than the default so the position path carries
    // gradient of a size finite differences can see.
    for (auto& layer : enc.layers) {
      for (real& w : layer.coord.layers().back().weight.data()) w *= 30;
    }
    const std::size_t n = min_nodes + rng.below(max_nodes - min_nodes + 1);
    const SceneGraph g = testsupport::random_graph(rng, n, cfg.sem_dim, 0.5, 1.5);
    const Vector c = testsupport::random_vector(rng, cfg.hidden_dim);
    EncoderTape tape;
    enc.encode(g, tape);
    SceneEncoder grads = enc.zeros_like();
    enc.backward(g, tape, c, grads);
    ParamList p, gl;
    enc.collect("layout", p);
    grads.collect("layout", gl);
    merge(total, testsupport::check_gradients(p, gl, [&] { return dot(c, enc.encode(g).embedding); },
                                              rng, 24));
  }
  return total;
}

inline GradCheck check_relation_table(std::size_t count, std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  const auto cfg = small_encoder_config();
  for (std::size_t t = 0; t < count; ++t) {
    SceneEncoder enc = SceneEncoder::init(cfg, rng);
    const SceneGraph g = testsupport::random_graph(rng, 4, cfg.sem_dim, 0.8, 1.5);
    const Vector c = testsupport::random_vector(rng, cfg.hidden_dim);
    EncoderTape tape;
    enc.encode(g, tape);
    SceneEncoder grads = enc.zeros_like();
    enc.backward(g, tape, c, grads);
    merge(total, testsupport::check_gradients({{"relation_table", &enc.relation_table}},
                                              {{"relation_table", &grads.relation_table}},
                                              [&] { return dot(c, enc.encode(g).embedding); }, rng));
  }
  return total;
}

inline GradCheck check_coordinate_path(std::size_t count, std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  const auto cfg = small_encoder_config();
  for (std::size_t t = 0; t < count; ++t) {
    SceneEncoder enc = SceneEncoder::init(cfg, rng);
    for (auto& layer : enc.layers) {
      for (real& w : layer.coord.layers().back().weight.data()) w *= 30;
    }
    const SceneGraph g = testsupport::random_graph(rng, 5, cfg.sem_dim, 0.7, 1.5);
    const Vector c = testsupport::random_vector(rng, cfg.hidden_dim);
    EncoderTape tape;
    enc.encode(g, tape);
    SceneEncoder grads = enc.zeros_like();
    enc.backward(g, tape, c, grads);
    ParamList p, gl;
    for (std::size_t l = 0; l + 1 < cfg.layers; ++l) {
      enc.layers[l].coord.collect("coord" + std::to_string(l), p);
      grads.layers[l].coord.collect("coord" + std::to_string(l), gl);
    }
    bool any_nonzero = false;
    for (const auto& q : gl) {
      for (real v : q.tensor->data()) any_nonzero |= v != 0;
    }
    if (!any_nonzero && !g.edges().empty()) {
      ++total.failed;
      total.worst_name = "coordinate path gradient is identically zero";
    }
    merge(total, testsupport::check_gradients(p, gl, [&] { return dot(c, enc.encode(g).embedding); },
                                              rng));
  }
  return total;
}

inline GradCheck check_losses(std::size_t count, std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t n = 1 + rng.below(4);
    const std::size_t d = 2 + rng.below(7);
    DenseMatrix q(n, d), g(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const Vector a = testsupport::random_unit(rng, d), b = testsupport::random_unit(rng, d);
      std::copy(a.begin(), a.end(), q.row(i).begin());
      std::copy(b.begin(), b.end(), g.row(i).begin());
    }
    auto rows = [](const DenseMatrix& m) {
      std::vector<Vector> out;
      for (std::size_t i = 0; i < m.rows(); ++i) out.emplace_back(m.row(i).begin(), m.row(i).end());
      return out;
    };
    const bool bidir = t % 2 == 1;
    auto eval = [&] {
      return bidir ? bidirectional_loss(rows(q), rows(g), real(0.5))
                   : pretrain_loss(rows(q), rows(g), real(0.5));
    };
    const LossResult res = eval();
    DenseMatrix gq(n, d), gg(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(res.grad_queries[i].begin(), res.grad_queries[i].end(), gq.row(i).begin());
      std::copy(res.grad_gallery[i].begin(), res.grad_gallery[i].end(), gg.row(i).begin());
    }
    const std::string tag = bidir ? "bidirectional" : "pretrain";
    merge(total, testsupport::check_gradients({{tag + ".queries", &q}, {tag + ".gallery", &g}},
                                              {{tag + ".queries", &gq}, {tag + ".gallery", &gg}},
                                              [&] { return double(eval().loss); }, rng));
  }
  return total;
}

// Normalization and gating make the towers curved enough that the O(h^2)
// truncation of a 1e-3 step exceeds 1e-3 relative on small gradients.
inline constexpr double kTowerStep = 1e-5;

// Query and gallery towers for every fusion variant, both missing-modality
// policies and every presence pattern, including lambda and the layout input.
inline GradCheck check_towers(std::size_t per_config, std::uint64_t seed) {
  GradCheck total;
  Rng rng(seed);
  for (FusionVariant v : {FusionVariant::Mean, FusionVariant::Mlp, FusionVariant::MaskedMlp,
                          FusionVariant::Gated, FusionVariant::Attention}) {
    for (MissingPolicy mp : {MissingPolicy::MaskToken, MissingPolicy::ZeroPad}) {
      for (std::size_t t = 0; t < per_config; ++t) {
        TowerConfig cfg{5, 6, 6, v, mp, real(0.3)};
        Tower tower = Tower::init(cfg, rng);
        // Non-trivial mask tokens, gates and attention weights.
        ParamList all;
        tower.collect("tower", all);
        for (const auto& p : all) {
          for (real& x : p.tensor->data()) {
            if (x == 0) x = static_cast<real>(0.2 * rng.normal());
          }
        }
        const unsigned mask = 1 + static_cast<unsigned>(rng.below(kAllModalities));
        const ModalityBundle raw = testsupport::random_bundle(rng, cfg.input_dim, mask);
        gradcheck::VectorParam layout(testsupport::random_vector(rng, cfg.dim));
        const Vector c = testsupport::random_vector(rng, cfg.dim);

        TowerTape tape;
        tower.compose_query(raw, layout.value(), &tape);
        Tower grads = tower.zeros_like();
        gradcheck::VectorParam glayout(tower.backward(tape, c, grads));
        ParamList p, g;
        tower.collect("query." + std::string(to_string(v)), p);
        grads.collect("query." + std::string(to_string(v)), g);
        p.push_back({"layout", &layout.m});
        g.push_back({"layout", &glayout.m});
        merge(total, testsupport::check_gradients(
                         p, g, [&] { return dot(c, tower.compose_query(raw, layout.value())); }, rng, 0,
                         kTowerStep));

        const ModalityBundle full = testsupport::random_bundle(rng, cfg.input_dim);
        TowerTape gtape;
        tower.encode_gallery_asset(full, &gtape);
        Tower ggrads = tower.zeros_like();
        tower.backward(gtape, c, ggrads);
        ParamList gp, gg;
        tower.collect("gallery." + std::string(to_string(v)), gp);
        ggrads.collect("gallery." + std::string(to_string(v)), gg);
        merge(total, testsupport::check_gradients(
                         gp, gg, [&] { return dot(c, tower.encode_gallery_asset(full)); }, rng, 0,
                         kTowerStep));
      }
    }
  }
  return total;
}

}  // namespace gradcheck
