#pragma once

// Helpers shared by the unit tests and the acceptance runner. Everything is
// header-only so a test can be built against either precision of the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "layoutret/fusion.hpp"
#include "layoutret/gallery.hpp"
#include "layoutret/scene_graph.hpp"

namespace testsupport {

using namespace layoutret;

inline Vector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (auto& x : v) x = static_cast<real>(scale * rng.normal());
  return v;
}

inline Vector random_unit(Rng& rng, std::size_t n) { return normalized(random_vector(rng, n)); }

inline ModalityBundle random_bundle(Rng& rng, std::size_t dim, unsigned mask = kAllModalities) {
  ModalityBundle b;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (mask & (1u << k)) b.slots[k] = random_vector(rng, dim);
  }
  return b;
}

// Random graph with both edge kinds. Positions are uniform in a cube of side
// 2 * extent; roughly `edge_prob` of ordered pairs get an edge.
inline SceneGraph random_graph(Rng& rng, std::size_t n, std::size_t d_sem, double edge_prob = 0.4,
                               double extent = 3.0) {
  std::vector<SceneNode> nodes;
  for (std::size_t i = 0; i < n; ++i) {
    SceneNode s;
    s.id = "n" + std::to_string(i);
    for (auto& c : s.position) c = extent * (2 * rng.uniform() - 1);
    s.feature = random_vector(rng, d_sem);
    s.category = "c" + std::to_string(rng.below(4));
    s.style = "s" + std::to_string(rng.below(3));
    nodes.push_back(std::move(s));
  }
  std::vector<SceneEdge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      for (EdgeKind kind : {EdgeKind::Physical, EdgeKind::Semantic}) {
        if (rng.bernoulli(edge_prob / 2)) {
          edges.push_back({nodes[i].id, nodes[j].id, kind,
                           static_cast<Relation>(rng.below(kRelationCount))});
        }
      }
    }
  }
  return SceneGraph::from_parts(d_sem, std::move(nodes), std::move(edges));
}

inline RigidTransform random_rigid(Rng& rng, double max_translation) {
  const Position axis{rng.normal(), rng.normal(), rng.normal()};
  const Position t{max_translation * (2 * rng.uniform() - 1), max_translation * (2 * rng.uniform() - 1),
                   max_translation * (2 * rng.uniform() - 1)};
  return RigidTransform::from_axis_angle(axis, std::numbers::pi * rng.uniform(), t);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0;  // largest |analytic - numeric| / max(|analytic|, |numeric|)
  std::string worst_name;
};

// Central differences of `loss` against the analytic gradients in `grads`
// (paired with `params` by position). `max_per_tensor` > 0 samples that many
// entries per tensor instead of checking them all.
inline GradCheck check_gradients(const ParamList& params, const ParamList& grads,
                                 const std::function<double()>& loss, Rng& rng,
                                 std::size_t max_per_tensor = 0, double h = 1e-3,
                                 double rtol = 1e-3, double atol = 1e-6) {
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].tensor->data();
    const auto analytic = grads[t].tensor->data();
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor && idx.size() > max_per_tensor) {
      for (std::size_t k = 0; k < max_per_tensor; ++k) {
        std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
      }
      idx.resize(max_per_tensor);
    }
    for (std::size_t i : idx) {
      const real saved = values[i];
      values[i] = static_cast<real>(saved + h);
      const double up = loss();
      values[i] = static_cast<real>(saved - h);
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i];
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const bool ok = diff <= atol || diff <= rtol * scale;
      ++out.checked;
      if (!ok) ++out.failed;
      const double rel = scale > 0 ? diff / scale : 0;
      if (diff > atol && rel > out.worst) {
        out.worst = rel;
        out.worst_name = params[t].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

// Full sort by (-score, asset_id), computed independently of Gallery::topk.
inline std::vector<SearchHit> naive_topk(const Gallery& g, std::span<const real> q, std::size_t k) {
  std::vector<SearchHit> all;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& e = g.entries()[i].embedding;
    real s = 0;
    for (std::size_t d = 0; d < e.size(); ++d) s += e[d] * q[d];
    all.push_back({g.entries()[i].asset_id, s, i});
  }
  std::sort(all.begin(), all.end(), [](const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.asset_id < b.asset_id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace testsupport
