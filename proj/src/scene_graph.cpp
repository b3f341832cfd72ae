#include "layoutret/scene_graph.hpp"

#include <array>
#include <cmath>
#include <set>
#include <tuple>

#include "layoutret/errors.hpp"
#include "layoutret/scene_json.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

constexpr std::array<std::string_view, kRelationCount> kRelationNames = {
    "on",     "under",    "adjacent",    "facing", "inside",     "supports",
    "left-of", "right-of", "in-front-of", "behind", "same-style", "same-function",
};

void validate(const SceneGraph& g, const std::vector<SceneNode>& nodes,
              const std::vector<SceneEdge>& edges) {
  std::set<std::string_view> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.id).second) throw GraphError("duplicate node id '" + n.id + "'");
    if (n.feature.size() != g.d_sem()) {
      throw GraphError("node '" + n.id + "' feature has dimension " +
                       std::to_string(n.feature.size()) + ", graph d_sem is " +
                       std::to_string(g.d_sem()));
    }
    for (double c : n.position) {
      if (!std::isfinite(c)) throw GraphError("node '" + n.id + "' has a non-finite position");
    }
  }
  std::set<std::tuple<std::string_view, std::string_view, EdgeKind>> seen;
  for (const auto& e : edges) {
    if (!ids.contains(e.src)) throw GraphError("edge references missing node '" + e.src + "'");
    if (!ids.contains(e.dst)) throw GraphError("edge references missing node '" + e.dst + "'");
    if (e.src == e.dst) throw GraphError("self-loop on node '" + e.src + "'");
    if (static_cast<std::size_t>(e.relation) >= kRelationCount) {
      throw GraphError("unknown relation label on edge " + e.src + "->" + e.dst);
    }
    if (!seen.emplace(e.src, e.dst, e.kind).second) {
      throw GraphError("duplicate edge " + e.src + "->" + e.dst);
    }
  }
}

}  // namespace

std::string_view to_string(Relation r) {
  const auto i = static_cast<std::size_t>(r);
  return i < kRelationCount ? kRelationNames[i] : std::string_view("?");
}

std::string_view to_string(EdgeKind k) { return k == EdgeKind::Physical ? "physical" : "semantic"; }

std::optional<Relation> parse_relation(std::string_view label) {
  for (std::size_t i = 0; i < kRelationCount; ++i) {
    if (kRelationNames[i] == label) return static_cast<Relation>(i);
  }
  return std::nullopt;
}

std::optional<EdgeKind> parse_edge_kind(std::string_view label) {
  if (label == "physical") return EdgeKind::Physical;
  if (label == "semantic") return EdgeKind::Semantic;
  return std::nullopt;
}

SceneGraph SceneGraph::build(std::size_t d_sem, std::vector<SceneNode> nodes,
                             std::span<const RelationSpec> physical,
                             std::span<const RelationSpec> semantic) {
  std::vector<SceneEdge> edges;
  std::set<std::tuple<std::string, std::string, EdgeKind>> seen;
  auto add = [&](std::span<const RelationSpec> specs, EdgeKind kind) {
    for (const auto& r : specs) {
      if (seen.emplace(r.src, r.dst, kind).second) edges.push_back({r.src, r.dst, kind, r.relation});
    }
  };
  add(physical, EdgeKind::Physical);
  add(semantic, EdgeKind::Semantic);
  return from_parts(d_sem, std::move(nodes), std::move(edges));
}

SceneGraph SceneGraph::from_parts(std::size_t d_sem, std::vector<SceneNode> nodes,
                                  std::vector<SceneEdge> edges) {
  SceneGraph g(d_sem);
  validate(g, nodes, edges);
  g.nodes_ = std::move(nodes);
  g.edges_ = std::move(edges);
  return g;
}

std::optional<std::size_t> SceneGraph::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id == id) return i;
  }
  return std::nullopt;
}

SceneGraph SceneGraph::with_node(SceneNode node, std::span<const SceneEdge> new_edges) const {
  auto nodes = nodes_;
  nodes.push_back(std::move(node));
  auto edges = edges_;
  edges.insert(edges.end(), new_edges.begin(), new_edges.end());
  return from_parts(d_sem_, std::move(nodes), std::move(edges));
}

SceneGraph SceneGraph::with_positions(std::span<const Position> positions) const {
  require_dim(nodes_.size(), positions.size(), "with_positions");
  SceneGraph g = *this;
  for (std::size_t i = 0; i < positions.size(); ++i) g.nodes_[i].position = positions[i];
  return g;
}

RigidTransform RigidTransform::from_axis_angle(const Position& axis, double angle,
                                               const Position& translation) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (!(n > 0)) throw TransformError("rotation axis has zero length");
  const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
  RigidTransform r;
  const std::array<double, 9> m = {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
                                   t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
                                   t * x * z - s * y, t * y * z + s * x, t * z * z + c};
  r.rotation = m;
  r.translation = translation;
  return r;
}

Position RigidTransform::apply(const Position& x) const {
  Position out;
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = translation[r];
    for (std::size_t c = 0; c < 3; ++c) acc += rotation[r * 3 + c] * x[c];
    out[r] = acc;
  }
  return out;
}

double RigidTransform::determinant() const {
  const auto& m = rotation;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void RigidTransform::validate() const {
  for (double v : rotation) {
    if (!std::isfinite(v)) throw TransformError("non-finite rotation entry");
  }
  for (double v : translation) {
    if (!std::isfinite(v)) throw TransformError("non-finite translation entry");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += rotation[k * 3 + i] * rotation[k * 3 + j];
      if (std::abs(acc - (i == j ? 1.0 : 0.0)) > 1e-5) {
        throw TransformError("rotation is not orthogonal");
      }
    }
  }
  if (std::abs(std::abs(determinant()) - 1.0) > 1e-5) {
    throw TransformError("rotation determinant is not +-1");
  }
}

RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
  RigidTransform out;
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        acc += outer.rotation[r * 3 + k] * inner.rotation[k * 3 + c];
      }
      out.rotation[r * 3 + c] = acc;
    }
  }
  out.translation = outer.apply(inner.translation);
  return out;
}

SceneGraph apply_rigid_transform(const SceneGraph& g, const RigidTransform& t) {
  t.validate();
  std::vector<Position> positions;
  positions.reserve(g.size());
  for (const auto& n : g.nodes()) positions.push_back(t.apply(n.position));
  return g.with_positions(positions);
}

nlohmann::json parse_json_text(std::string_view text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

nlohmann::json scene_to_json(const SceneGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes()) {
    nlohmann::json jn = {{"id", n.id},
                         {"position", {n.position[0], n.position[1], n.position[2]}},
                         {"feature", n.feature},
                         {"category", n.category},
                         {"style", n.style}};
    if (n.asset_id) jn["asset_id"] = *n.asset_id;
    nodes.push_back(std::move(jn));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges()) {
    edges.push_back({{"src", e.src},
                     {"dst", e.dst},
                     {"kind", std::string(to_string(e.kind))},
                     {"relation", std::string(to_string(e.relation))}});
  }
  return {{"d_sem", g.d_sem()}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ParseError("missing '" + std::string(key) + "' at " + where);
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad '" + std::string(key) + "' at " + where + ": " + e.what());
  }
}

}  // namespace

SceneGraph scene_from_json(const nlohmann::json& j, const std::string& where) {
  const auto d_sem = field<std::size_t>(j, "d_sem", where.empty() ? "/" : where);
  std::vector<SceneNode> nodes;
  const auto jnodes = field<nlohmann::json>(j, "nodes", where);
  if (!jnodes.is_array()) throw ParseError("'nodes' is not an array at " + where);
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const std::string at = where + "/nodes/" + std::to_string(i);
    const auto& jn = jnodes[i];
    SceneNode n;
    n.id = field<std::string>(jn, "id", at);
    const auto pos = field<std::vector<double>>(jn, "position", at);
    if (pos.size() != 3) throw ParseError("position must have 3 entries at " + at);
    n.position = {pos[0], pos[1], pos[2]};
    n.feature = field<std::vector<real>>(jn, "feature", at);
    if (jn.contains("asset_id") && !jn["asset_id"].is_null()) {
      n.asset_id = field<std::string>(jn, "asset_id", at);
    }
    n.category = field<std::string>(jn, "category", at);
    n.style = field<std::string>(jn, "style", at);
    nodes.push_back(std::move(n));
  }
  std::vector<SceneEdge> edges;
  const auto jedges = field<nlohmann::json>(j, "edges", where);
  if (!jedges.is_array()) throw ParseError("'edges' is not an array at " + where);
  for (std::size_t i = 0; i < jedges.size(); ++i) {
    const std::string at = where + "/edges/" + std::to_string(i);
    const auto& je = jedges[i];
    SceneEdge e;
    e.src = field<std::string>(je, "src", at);
    e.dst = field<std::string>(je, "dst", at);
    const auto kind = parse_edge_kind(field<std::string>(je, "kind", at));
    if (!kind) throw ParseError("unknown edge kind at " + at);
    const auto rel = parse_relation(field<std::string>(je, "relation", at));
    if (!rel) throw ParseError("unknown relation label at " + at);
    e.kind = *kind;
    e.relation = *rel;
    edges.push_back(std::move(e));
  }
  try {
    return SceneGraph::from_parts(d_sem, std::move(nodes), std::move(edges));
  } catch (const GraphError& e) {
    throw ParseError(std::string(e.what()) + " (in scene at " + (where.empty() ? "/" : where) + ")");
  }
}

std::string serialize(const SceneGraph& g) { return scene_to_json(g).dump(2) + "\n"; }

SceneGraph deserialize(std::string_view text) {
  return scene_from_json(parse_json_text(text, "scene file"));
}

}  // namespace layoutret::inline LAYOUTRET_ABI
