#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "layoutret/tensor.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

using Vec3 = std::array<real, 3>;
/// Scene coordinates in meters. Kept in double so that a scene placed far
/// from the origin loses no precision before the encoder recenters it.
using Position = std::array<double, 3>;

enum class EdgeKind : unsigned char { Physical = 0, Semantic = 1 };

/// Fixed relation vocabulary. Each (kind, relation) pair owns a learned
/// embedding row in the scene encoder.
enum class Relation : unsigned char {
  On,
  Under,
  Adjacent,
  Facing,
  Inside,
  Supports,
  LeftOf,
  RightOf,
  InFrontOf,
  Behind,
  SameStyle,
  SameFunction,
};
inline constexpr std::size_t kRelationCount = 12;

std::string_view to_string(Relation r);
std::string_view to_string(EdgeKind k);
std::optional<Relation> parse_relation(std::string_view label);
std::optional<EdgeKind> parse_edge_kind(std::string_view label);

struct SceneNode {
  std::string id;
  Position position{};
  Vector feature;
  std::optional<std::string> asset_id;
  std::string category;
  std::string style;

  friend bool operator==(const SceneNode&, const SceneNode&) = default;
};

struct SceneEdge {
  std::string src;
  std::string dst;
  EdgeKind kind = EdgeKind::Physical;
  Relation relation = Relation::Adjacent;

  friend bool operator==(const SceneEdge&, const SceneEdge&) = default;
};

/// A relation request fed to SceneGraph::build; the edge kind comes from
/// which list it is passed in.
struct RelationSpec {
  std::string src;
  std::string dst;
  Relation relation;
};

/// Validated, immutable scene graph. Edges are directed; a symmetric relation
/// is two edges. At most one edge exists per (src, dst, kind).
class SceneGraph {
 public:
  SceneGraph() = default;
  explicit SceneGraph(std::size_t d_sem) : d_sem_(d_sem) {}

  /// Dedupes edges by (src, dst, kind), keeping the first occurrence.
  static SceneGraph build(std::size_t d_sem, std::vector<SceneNode> nodes,
                          std::span<const RelationSpec> physical,
                          std::span<const RelationSpec> semantic);
  /// Validates an explicit node and edge list with the same rules.
  static SceneGraph from_parts(std::size_t d_sem, std::vector<SceneNode> nodes,
                               std::vector<SceneEdge> edges);

  std::size_t d_sem() const { return d_sem_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<SceneNode>& nodes() const { return nodes_; }
  const std::vector<SceneEdge>& edges() const { return edges_; }
  std::optional<std::size_t> index_of(std::string_view id) const;

  /// Returns a copy with one more node and its edges, revalidated.
  SceneGraph with_node(SceneNode node, std::span<const SceneEdge> new_edges) const;
  /// Returns a copy whose node positions are replaced (same order).
  SceneGraph with_positions(std::span<const Position> positions) const;

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;

 private:
  std::size_t d_sem_ = 0;
  std::vector<SceneNode> nodes_;
  std::vector<SceneEdge> edges_;
};

/// Proper or improper rigid motion x -> R x + t.
struct RigidTransform {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Position translation{};

  static RigidTransform identity() { return {}; }
  /// Rotation by `angle` radians about `axis` (normalized internally).
  static RigidTransform from_axis_angle(const Position& axis, double angle, const Position& translation);

  Position apply(const Position& x) const;
  /// Throws TransformError unless R^T R = I within 1e-5 and |det R| = 1 within 1e-5.
  void validate() const;
  double determinant() const;
};

/// (outer o inner)(x) = outer(inner(x)).
RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner);

SceneGraph apply_rigid_transform(const SceneGraph& g, const RigidTransform& t);

/// Scene file text (JSON). Round trip is value-exact.
std::string serialize(const SceneGraph& g);
SceneGraph deserialize(std::string_view text);

}  // namespace layoutret::inline LAYOUTRET_ABI
