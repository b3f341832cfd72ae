#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "layoutret/gallery.hpp"
#include "layoutret/model.hpp"
#include "layoutret/scene_graph.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

/// Relation target: an existing node id, or "previous" for the node placed
/// in the step just before.
inline constexpr std::string_view kPreviousNode = "previous";

struct QueryRelation {
  Relation relation = Relation::Adjacent;
  std::string target;
};

struct AssetQuery {
  ModalityBundle bundle;  // raw modality features
  Position position{};
  std::vector<QueryRelation> relations;
};

struct CompositionStep {
  std::size_t query_index = 0;
  std::size_t region = 0;
  Vector layout;  // e_layout the retrieval was conditioned on
  std::string asset_id;
  real score = 0;
  std::string node_id;

  friend bool operator==(const CompositionStep&, const CompositionStep&) = default;
};

struct CompositionTrace {
  std::vector<CompositionStep> steps;
  SceneGraph final_graph;

  friend bool operator==(const CompositionTrace&, const CompositionTrace&) = default;
};

/// Semantic feature t_i for a retrieved gallery asset.
using FeatureLookup = std::function<Vector(const GalleryEntry&)>;

/// LayoutFree retrieves with the stage-one head and a zero layout; Auto and
/// SceneAware condition on the encoded scene.
struct Retriever {
  const RetrievalModel* model = nullptr;
  const Gallery* gallery = nullptr;
  FeatureLookup features;
  HeadChoice head = HeadChoice::Auto;
  /// Replaces the head's lambda for this retriever (0 gives layout-free
  /// retrieval through the chosen head).
  std::optional<real> lambda_override;
};

/// Same-style and same-function relations are semantic; the rest physical.
EdgeKind edge_kind_for(Relation r);

/// Adds one node for `entry` at `position`, with edges (new -> target) for
/// each relation. Targets must already be resolved to node ids. The input
/// graph is not modified.
SceneGraph place_asset(const SceneGraph& g, const std::string& node_id, const GalleryEntry& entry,
                       Vector feature, const Position& position,
                       const std::vector<QueryRelation>& relations);

/// Retrieves and places one asset per query, re-encoding the layout before
/// every retrieval. New node ids are "obj-<k>".
CompositionTrace compose_scene(const SceneGraph& initial, const std::vector<AssetQuery>& queries,
                               const Retriever& retriever);

struct RegionSchedule {
  std::size_t threads = 0;  // 0: one thread per region
  bool reverse_launch = false;
};

/// Each region is composed sequentially against the initial graph; regions
/// run concurrently and are merged in declared order. Region r > 0 names its
/// nodes "r<r>.obj-<k>".
CompositionTrace compose_regions(const SceneGraph& initial,
                                 const std::vector<std::vector<AssetQuery>>& regions,
                                 const Retriever& retriever, const RegionSchedule& schedule = {});

/// Request file: {"initial_scene": <scene>, "queries": [{"modalities":
/// {"text": [...], "image": [...], "pointcloud": [...]}, "position": [x,y,z],
/// "relations": [{"relation": "on", "target": "n0"}]}], "regions": [[0, 1],
/// [2]]}. `regions` is optional.
struct CompositionRequest {
  SceneGraph initial;
  std::vector<AssetQuery> queries;
  std::vector<std::vector<std::size_t>> regions;
};

CompositionRequest request_from_json(const nlohmann::json& j);
nlohmann::json trace_to_json(const CompositionTrace& trace);

}  // namespace layoutret::inline LAYOUTRET_ABI
