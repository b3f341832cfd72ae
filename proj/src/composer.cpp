#include "layoutret/composer.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "layoutret/errors.hpp"
#include "layoutret/scene_json.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

std::string fresh_id(const SceneGraph& g, const std::string& prefix, std::size_t& counter) {
  for (;;) {
    std::string id = prefix + "obj-" + std::to_string(counter++);
    if (!g.index_of(id)) return id;
  }
}

// Sequential composition of one query list against its own copy of the
// graph. Shared by compose_scene and every region of compose_regions.
void run_queries(SceneGraph g, const std::vector<AssetQuery>& queries, const Retriever& r,
                 std::size_t region, const std::string& prefix, CompositionTrace& out) {
  if (!r.model || !r.gallery || !r.features) throw ConfigError("retriever is not fully configured");
  if (r.gallery->empty()) throw RetrievalError("gallery is empty");
  std::optional<Tower> scene_head, free_head;
  auto head_for = [&](bool has_layout) -> const Tower& {
    const Tower& base = r.model->head(r.head, has_layout);
    if (!r.lambda_override) return base;
    auto& slot = (&base == &r.model->query) ? free_head : scene_head;
    if (!slot) {
      slot = base;
      slot->set_lambda(*r.lambda_override);
    }
    return *slot;
  };

  std::size_t counter = 1;
  std::string previous;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& q = queries[i];
    const std::string step = "step " + std::to_string(i + 1) +
                             (prefix.empty() ? "" : " of region " + std::to_string(region));
    std::vector<QueryRelation> resolved = q.relations;
    for (auto& rel : resolved) {
      if (rel.target == kPreviousNode) {
        if (previous.empty()) {
          throw CompositionError(step + ": 'previous' has no earlier placement to refer to");
        }
        rel.target = previous;
      } else if (!g.index_of(rel.target)) {
        throw CompositionError(step + ": relation target '" + rel.target + "' is not in the scene");
      }
    }

    const Vector layout = r.head == HeadChoice::LayoutFree
                              ? Vector(r.model->config.dim, real(0))
                              : r.model->layout.encode(g).embedding;
    const Tower& head = head_for(!g.empty());
    Vector query;
    try {
      query = head.compose_query(q.bundle, layout);
    } catch (const QueryError& e) {
      throw CompositionError(step + ": " + e.what());
    }
    const auto hits = r.gallery->topk(query, 1);
    const GalleryEntry& entry = r.gallery->entries()[hits.front().index];

    const std::string node_id = fresh_id(g, prefix, counter);
    g = place_asset(g, node_id, entry, r.features(entry), q.position, resolved);
    out.steps.push_back({i, region, layout, entry.asset_id, hits.front().score, node_id});
    previous = node_id;
  }
  out.final_graph = std::move(g);
}

}  // namespace

EdgeKind edge_kind_for(Relation r) {
  return (r == Relation::SameStyle || r == Relation::SameFunction) ? EdgeKind::Semantic
                                                                   : EdgeKind::Physical;
}

SceneGraph place_asset(const SceneGraph& g, const std::string& node_id, const GalleryEntry& entry,
                       Vector feature, const Position& position,
                       const std::vector<QueryRelation>& relations) {
  SceneNode node;
  node.id = node_id;
  node.position = position;
  node.feature = std::move(feature);
  node.asset_id = entry.asset_id;
  node.category = entry.category;
  node.style = entry.style;
  std::vector<SceneEdge> edges;
  for (const auto& rel : relations) {
    edges.push_back({node_id, rel.target, edge_kind_for(rel.relation), rel.relation});
  }
  return g.with_node(std::move(node), edges);
}

CompositionTrace compose_scene(const SceneGraph& initial, const std::vector<AssetQuery>& queries,
                               const Retriever& retriever) {
  CompositionTrace trace;
  trace.final_graph = initial;
  if (queries.empty()) return trace;
  run_queries(initial, queries, retriever, 0, "", trace);
  return trace;
}

CompositionTrace compose_regions(const SceneGraph& initial,
                                 const std::vector<std::vector<AssetQuery>>& regions,
                                 const Retriever& retriever, const RegionSchedule& schedule) {
  const std::size_t n = regions.size();
  std::vector<CompositionTrace> partial(n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::size_t> launch(n);
  for (std::size_t r = 0; r < n; ++r) launch[r] = schedule.reverse_launch ? n - 1 - r : r;

  auto work = [&](std::size_t r) {
    try {
      partial[r].final_graph = initial;
      if (!regions[r].empty()) {
        run_queries(initial, regions[r], retriever, r, r == 0 ? "" : "r" + std::to_string(r) + ".",
                    partial[r]);
      }
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };
  const std::size_t threads = schedule.threads == 0 ? n : std::min(schedule.threads, n);
  if (threads <= 1) {
    for (std::size_t r : launch) work(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n; k = next++) work(launch[k]);
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Merge in declared order: each region contributes the nodes and edges it
  // added on top of the initial graph.
  CompositionTrace out;
  std::vector<SceneNode> nodes = initial.nodes();
  std::vector<SceneEdge> edges = initial.edges();
  for (std::size_t r = 0; r < n; ++r) {
    const auto& g = partial[r].final_graph;
    nodes.insert(nodes.end(), g.nodes().begin() + static_cast<std::ptrdiff_t>(initial.size()),
                 g.nodes().end());
    edges.insert(edges.end(), g.edges().begin() + static_cast<std::ptrdiff_t>(initial.edges().size()),
                 g.edges().end());
    out.steps.insert(out.steps.end(), partial[r].steps.begin(), partial[r].steps.end());
  }
  out.final_graph = SceneGraph::from_parts(initial.d_sem(), std::move(nodes), std::move(edges));
  return out;
}

CompositionRequest request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("composition request must be a JSON object at /");
  CompositionRequest req;
  if (!j.contains("initial_scene")) throw ParseError("missing 'initial_scene' at /");
  req.initial = scene_from_json(j["initial_scene"], "/initial_scene");
  if (!j.contains("queries") || !j["queries"].is_array()) {
    throw ParseError("missing or non-array 'queries' at /");
  }
  static constexpr const char* kSlotNames[kModalityCount] = {"text", "image", "pointcloud"};
  for (std::size_t i = 0; i < j["queries"].size(); ++i) {
    const auto& jq = j["queries"][i];
    const std::string at = "/queries/" + std::to_string(i);
    AssetQuery q;
    try {
      const auto& mods = jq.at("modalities");
      for (std::size_t m = 0; m < kModalityCount; ++m) {
        if (mods.contains(kSlotNames[m]) && !mods[kSlotNames[m]].is_null()) {
          q.bundle.slots[m] = mods[kSlotNames[m]].get<Vector>();
        }
      }
      const auto pos = jq.at("position").get<std::vector<double>>();
      if (pos.size() != 3) throw ParseError("position must have 3 entries at " + at);
      q.position = {pos[0], pos[1], pos[2]};
      if (jq.contains("relations")) {
        for (const auto& jr : jq["relations"]) {
          const auto rel = parse_relation(jr.at("relation").get<std::string>());
          if (!rel) throw ParseError("unknown relation label at " + at);
          q.relations.push_back({*rel, jr.at("target").get<std::string>()});
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("bad query at " + at + ": " + e.what());
    }
    if (q.bundle.count() == 0) throw ParseError("query has no modalities at " + at);
    req.queries.push_back(std::move(q));
  }
  if (j.contains("regions")) {
    std::vector<bool> used(req.queries.size(), false);
    try {
      for (const auto& jr : j["regions"]) {
        std::vector<std::size_t> region = jr.get<std::vector<std::size_t>>();
        for (std::size_t qi : region) {
          if (qi >= req.queries.size() || used[qi]) {
            throw ParseError("region query index " + std::to_string(qi) +
                             " is out of range or repeated at /regions");
          }
          used[qi] = true;
        }
        req.regions.push_back(std::move(region));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad 'regions' at /regions: ") + e.what());
    }
  }
  return req;
}

nlohmann::json trace_to_json(const CompositionTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"query", s.query_index},
                     {"region", s.region},
                     {"asset_id", s.asset_id},
                     {"score", s.score},
                     {"node_id", s.node_id},
                     {"layout", s.layout}});
  }
  return {{"steps", std::move(steps)}, {"final_graph", scene_to_json(trace.final_graph)}};
}

}  // namespace layoutret::inline LAYOUTRET_ABI
