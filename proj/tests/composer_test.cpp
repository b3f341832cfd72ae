#include <gtest/gtest.h>

#include <map>

#include "layoutret/composer.hpp"
#include "layoutret/errors.hpp"
#include "support.hpp"

using namespace layoutret;

namespace {

struct Fixture {
  RetrievalModel model;
  Gallery gallery;
  std::map<std::string, Vector> features;
  Retriever retriever;

  explicit Fixture(std::uint64_t seed, std::size_t assets = 40) {
    ModelConfig c;
    c.sem_dim = 6;
    c.dim = 8;
    c.width = 8;
    c.relation_dim = 4;
    c.layout_layers = 2;
    model = RetrievalModel::init(c, seed);
    model.scene = model.query;
    model.scene->set_lambda(3);  // layout strongly steers retrieval
    Rng rng(seed + 100);
    std::vector<AssetRecord> records;
    for (std::size_t i = 0; i < assets; ++i) {
      const std::string id = "g" + std::to_string(100 + i);
      records.push_back({id, testsupport::random_bundle(rng, 6), "cat" + std::to_string(i % 4),
                         "sty" + std::to_string(i % 3)});
      features[id] = testsupport::random_vector(rng, 6);
    }
    gallery = build_gallery(records, model.gallery);
    retriever = {&model, &gallery, [this](const GalleryEntry& e) { return features.at(e.asset_id); },
                 HeadChoice::SceneAware, std::nullopt};
  }
};

std::vector<AssetQuery> random_queries(Rng& rng, std::size_t n) {
  std::vector<AssetQuery> qs;
  for (std::size_t i = 0; i < n; ++i) {
    AssetQuery q;
    q.bundle = testsupport::random_bundle(rng, 6, 1 + rng.below(7));
    q.position = {4 * rng.uniform(), 4 * rng.uniform(), 0};
    if (i > 0) q.relations.push_back({Relation::Adjacent, std::string(kPreviousNode)});
    qs.push_back(std::move(q));
  }
  return qs;
}

}  // namespace

TEST(ComposeScene, EmptyQueryListReturnsInitialGraph) {
  Fixture f(1);
  Rng rng(1);
  const auto g = testsupport::random_graph(rng, 3, 6);
  const auto t = compose_scene(g, {}, f.retriever);
  EXPECT_TRUE(t.steps.empty());
  EXPECT_EQ(t.final_graph, g);
}

TEST(ComposeScene, FirstStepOnEmptySceneIsLayoutFree) {
  Fixture f(2);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto qs = random_queries(rng, 1);
    const auto t = compose_scene(SceneGraph(6), qs, f.retriever);
    ASSERT_EQ(t.steps.size(), 1u);
    EXPECT_EQ(t.steps[0].layout, Vector(8, 0));
    const auto free = f.gallery.topk(f.model.query.compose_query(qs[0].bundle, {}), 1);
    EXPECT_EQ(t.steps[0].asset_id, free[0].asset_id);
    EXPECT_EQ(t.steps[0].score, free[0].score);
  }
}

TEST(ComposeScene, StepsMatchFromScratchRecomputation) {
  Fixture f(3);
  Rng rng(3);
  std::size_t layout_changed_choice = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto initial = testsupport::random_graph(rng, 2, 6, 0.5, 2.0);
    const auto qs = random_queries(rng, 3);
    const auto trace = compose_scene(initial, qs, f.retriever);
    ASSERT_EQ(trace.steps.size(), 3u);

    // Oracle: rebuild the graph by hand from the trace's choices and recompute
    // every embedding and search from scratch.
    std::vector<SceneNode> nodes = initial.nodes();
    std::vector<SceneEdge> edges = initial.edges();
    for (std::size_t i = 0; i < 3; ++i) {
      const auto g = SceneGraph::from_parts(6, nodes, edges);
      ASSERT_EQ(trace.steps[i].layout, f.model.layout.encode(g).embedding);
      const auto q = f.model.scene->compose_query(qs[i].bundle, f.model.layout.encode(g).embedding);
      const auto hit = f.gallery.topk(q, 1)[0];
      EXPECT_EQ(trace.steps[i].asset_id, hit.asset_id);
      EXPECT_EQ(trace.steps[i].score, hit.score);
      layout_changed_choice +=
          hit.asset_id != f.gallery.topk(f.model.query.compose_query(qs[i].bundle, {}), 1)[0].asset_id;

      const std::string id = "obj-" + std::to_string(i + 1);
      EXPECT_EQ(trace.steps[i].node_id, id);
      SceneNode n;
      n.id = id;
      n.position = qs[i].position;
      n.feature = f.features.at(hit.asset_id);
      n.asset_id = hit.asset_id;
      const auto* entry = f.gallery.find(hit.asset_id);
      n.category = entry->category;
      n.style = entry->style;
      nodes.push_back(n);
      if (i > 0) edges.push_back({id, "obj-" + std::to_string(i), EdgeKind::Physical, Relation::Adjacent});
    }
    EXPECT_EQ(trace.final_graph, SceneGraph::from_parts(6, nodes, edges));
    EXPECT_EQ(trace.final_graph.size(), initial.size() + 3);
  }
  // The oracle comparison is only meaningful if the layout actually matters.
  EXPECT_GT(layout_changed_choice, 0u);
}

TEST(ComposeScene, LayoutFreeHeadIgnoresScene) {
  Fixture f(4);
  f.retriever.head = HeadChoice::LayoutFree;
  Rng rng(4);
  const auto initial = testsupport::random_graph(rng, 4, 6);
  const auto qs = random_queries(rng, 3);
  const auto t = compose_scene(initial, qs, f.retriever);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(t.steps[i].layout, Vector(8, 0));
    EXPECT_EQ(t.steps[i].asset_id, f.gallery.topk(f.model.query.compose_query(qs[i].bundle, {}), 1)[0].asset_id);
  }
}

TEST(ComposeScene, LambdaOverrideZeroMatchesLayoutFreeRanking) {
  Fixture f(5);
  f.retriever.lambda_override = real(0);
  f.model.scene = f.model.query;  // same fusion, so only lambda differs
  Rng rng(5);
  const auto initial = testsupport::random_graph(rng, 4, 6);
  const auto qs = random_queries(rng, 3);
  const auto t = compose_scene(initial, qs, f.retriever);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(t.steps[i].asset_id, f.gallery.topk(f.model.query.compose_query(qs[i].bundle, {}), 1)[0].asset_id);
  }
}

TEST(ComposeScene, Errors) {
  Fixture f(6);
  Rng rng(6);
  auto qs = random_queries(rng, 2);
  qs[0].relations.push_back({Relation::On, std::string(kPreviousNode)});
  EXPECT_THROW(compose_scene(SceneGraph(6), qs, f.retriever), CompositionError);
  qs = random_queries(rng, 2);
  qs[1].relations = {{Relation::On, "nowhere"}};
  try {
    compose_scene(SceneGraph(6), qs, f.retriever);
    FAIL();
  } catch (const CompositionError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
  const Gallery empty(8);
  Retriever r = f.retriever;
  r.gallery = &empty;
  EXPECT_THROW(compose_scene(SceneGraph(6), random_queries(rng, 1), r), RetrievalError);
}

TEST(PlaceAsset, Examples) {
  const GalleryEntry entry{"g1", "table", "oak", {1, 0}};
  const SceneGraph empty(2);
  const auto one = place_asset(empty, "obj-1", entry, {real(0.5), real(0.5)}, {1, 2, 3}, {});
  EXPECT_TRUE(empty.empty());
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(one.edges().empty());
  EXPECT_EQ(one.nodes()[0].asset_id, "g1");
  EXPECT_EQ(one.nodes()[0].style, "oak");

  const auto two = place_asset(one, "obj-2", entry, {0, 1}, {1, 2, 4},
                               {{Relation::On, "obj-1"}, {Relation::SameStyle, "obj-1"}});
  ASSERT_EQ(two.size(), 2u);
  EXPECT_NE(two.nodes()[0].id, two.nodes()[1].id);
  const std::vector<SceneEdge> expected{{"obj-2", "obj-1", EdgeKind::Physical, Relation::On},
                                        {"obj-2", "obj-1", EdgeKind::Semantic, Relation::SameStyle}};
  EXPECT_EQ(two.edges(), expected);
  EXPECT_THROW(place_asset(one, "obj-3", entry, {0, 1}, {}, {{Relation::On, "ghost"}}), GraphError);
}

TEST(ComposeRegions, SingleRegionEqualsComposeScene) {
  Fixture f(7);
  Rng rng(7);
  const auto initial = testsupport::random_graph(rng, 3, 6);
  const auto qs = random_queries(rng, 4);
  EXPECT_EQ(compose_regions(initial, {qs}, f.retriever), compose_scene(initial, qs, f.retriever));
}

TEST(ComposeRegions, EveryRegionStartsFromTheInitialSnapshot) {
  Fixture f(8);
  Rng rng(8);
  const auto initial = testsupport::random_graph(rng, 3, 6);
  const auto a = random_queries(rng, 1), b = random_queries(rng, 1);
  const auto t = compose_regions(initial, {a, b}, f.retriever);
  ASSERT_EQ(t.steps.size(), 2u);
  const auto snapshot = f.model.layout.encode(initial).embedding;
  EXPECT_EQ(t.steps[0].layout, snapshot);
  EXPECT_EQ(t.steps[1].layout, snapshot);
  EXPECT_EQ(t.steps[0].region, 0u);
  EXPECT_EQ(t.steps[1].region, 1u);
  EXPECT_EQ(t.steps[1].node_id, "r1.obj-1");
  EXPECT_EQ(t.final_graph.size(), initial.size() + 2);
}

TEST(ComposeRegions, IndependentOfSchedule) {
  Fixture f(9);
  Rng rng(9);
  const auto initial = testsupport::random_graph(rng, 3, 6);
  const std::vector<std::vector<AssetQuery>> regions{random_queries(rng, 2), random_queries(rng, 2),
                                                     random_queries(rng, 3)};
  const auto base = compose_regions(initial, regions, f.retriever, {1, false});
  for (RegionSchedule s : {RegionSchedule{0, false}, RegionSchedule{0, true}, RegionSchedule{2, true},
                           RegionSchedule{1, true}}) {
    for (int rep = 0; rep < 5; ++rep) EXPECT_EQ(compose_regions(initial, regions, f.retriever, s), base);
  }
}

TEST(CompositionRequest, ParsesAndReportsLocations) {
  const auto j = nlohmann::json::parse(R"({
    "initial_scene": {"d_sem": 1, "edges": [],
      "nodes": [{"id": "n0", "position": [0, 0, 0], "feature": [1], "category": "c", "style": "s"}]},
    "queries": [
      {"modalities": {"text": [1, 2]}, "position": [1, 0, 0], "relations": [{"relation": "on", "target": "n0"}]},
      {"modalities": {"image": [3, 4], "pointcloud": [5, 6]}, "position": [2, 0, 0]}],
    "regions": [[1], [0]]})");
  const auto req = request_from_json(j);
  EXPECT_EQ(req.initial.size(), 1u);
  ASSERT_EQ(req.queries.size(), 2u);
  EXPECT_EQ(req.queries[0].bundle.presence(), 0b001u);
  EXPECT_EQ(req.queries[1].bundle.presence(), 0b110u);
  EXPECT_EQ(req.queries[0].relations[0].relation, Relation::On);
  EXPECT_EQ(req.regions, (std::vector<std::vector<std::size_t>>{{1}, {0}}));

  auto bad = j;
  bad["queries"][1]["position"] = {1, 2};
  try {
    request_from_json(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("/queries/1"), std::string::npos) << e.what();
  }
  bad = j;
  bad["regions"] = {{0}, {0}};
  EXPECT_THROW(request_from_json(bad), ParseError);
  bad = j;
  bad["queries"][0]["modalities"] = nlohmann::json::object();
  EXPECT_THROW(request_from_json(bad), ParseError);
}

TEST(CompositionTraceJson, CarriesStepsAndGraph) {
  Fixture f(10);
  Rng rng(10);
  const auto t = compose_scene(SceneGraph(6), random_queries(rng, 2), f.retriever);
  const auto j = trace_to_json(t);
  ASSERT_EQ(j["steps"].size(), 2u);
  EXPECT_EQ(j["steps"][1]["node_id"], "obj-2");
  EXPECT_EQ(j["final_graph"]["nodes"].size(), 2u);
}
