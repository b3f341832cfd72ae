#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "layoutret/binary_io.hpp"
#include "layoutret/errors.hpp"
#include "layoutret/experiments.hpp"
#include "layoutret/scene_json.hpp"

using namespace layoutret;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::Usage:
      return kExitUsage;
    case ErrorClass::Data:
      return kExitData;
    case ErrorClass::Numeric:
      return kExitNumeric;
  }
  return kExitData;
}

nlohmann::json read_json(const std::string& path) { return parse_json_text(read_file(path), path); }

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

SynthWorld load_world(const std::string& path) {
  if (path.empty()) return generate_world(WorldConfig{});
  return world_from_manifest(read_json(path));
}

template <class T, class Parse>
T parse_flag(const std::string& flag, const std::string& value, Parse parse) {
  const auto v = parse(value);
  if (!v) throw ConfigError("invalid value '" + value + "' for " + flag);
  return *v;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct Common {
  std::string world;
  std::string checkpoint;
  std::string gallery;
  std::string out;
  std::uint64_t seed = 7;
  std::size_t threads = 1;
};

// gen-world

struct GenWorldArgs {
  WorldConfig world;
  std::string out;
  std::size_t scenes = 0;
  std::string scene_dir;
};

void run_gen_world(const GenWorldArgs& a) {
  a.world.validate();
  if (a.scenes > 0 && a.scene_dir.empty()) throw ConfigError("--scenes needs --scene-dir");
  const SynthWorld world = generate_world(a.world);
  write_text(a.out, world_manifest(world).dump(2) + "\n");
  if (a.scenes > 0) {
    std::filesystem::create_directories(a.scene_dir);
    for (const auto& s : generate_scenes(world, a.world.seed, a.scenes, Split::Heldout)) {
      nlohmann::json j = scene_to_json(s.context);
      write_file(std::filesystem::path(a.scene_dir) / (s.scene_id + ".json"), j.dump(2) + "\n");
    }
  }
}

// build-gallery

void run_build_gallery(const Common& c, const std::string& split) {
  if (c.checkpoint.empty()) throw ConfigError("build-gallery needs --checkpoint");
  if (c.out.empty()) throw ConfigError("build-gallery needs --out");
  const Split s = split == "train" ? Split::Train : Split::Heldout;
  const SynthWorld world = load_world(c.world);
  const TrainState state = load_state(c.checkpoint);
  const Gallery g = build_gallery(asset_records(world, s), state.model.gallery);
  save_gallery(g, c.out);
  std::cout << "gallery: " << g.size() << " assets, dim " << g.dim() << "\n";
}

// train

struct TrainArgs {
  int stage = 1;
  std::size_t steps = 0;
  std::size_t batch_size = 32;
  std::string fusion = "attention";
  std::string missing = "mask-token";
  double modality_dropout = 0.3;
  double scene_dropout = 0.3;
  std::optional<double> lambda_fixed;
  std::string head_policy = "two-heads";
  std::string metrics;
  std::string manifest;
  std::string checkpoint_dir;
  std::size_t checkpoint_every = 200;
};

void run_train(const Common& c, const TrainArgs& a) {
  if (a.stage != 1 && a.stage != 2) throw ConfigError("--stage must be 1 or 2");
  if (c.out.empty()) throw ConfigError("train needs --out");
  if (a.stage == 2 && c.checkpoint.empty()) throw ConfigError("stage 2 needs --checkpoint from stage 1");
  const Benchmark bench = default_benchmark();
  TrainConfig config = a.stage == 1 ? bench.stage1 : bench.stage2;
  if (a.steps > 0) config.steps = a.steps;
  config.batch_size = a.batch_size;
  config.fusion = parse_flag<FusionVariant>("--fusion", a.fusion, parse_fusion_variant);
  config.missing = parse_flag<MissingPolicy>("--missing", a.missing, parse_missing_policy);
  config.modality_dropout = a.modality_dropout;
  config.scene_dropout = a.scene_dropout;
  if (a.lambda_fixed) config.lambda_fixed = real(*a.lambda_fixed);
  config.head_policy = parse_flag<HeadPolicy>("--head-policy", a.head_policy, parse_head_policy);
  config.seed = c.seed;
  config.threads = c.threads;
  config.checkpoint_dir = a.checkpoint_dir;
  config.checkpoint_every = a.checkpoint_every;
  config.validate();

  const SynthWorld world = load_world(c.world);
  std::vector<std::pair<std::uint64_t, double>> losses;
  const StepCallback record = [&](std::uint64_t step, double loss) { losses.emplace_back(step, loss); };
  TrainState state;
  if (a.stage == 1) {
    state = stage1_pretrain(config, world, init_state(config, world), record);
  } else {
    state = stage2_finetune(config, world, training_scenes(world, config), load_state(c.checkpoint), record);
  }
  save_state(state, c.out);

  const Gallery gallery = heldout_gallery(state.model, world);
  const auto full = evaluate_retrieval(state.model, world, gallery, all_patterns().front());
  std::optional<double> style;
  if (state.model.scene) {
    style = style_consistency(state.model, world, gallery, benchmark_scenes(world, bench.style), bench.style);
  }
  if (!a.metrics.empty()) {
    std::ostringstream csv;
    csv << "step,loss,r1,r5,style_consistency\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
      csv << losses[i].first << "," << fmt(losses[i].second);
      if (i + 1 == losses.size()) {
        csv << "," << fmt(full.r1) << "," << fmt(full.r5) << "," << (style ? fmt(*style) : "");
      } else {
        csv << ",,,";
      }
      csv << "\n";
    }
    write_text(a.metrics, csv.str());
  }
  nlohmann::json manifest = run_manifest(config, state);
  manifest["world"] = world_manifest(world);
  manifest["metrics"] = {{"r1", full.r1}, {"r5", full.r5}};
  if (style) manifest["metrics"]["style_consistency"] = *style;
  if (!a.manifest.empty()) write_text(a.manifest, manifest.dump(2) + "\n");
  std::cout << "stage " << a.stage << ": " << losses.size() << " steps";
  if (!losses.empty()) std::cout << ", final loss " << fmt(losses.back().second);
  std::cout << ", R@1 " << fmt(full.r1) << ", R@5 " << fmt(full.r5);
  if (style) std::cout << ", style consistency " << fmt(*style);
  std::cout << "\n";
}

// query

struct QueryArgs {
  std::string asset;
  std::string category;
  std::string modalities = "t,i,p";
  std::string scene;
  std::string head = "auto";
  std::size_t k = 5;
};

void run_query(const Common& c, const QueryArgs& a) {
  if (c.checkpoint.empty() || c.gallery.empty()) throw ConfigError("query needs --checkpoint and --gallery");
  if (a.asset.empty() == a.category.empty()) throw ConfigError("query needs exactly one of --asset or --category");
  const unsigned mask = parse_flag<unsigned>("--modalities", a.modalities, parse_modalities);
  const HeadChoice choice = parse_flag<HeadChoice>("--head", a.head, parse_head_choice);
  if (a.k == 0) throw ConfigError("--k must be positive");

  const SynthWorld world = load_world(c.world);
  ModalityBundle bundle;
  if (!a.asset.empty()) {
    const SynthAsset* asset = world.find(a.asset);
    if (!asset) throw QueryError("unknown asset '" + a.asset + "'");
    bundle = encode_modalities(world, *asset).restricted(mask);
  } else {
    const auto cat = parse_category(a.category, world.config.categories);
    if (!cat) throw QueryError("unknown category '" + a.category + "'");
    bundle = describe_category(world, *cat);
  }
  const TrainState state = load_state(c.checkpoint);
  const Gallery gallery = load_gallery(c.gallery);
  const RetrievalModel& model = state.model;

  std::optional<SceneGraph> scene;
  if (!a.scene.empty()) scene = scene_from_json(read_json(a.scene));
  const bool has_layout = scene && !scene->empty();
  Vector layout;
  if (has_layout && choice != HeadChoice::LayoutFree) layout = model.layout.encode(*scene).embedding;
  const Vector q = model.head(choice, has_layout).compose_query(bundle, layout);
  std::cout << "rank\tasset_id\tscore\tcategory\tstyle\n";
  std::size_t rank = 1;
  for (const auto& hit : gallery.topk(q, a.k)) {
    const auto& e = gallery.entries()[hit.index];
    std::cout << rank++ << "\t" << e.asset_id << "\t" << fmt(hit.score) << "\t" << e.category << "\t" << e.style
              << "\n";
  }
}

// compose

// Queries may name a world asset ({"asset": id, "keep": "t,p"}) or a
// category ({"category": "c03"}) instead of listing raw modality vectors.
nlohmann::json expand_request(nlohmann::json request, const SynthWorld& world) {
  if (!request.is_object() || !request.contains("queries") || !request["queries"].is_array()) {
    return request;
  }
  static constexpr const char* kSlotNames[kModalityCount] = {"text", "image", "pointcloud"};
  for (std::size_t i = 0; i < request["queries"].size(); ++i) {
    auto& q = request["queries"][i];
    const std::string at = "/queries/" + std::to_string(i);
    if (!q.is_object() || q.contains("modalities")) continue;
    ModalityBundle bundle;
    if (q.contains("asset")) {
      const SynthAsset* asset = world.find(q["asset"].get<std::string>());
      if (!asset) throw ParseError("unknown asset at " + at);
      unsigned mask = kAllModalities;
      if (q.contains("keep")) {
        const auto m = parse_modalities(q["keep"].get<std::string>());
        if (!m) throw ParseError("bad 'keep' list at " + at);
        mask = *m;
      }
      bundle = encode_modalities(world, *asset).restricted(mask);
    } else if (q.contains("category")) {
      const auto cat = parse_category(q["category"].get<std::string>(), world.config.categories);
      if (!cat) throw ParseError("unknown category at " + at);
      bundle = describe_category(world, *cat);
    } else {
      continue;
    }
    nlohmann::json mods = nlohmann::json::object();
    for (std::size_t m = 0; m < kModalityCount; ++m) {
      if (bundle.slots[m]) mods[kSlotNames[m]] = *bundle.slots[m];
    }
    q["modalities"] = mods;
  }
  return request;
}

void run_compose(const Common& c, const std::string& request_path, const std::string& head) {
  if (c.checkpoint.empty() || c.gallery.empty()) throw ConfigError("compose needs --checkpoint and --gallery");
  if (request_path.empty()) throw ConfigError("compose needs --request");
  const HeadChoice choice = parse_flag<HeadChoice>("--head", head, parse_head_choice);
  const SynthWorld world = load_world(c.world);
  nlohmann::json raw;
  try {
    raw = expand_request(read_json(request_path), world);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad composition request: ") + e.what());
  }
  const CompositionRequest request = request_from_json(raw);
  const TrainState state = load_state(c.checkpoint);
  const Gallery gallery = load_gallery(c.gallery);
  const Retriever retriever{&state.model, &gallery, world_feature_lookup(world), choice, std::nullopt};
  CompositionTrace trace;
  if (request.regions.empty()) {
    trace = compose_scene(request.initial, request.queries, retriever);
  } else {
    std::vector<std::vector<AssetQuery>> regions;
    for (const auto& r : request.regions) {
      auto& region = regions.emplace_back();
      for (std::size_t i : r) region.push_back(request.queries.at(i));
    }
    trace = compose_regions(request.initial, regions, retriever, {c.threads, false});
  }
  write_text(c.out, trace_to_json(trace).dump(2) + "\n");
}

// eval

void run_eval(const Common& c, const std::string& head, std::size_t scenes) {
  if (c.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  const HeadChoice choice = parse_flag<HeadChoice>("--head", head, parse_head_choice);
  const SynthWorld world = load_world(c.world);
  const TrainState state = load_state(c.checkpoint);
  const Gallery gallery = load_gallery(c.gallery);
  std::ostringstream csv;
  csv << "pattern,queries,r1,r5\n";
  for (unsigned p : all_patterns()) {
    const auto m = evaluate_retrieval(state.model, world, gallery, p, choice);
    csv << pattern_name(p) << "," << m.queries << "," << fmt(m.r1) << "," << fmt(m.r5) << "\n";
  }
  if (state.model.scene && scenes > 0) {
    StyleBenchmarkConfig style;
    style.scenes = scenes;
    csv << "style_consistency," << scenes << ","
        << fmt(style_consistency(state.model, world, gallery, benchmark_scenes(world, style), style)) << ",\n";
  }
  write_text(c.out, csv.str());
}

// ablate

void run_ablate(const Common& c, const std::string& grid, std::size_t steps, std::size_t stage2_steps) {
  const auto grids = ablation_grids();
  if (std::find(grids.begin(), grids.end(), grid) == grids.end()) {
    throw ConfigError("unknown grid '" + grid + "'");
  }
  Benchmark bench = default_benchmark();
  if (steps > 0) bench.stage1.steps = steps;
  if (stage2_steps > 0) bench.stage2.steps = stage2_steps;
  for (TrainConfig* t : {&bench.stage1, &bench.stage2}) {
    t->seed = c.seed;
    t->threads = c.threads;
  }
  const SynthWorld world = load_world(c.world);
  std::ostringstream csv;
  csv << ablation_csv_header() << "\n";
  for (const auto& row : run_ablation(grid, world, bench)) csv << ablation_csv_row(row) << "\n";
  write_text(c.out, csv.str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layout-aware multimodal asset retrieval"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool world, bool checkpoint, bool gallery) {
    if (world) sub->add_option("--world", common.world, "World manifest (default world if omitted)");
    if (checkpoint) sub->add_option("--checkpoint", common.checkpoint, "Training state checkpoint");
    if (gallery) sub->add_option("--gallery", common.gallery, "Gallery file");
    sub->add_option("--out", common.out, "Output path (stdout if omitted)");
    sub->add_option("--seed", common.seed, "Random seed");
    sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  GenWorldArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-world", "Generate a synthetic world manifest");
  gen_cmd->add_option("--seed", gen.world.seed, "World seed");
  gen_cmd->add_option("--train-assets", gen.world.train_assets);
  gen_cmd->add_option("--heldout-assets", gen.world.heldout_assets);
  gen_cmd->add_option("--categories", gen.world.categories);
  gen_cmd->add_option("--styles", gen.world.styles);
  gen_cmd->add_option("--out", gen.out, "Manifest path (stdout if omitted)");
  gen_cmd->add_option("--scenes", gen.scenes, "Also write this many held-out scene files");
  gen_cmd->add_option("--scene-dir", gen.scene_dir);

  std::string split = "heldout";
  auto* gallery_cmd = app.add_subcommand("build-gallery", "Embed a world split with the gallery tower");
  add_common(gallery_cmd, true, true, false);
  gallery_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "heldout"}));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run one training stage");
  add_common(train_cmd, true, true, false);
  train_cmd->add_option("--stage", train.stage)->required();
  train_cmd->add_option("--steps", train.steps, "Steps (stage default if omitted)");
  train_cmd->add_option("--batch-size", train.batch_size);
  train_cmd->add_option("--fusion", train.fusion, "mean, mlp, masked-mlp, gated or attention");
  train_cmd->add_option("--missing", train.missing, "mask-token or zero-pad");
  train_cmd->add_option("--modality-dropout", train.modality_dropout);
  train_cmd->add_option("--scene-dropout", train.scene_dropout);
  train_cmd->add_option("--lambda-fixed", train.lambda_fixed);
  train_cmd->add_option("--head-policy", train.head_policy, "two-heads or shared-head");
  train_cmd->add_option("--metrics", train.metrics, "Metrics CSV path");
  train_cmd->add_option("--manifest", train.manifest, "Run manifest JSON path");
  train_cmd->add_option("--checkpoint-dir", train.checkpoint_dir, "Periodic checkpoint directory");
  train_cmd->add_option("--checkpoint-every", train.checkpoint_every);

  QueryArgs query;
  auto* query_cmd = app.add_subcommand("query", "Retrieve the top-k assets for one query");
  add_common(query_cmd, true, true, true);
  query_cmd->add_option("--asset", query.asset, "Query with this world asset's modalities");
  query_cmd->add_option("--category", query.category, "Query with a category description");
  query_cmd->add_option("--modalities", query.modalities, "Subset such as t,i,p");
  query_cmd->add_option("--scene", query.scene, "Scene JSON for layout context");
  query_cmd->add_option("--head", query.head, "auto, layout-free or scene-aware");
  query_cmd->add_option("--k", query.k);

  std::string request, compose_head = "auto";
  auto* compose_cmd = app.add_subcommand("compose", "Compose assets into a scene");
  add_common(compose_cmd, true, true, true);
  compose_cmd->add_option("--request", request, "Composition request JSON")->required();
  compose_cmd->add_option("--head", compose_head, "auto, layout-free or scene-aware");

  std::string eval_head = "layout-free";
  std::size_t eval_scenes = 100;
  auto* eval_cmd = app.add_subcommand("eval", "Retrieval metrics on the held-out split");
  add_common(eval_cmd, true, true, false);
  eval_cmd->add_option("--gallery", common.gallery, "Gallery file")->required();
  eval_cmd->add_option("--head", eval_head, "auto, layout-free or scene-aware");
  eval_cmd->add_option("--scenes", eval_scenes, "Scenes for the style benchmark");

  std::string grid;
  std::size_t ablate_steps = 0, ablate_stage2_steps = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate one ablation grid");
  add_common(ablate_cmd, true, false, false);
  ablate_cmd->add_option("--grid", grid, "dropout, fusion, layout or padding")->required();
  ablate_cmd->add_option("--steps", ablate_steps, "Stage-one steps per setting");
  ablate_cmd->add_option("--stage2-steps", ablate_stage2_steps, "Stage-two steps for the layout grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) run_gen_world(gen);
    else if (*gallery_cmd) run_build_gallery(common, split);
    else if (*train_cmd) run_train(common, train);
    else if (*query_cmd) run_query(common, query);
    else if (*compose_cmd) run_compose(common, request, compose_head);
    else if (*eval_cmd) run_eval(common, eval_head, eval_scenes);
    else if (*ablate_cmd) run_ablate(common, grid, ablate_steps, ablate_stage2_steps);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
