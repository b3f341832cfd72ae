#include "layoutret/experiments.hpp"

#include <algorithm>
#include <cstdio>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

constexpr std::uint64_t kSceneSeedOffset = 1000;

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

TrainState train_stage1(const SynthWorld& world, const TrainConfig& config) {
  return stage1_pretrain(config, world, init_state(config, world));
}

}  // namespace

Benchmark default_benchmark() {
  Benchmark b;
  b.stage2.stage = Stage::Two;
  b.stage2.steps = 1000;
  return b;
}

std::vector<SynthScene> training_scenes(const SynthWorld& world, const TrainConfig& stage2) {
  return generate_scenes(world, stage2.seed + kSceneSeedOffset, stage2.stage2_scenes, Split::Train);
}

std::vector<SynthScene> benchmark_scenes(const SynthWorld& world, const StyleBenchmarkConfig& style) {
  return generate_scenes(world, style.seed, style.scenes, Split::Heldout);
}

RetrievalSummary summarize_retrieval(const RetrievalModel& model, const SynthWorld& world,
                                     const Gallery& gallery) {
  RetrievalSummary s;
  double sum = 0, low = 1;
  for (unsigned p : all_patterns()) {
    s.patterns.push_back(evaluate_retrieval(model, world, gallery, p));
    if (s.patterns.size() > 1) {
      sum += s.patterns.back().r5;
      low = std::min(low, s.patterns.back().r5);
    }
  }
  s.partial_r5_mean = sum / double(s.patterns.size() - 1);
  s.partial_r5_min = low;
  return s;
}

std::vector<std::string> ablation_grids() { return {"dropout", "fusion", "layout", "padding"}; }

std::vector<std::pair<std::string, TrainConfig>> ablation_settings(std::string_view grid,
                                                                   const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> out;
  if (grid == "dropout") {
    const std::pair<const char*, double> rates[] = {{"0.1", 0.1}, {"0.3", 0.3}, {"0.5", 0.5}};
    for (const auto& [name, p] : rates) {
      TrainConfig c = base;
      c.modality_dropout = p;
      out.emplace_back(name, c);
    }
  } else if (grid == "fusion") {
    for (auto v : {FusionVariant::Mean, FusionVariant::Mlp, FusionVariant::MaskedMlp, FusionVariant::Gated,
                   FusionVariant::Attention}) {
      TrainConfig c = base;
      c.fusion = v;
      out.emplace_back(std::string(to_string(v)), c);
    }
  } else if (grid == "padding") {
    for (auto m : {MissingPolicy::MaskToken, MissingPolicy::ZeroPad}) {
      TrainConfig c = base;
      c.missing = m;
      out.emplace_back(std::string(to_string(m)), c);
    }
  } else {
    throw ConfigError("unknown retrieval grid '" + std::string(grid) + "'");
  }
  return out;
}

std::vector<AblationRow> run_ablation(std::string_view grid, const SynthWorld& world,
                                      const Benchmark& bench) {
  std::vector<AblationRow> rows;
  if (grid != "layout") {
    for (const auto& [name, config] : ablation_settings(grid, bench.stage1)) {
      const TrainState state = train_stage1(world, config);
      const Gallery gallery = heldout_gallery(state.model, world);
      rows.push_back({std::string(grid), name, summarize_retrieval(state.model, world, gallery), {}});
    }
    return rows;
  }
  TrainState state = train_stage1(world, bench.stage1);
  state = stage2_finetune(bench.stage2, world, training_scenes(world, bench.stage2), std::move(state));
  const Gallery gallery = heldout_gallery(state.model, world);
  const auto scenes = benchmark_scenes(world, bench.style);
  const auto retrieval = summarize_retrieval(state.model, world, gallery);
  struct Variant {
    const char* name;
    HeadChoice head;
    std::optional<real> lambda;
  };
  for (const Variant& v : {Variant{"scene-aware", HeadChoice::SceneAware, std::nullopt},
                           Variant{"lambda-0", HeadChoice::SceneAware, real(0)},
                           Variant{"layout-free", HeadChoice::LayoutFree, std::nullopt}}) {
    StyleBenchmarkConfig style = bench.style;
    style.head = v.head;
    style.lambda_override = v.lambda;
    rows.push_back({"layout", v.name, retrieval, style_consistency(state.model, world, gallery, scenes, style)});
  }
  return rows;
}

std::string ablation_csv_header() {
  std::string h = "grid,setting";
  for (unsigned p : all_patterns()) {
    const std::string name = pattern_name(p);
    h += ",r1_" + name + ",r5_" + name;
  }
  return h + ",partial_r5_mean,partial_r5_min,style_consistency";
}

std::string ablation_csv_row(const AblationRow& row) {
  std::string line = row.grid + "," + row.setting;
  for (const auto& m : row.retrieval.patterns) line += "," + format_metric(m.r1) + "," + format_metric(m.r5);
  line += "," + format_metric(row.retrieval.partial_r5_mean) + "," + format_metric(row.retrieval.partial_r5_min);
  line += ",";
  if (row.style_consistency) line += format_metric(*row.style_consistency);
  return line;
}

}  // namespace layoutret::inline LAYOUTRET_ABI
