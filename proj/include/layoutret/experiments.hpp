#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "layoutret/trainer.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

/// The synthetic benchmark: world, both training stages and the style
/// benchmark, all at their defaults unless changed.
struct Benchmark {
  WorldConfig world;
  TrainConfig stage1;
  TrainConfig stage2;
  StyleBenchmarkConfig style;
};

/// Defaults with stage two set to 1000 steps.
Benchmark default_benchmark();

/// Training scenes for stage two, seeded from the stage-two config.
std::vector<SynthScene> training_scenes(const SynthWorld& world, const TrainConfig& stage2);
/// Held-out scenes for the style benchmark.
std::vector<SynthScene> benchmark_scenes(const SynthWorld& world, const StyleBenchmarkConfig& style);

struct RetrievalSummary {
  std::vector<RetrievalMetrics> patterns;  // all_patterns() order
  double partial_r5_mean = 0;
  double partial_r5_min = 0;

  const RetrievalMetrics& full() const { return patterns.front(); }
};

RetrievalSummary summarize_retrieval(const RetrievalModel& model, const SynthWorld& world,
                                     const Gallery& gallery);

struct AblationRow {
  std::string grid;
  std::string setting;
  RetrievalSummary retrieval;
  std::optional<double> style_consistency;
};

std::vector<std::string> ablation_grids();

/// Stage-one configs of a retrieval grid (dropout, fusion, padding), each a
/// copy of `base` with one field changed.
std::vector<std::pair<std::string, TrainConfig>> ablation_settings(std::string_view grid,
                                                                   const TrainConfig& base);

/// Trains from scratch and evaluates every setting of `grid`. The layout grid
/// trains both stages once and scores the scene-aware head, the same head
/// with lambda 0, and layout-free retrieval.
std::vector<AblationRow> run_ablation(std::string_view grid, const SynthWorld& world,
                                      const Benchmark& bench);

std::string ablation_csv_header();
std::string ablation_csv_row(const AblationRow& row);

}  // namespace layoutret::inline LAYOUTRET_ABI
