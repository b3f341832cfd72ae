#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "layoutret/adam.hpp"
#include "layoutret/composer.hpp"
#include "layoutret/gallery.hpp"
#include "layoutret/model.hpp"
#include "layoutret/objective.hpp"
#include "layoutret/synth.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

enum class HeadPolicy { SharedHead, TwoHeads };
std::string_view to_string(HeadPolicy p);
std::optional<HeadPolicy> parse_head_policy(std::string_view s);

/// Parameter groups, by name: query.encoders, query.fusion, query.lambda,
/// gallery.encoders, gallery.fusion, gallery.lambda, scene.encoders,
/// scene.fusion, scene.lambda and layout.
std::string param_group(std::string_view tensor_name);
std::map<std::string, ParamList> param_groups(RetrievalModel& model);
std::map<std::string, std::uint64_t> group_checksums(RetrievalModel& model);

struct TrainConfig {
  Stage stage = Stage::One;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  real temperature = kDefaultTemperature;
  double modality_dropout = 0.3;
  double scene_dropout = 0.3;
  double category_query_rate = 0.5;
  /// Groups (or group prefixes such as "query") excluded from training on
  /// top of the stage's own freezing rules.
  std::set<std::string> freeze;
  FusionVariant fusion = FusionVariant::Attention;
  MissingPolicy missing = MissingPolicy::MaskToken;
  std::uint64_t seed = 7;
  HeadPolicy head_policy = HeadPolicy::TwoHeads;
  AdamConfig adam;
  /// Pins the trained head's lambda to this value and keeps it frozen.
  std::optional<real> lambda_fixed;
  std::size_t threads = 1;
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints
  std::size_t checkpoint_every = 200;
  std::size_t keep_checkpoints = 3;
  std::size_t stage2_scenes = 2048;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainState {
  RetrievalModel model;
  std::map<std::string, AdamState> optimizers;  // trainable groups only
  std::uint64_t step = 0;
  int stage_completed = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;
};

TrainState init_state(const TrainConfig& config, const SynthWorld& world);

/// Groups updated by the configured stage after applying `freeze`.
std::set<std::string> trainable_groups(const TrainConfig& config, const RetrievalModel& model);

using StepCallback = std::function<void(std::uint64_t step, double loss)>;

/// Query-to-gallery contrastive training of both towers on masked
/// modality bundles of the training split.
TrainState stage1_pretrain(const TrainConfig& config, const SynthWorld& world, TrainState state,
                           const StepCallback& on_step = {});

/// Layout-aware fine-tuning on (scene context + query, held-out target)
/// pairs with the gallery tower frozen. Requires a completed stage one.
TrainState stage2_finetune(const TrainConfig& config, const SynthWorld& world,
                           const std::vector<SynthScene>& scenes, TrainState state,
                           const StepCallback& on_step = {});

/// Checkpoint with model tensors, optimizer moments ("opt.<group>.m." and
/// "opt.<group>.v." prefixes) and training metadata. The loss history is not
/// stored; the CLI writes it to the metrics CSV.
void save_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_state(const std::filesystem::path& path);
CheckpointData state_to_checkpoint(const TrainState& state);
TrainState state_from_checkpoint(const CheckpointData& data);

struct RetrievalMetrics {
  unsigned pattern = 0;
  std::size_t queries = 0;
  double r1 = 0;
  double r5 = 0;
};

/// Gallery of the held-out split through the gallery tower; feature lookup
/// for composition uses the assets' text modality.
Gallery heldout_gallery(const RetrievalModel& model, const SynthWorld& world);

/// Layout-free retrieval of each held-out asset restricted to `pattern`
/// against `gallery`. Throws ConfigError on an empty evaluation set.
RetrievalMetrics evaluate_retrieval(const RetrievalModel& model, const SynthWorld& world,
                                    const Gallery& gallery, unsigned pattern,
                                    HeadChoice head = HeadChoice::LayoutFree);

/// All seven non-empty modality patterns, full set first.
std::vector<unsigned> all_patterns();

struct StyleBenchmarkConfig {
  std::size_t scenes = 100;
  std::size_t queries_per_scene = 3;
  std::uint64_t seed = 1234;
  HeadChoice head = HeadChoice::SceneAware;
  std::optional<real> lambda_override;
};

/// Composes `queries_per_scene` category-description queries into each
/// held-out scene (the target's category first, then others) and returns the
/// fraction of retrieved assets whose style matches the room style.
double style_consistency(const RetrievalModel& model, const SynthWorld& world, const Gallery& gallery,
                         const std::vector<SynthScene>& scenes, const StyleBenchmarkConfig& config);

FeatureLookup world_feature_lookup(const SynthWorld& world);

nlohmann::json run_manifest(const TrainConfig& config, TrainState& state);

}  // namespace layoutret::inline LAYOUTRET_ABI
