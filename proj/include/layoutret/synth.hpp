#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "layoutret/fusion.hpp"
#include "layoutret/gallery.hpp"
#include "layoutret/scene_graph.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t train_assets = 512;
  std::size_t heldout_assets = 128;
  std::size_t categories = 16;
  std::size_t styles = 4;
  std::size_t latent_dim = 32;
  std::size_t sem_dim = 48;
  double anchor_noise = 0.1;
  double style_scale = 0.5;
  double modality_noise = 0.05;

  /// Throws ConfigError on degenerate sizes or negative noise.
  void validate() const;
};

struct SynthAsset {
  std::string asset_id;
  std::size_t category = 0;
  std::size_t style = 0;
  bool heldout = false;
  Vector latent;
};

enum class Split { Train, Heldout };

/// Procedural asset world. Everything is a pure function of the config.
struct SynthWorld {
  WorldConfig config;
  DenseMatrix category_anchors;                        // C x d_lat
  DenseMatrix style_anchors;                           // S x d_lat
  std::array<DenseMatrix, kModalityCount> encoder_maps;  // d_sem x d_lat each
  std::vector<SynthAsset> assets;                      // train split, then held-out

  std::vector<std::size_t> split_indices(Split split) const;
  const SynthAsset* find(std::string_view asset_id) const;
};

SynthWorld generate_world(const WorldConfig& config);

/// Stand-in modality encoders: y = A latent / sqrt(d_lat), then
/// y + 0.25 tanh(y) plus noise seeded by (world seed, modality, latent bits),
/// so two assets with equal latents get equal bundles.
ModalityBundle encode_modalities(const SynthWorld& world, const SynthAsset& asset);
ModalityBundle encode_latent(const SynthWorld& world, std::span<const real> latent);

/// Text-only query describing a category and nothing about style: the text
/// map applied to the bare category anchor, noise-free.
ModalityBundle describe_category(const SynthWorld& world, std::size_t category);

std::string category_name(std::size_t category);
std::string style_name(std::size_t style);
std::optional<std::size_t> parse_category(std::string_view name, std::size_t categories);

/// Symmetric affinity between categories; pairs at or above 0.5 are linked
/// by same-function semantic edges.
double category_affinity(const SynthWorld& world, std::size_t a, std::size_t b);
inline constexpr double kAffinityThreshold = 0.5;

std::vector<AssetRecord> asset_records(const SynthWorld& world, Split split);

/// Seed, dimensions and checksums; enough to regenerate and verify a world.
nlohmann::json world_manifest(const SynthWorld& world);
WorldConfig config_from_manifest(const nlohmann::json& manifest);
/// Regenerates the world and checks it against the manifest checksums.
SynthWorld world_from_manifest(const nlohmann::json& manifest);

struct SceneConfig {
  std::size_t assets_per_scene = 6;
  double room_size = 6.0;
  double cell_size = 2.0;
  double jitter = 0.4;
  double adjacency_distance = 1.5;
  double off_style_fraction = 0.2;
  double stack_probability = 0.5;
};

/// One procedural room. `context` holds every asset except the held-out
/// target, which is the positive for layout-aware training.
struct SynthScene {
  std::string scene_id;
  std::size_t style = 0;
  SceneGraph context;
  std::size_t target = 0;  // index into SynthWorld::assets
  Position target_position{};
};

std::vector<SynthScene> generate_scenes(const SynthWorld& world, std::uint64_t seed,
                                        std::size_t n_scenes, Split split,
                                        const SceneConfig& config = {});

/// Fraction of all assets in the scene (context plus target) carrying the
/// room style.
double style_coherence(const SynthWorld& world, const SynthScene& scene);

struct BatchConfig {
  std::size_t batch_size = 32;
  double modality_dropout = 0.3;
  double scene_dropout = 0.3;
  /// Stage two: chance that a pair's query is the target's category
  /// description instead of its own (masked) modality bundle.
  double category_query_rate = 0.5;

  void validate() const;
};

enum class Stage { One, Two };

/// One training batch. `items` index the pair list handed to make_batch and
/// carry distinct targets, so in-batch negatives are never duplicates of the
/// positive.
struct Batch {
  std::vector<std::size_t> items;
  std::vector<ModalityBundle> queries;
  bool drop_layout = false;
};

/// `targets[i]` is the asset index of pair i, `bundles[i]` its full raw
/// bundle and `categories[i]` its category. Stage one masks each query's
/// modalities; stage two additionally swaps in category descriptions and
/// drops the layout of the whole batch with the configured rate.
struct PairPool {
  std::vector<std::size_t> targets;
  std::vector<ModalityBundle> bundles;
  std::vector<std::size_t> categories;
};

PairPool stage1_pool(const SynthWorld& world, Split split);
PairPool stage2_pool(const SynthWorld& world, const std::vector<SynthScene>& scenes);

Batch make_batch(const SynthWorld& world, const PairPool& pool, const BatchConfig& config,
                 Stage stage, Rng& rng);

}  // namespace layoutret::inline LAYOUTRET_ABI
