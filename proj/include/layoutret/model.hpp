#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "layoutret/fusion.hpp"
#include "layoutret/scene_encoder.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

enum class HeadChoice { Auto, LayoutFree, SceneAware };
std::optional<HeadChoice> parse_head_choice(std::string_view s);

struct ModelConfig {
  std::size_t sem_dim = 48;
  std::size_t dim = 64;
  std::size_t width = 64;
  FusionVariant variant = FusionVariant::Attention;
  MissingPolicy missing = MissingPolicy::MaskToken;
  real lambda_init = real(0.1);
  std::size_t layout_layers = 3;
  std::size_t relation_dim = 8;

  TowerConfig tower() const;
  SceneEncoderConfig layout() const;
};

/// Both towers of the retriever plus the layout encoder. `query` is the
/// layout-free head trained in stage one; `scene` is the optional
/// scene-aware head added in stage two.
struct RetrievalModel {
  ModelConfig config;
  Tower query;
  std::optional<Tower> scene;
  Tower gallery;
  SceneEncoder layout;

  static RetrievalModel init(const ModelConfig& config, std::uint64_t seed);

  /// Auto picks the scene-aware head when one exists and layout context is
  /// present, otherwise the layout-free head.
  const Tower& head(HeadChoice choice, bool has_layout) const;

  /// Tensor names are prefixed "query.", "scene.", "gallery." and "layout.".
  ParamList params();
  RetrievalModel zeros_like() const;
};

/// Container written by save_checkpoint: little-endian "ESGN", u32 version,
/// u32 dims (L, d, e, d_sem), then (u32 name length, name, u64 count, f32
/// payload) records until end of file. String metadata travels as
/// zero-length records named "meta:<key>=<value>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::uint32_t layers = 0;
  std::uint32_t hidden_dim = 0;
  std::uint32_t edge_dim = 0;
  std::uint32_t sem_dim = 0;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, std::vector<float>>> tensors;

  const std::vector<float>* find(std::string_view name) const;
};

std::string checkpoint_to_bytes(const CheckpointData& data);
CheckpointData checkpoint_from_bytes(std::string_view bytes);

/// Model-only checkpoints (used by the CLI for inference artifacts).
CheckpointData model_to_checkpoint(RetrievalModel& model);
RetrievalModel model_from_checkpoint(const CheckpointData& data);
ModelConfig config_from_meta(const CheckpointData& data);

/// Assigns every tensor of `params` from `data` by name; throws FormatError
/// on a missing tensor or element-count mismatch.
void load_params(const CheckpointData& data, const ParamList& params);
void append_params(CheckpointData& data, const ParamList& params);

}  // namespace layoutret::inline LAYOUTRET_ABI
