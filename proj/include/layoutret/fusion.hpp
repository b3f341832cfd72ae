#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "layoutret/mlp.hpp"
#include "layoutret/rng.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

enum class Modality : std::size_t { Text = 0, Image = 1, PointCloud = 2 };
inline constexpr std::size_t kModalityCount = 3;
inline constexpr unsigned kAllModalities = 0b111;

/// Optional per-modality embeddings. Bit k of presence() is set when slot k
/// holds a vector.
struct ModalityBundle {
  std::array<std::optional<Vector>, kModalityCount> slots;

  unsigned presence() const;
  std::size_t count() const;
  bool has(Modality m) const { return slots[static_cast<std::size_t>(m)].has_value(); }
  /// Copy keeping only the modalities in `mask`.
  ModalityBundle restricted(unsigned mask) const;

  friend bool operator==(const ModalityBundle&, const ModalityBundle&) = default;
};

/// "t", "i", "p" joined with '+', e.g. "t+p".
std::string pattern_name(unsigned mask);
/// Parses "t,i,p" style lists (also accepts text/image/pc names).
std::optional<unsigned> parse_modalities(std::string_view list);

/// Drops each present modality independently with `drop_probability`. If that
/// would leave nothing, one originally present modality, chosen uniformly, is
/// kept. Always consumes three draws, plus one when the keep-one rule fires.
ModalityBundle mask_modalities(const ModalityBundle& bundle, double drop_probability, Rng& rng);

enum class FusionVariant { Mean, Mlp, MaskedMlp, Gated, Attention };
enum class MissingPolicy { MaskToken, ZeroPad };

std::string_view to_string(FusionVariant v);
std::optional<FusionVariant> parse_fusion_variant(std::string_view s);
std::string_view to_string(MissingPolicy p);
std::optional<MissingPolicy> parse_missing_policy(std::string_view s);

struct FusionTape {
  std::array<Vector, kModalityCount> slots;  // present data or its stand-in
  std::array<bool, kModalityCount> present{};
  MlpTape mlp;
  std::array<real, kModalityCount> gates{};
  std::array<Vector, kModalityCount> tokens;  // attention: slot + modality id
  std::array<Vector, kModalityCount> q, k, v;
  std::array<std::array<real, kModalityCount>, kModalityCount> attn{};
};

/// Learnable fusion of three d-dimensional slots into one d-vector.
class FusionStrategy {
 public:
  FusionStrategy() = default;
  static FusionStrategy init(FusionVariant variant, std::size_t dim, std::size_t width,
                             MissingPolicy missing, Rng& rng);

  FusionVariant variant() const { return variant_; }
  MissingPolicy missing_policy() const { return missing_; }
  std::size_t dim() const { return dim_; }

  /// `slots[k]` is null when modality k is absent. Absent slots are never
  /// read; they are replaced by the mask token (or zeros under ZeroPad).
  Vector fuse(const std::array<const Vector*, kModalityCount>& slots,
              FusionTape* tape = nullptr) const;

  /// Accumulates parameter gradients; returns the gradients on the slots
  /// (empty vectors for absent ones).
  std::array<Vector, kModalityCount> backward(const FusionTape& tape,
                                              std::span<const real> grad_out,
                                              FusionStrategy& grads) const;

  FusionStrategy zeros_like() const;
  void collect(const std::string& prefix, ParamList& out);

  DenseMatrix mask_tokens;   // 3 x d
  DenseMatrix modality_ids;  // 3 x d, attention only
  Mlp mlp;                   // Mlp: 3d -> d, MaskedMlp: d -> d
  DenseMatrix gate_weight;   // 3 x d
  DenseMatrix gate_bias;     // 1 x 3
  DenseMatrix query_weight;  // d x d
  DenseMatrix key_weight;
  DenseMatrix value_weight;

 private:
  FusionVariant variant_ = FusionVariant::Mean;
  MissingPolicy missing_ = MissingPolicy::MaskToken;
  std::size_t dim_ = 0;
};

/// Fusion over a bundle already in the shared d-dimensional space. Throws
/// QueryError on an empty bundle.
Vector fuse(const FusionStrategy& strategy, const ModalityBundle& bundle,
            FusionTape* tape = nullptr);

/// normalize(fuse(bundle) + lambda * layout). A zero layout is skipped, so the
/// pre-normalization vector equals the fused one bit for bit.
Vector compose_query(const FusionStrategy& strategy, const ModalityBundle& bundle,
                     std::span<const real> layout, real lambda);

/// Gallery side: all three modalities required (GalleryError otherwise).
Vector encode_gallery_asset(const FusionStrategy& strategy, const ModalityBundle& bundle);

/// Throws NumericError on a zero or non-finite norm.
Vector normalized(std::span<const real> v);

struct TowerConfig {
  std::size_t input_dim = 48;  // raw modality feature dimension
  std::size_t dim = 64;        // d
  std::size_t width = 64;
  FusionVariant variant = FusionVariant::Attention;
  MissingPolicy missing = MissingPolicy::MaskToken;
  real lambda_init = real(0.1);
};

struct TowerTape {
  std::array<MlpTape, kModalityCount> encoder;
  FusionTape fusion;
  Vector layout;
  Vector pre_norm;
  real norm = 0;
  Vector output;
};

/// One side of the dual encoder: per-modality projections into d, a fusion
/// strategy, and a layout gate lambda (unused on the gallery side).
class Tower {
 public:
  Tower() = default;
  static Tower init(const TowerConfig& config, Rng& rng);

  const TowerConfig& config() const { return config_; }
  real lambda() const { return lambda_gate(0, 0); }
  void set_lambda(real v) { lambda_gate(0, 0) = v; }

  /// Projects raw modality features into the shared space.
  ModalityBundle embed(const ModalityBundle& raw) const;
  /// Query embedding; `layout` may be empty or all-zero for layout-free use.
  Vector compose_query(const ModalityBundle& raw, std::span<const real> layout,
                       TowerTape* tape = nullptr) const;
  /// Gallery embedding; requires all modalities.
  Vector encode_gallery_asset(const ModalityBundle& raw, TowerTape* tape = nullptr) const;

  /// Accumulates parameter gradients and returns the gradient on the layout.
  Vector backward(const TowerTape& tape, std::span<const real> grad_output, Tower& grads) const;

  Tower zeros_like() const;
  void collect(const std::string& prefix, ParamList& out);

  std::array<Mlp, kModalityCount> encoders;
  FusionStrategy fusion;
  DenseMatrix lambda_gate;  // 1 x 1

 private:
  TowerConfig config_;
};

}  // namespace layoutret::inline LAYOUTRET_ABI
