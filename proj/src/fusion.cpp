#include "layoutret/fusion.hpp"

#include <cmath>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

constexpr std::array<std::string_view, kModalityCount> kShortNames = {"t", "i", "p"};

Vector matvec(const DenseMatrix& w, std::span<const real> x) {
  Vector y(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) y[r] = dot(w.row(r), x);
  return y;
}

// grad_w += g x^T; grad_x += W^T g
void matvec_backward(const DenseMatrix& w, std::span<const real> x, std::span<const real> g,
                     DenseMatrix& grad_w, std::span<real> grad_x) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    if (g[r] == real(0)) continue;
    axpy(g[r], x, grad_w.row(r));
    axpy(g[r], w.row(r), grad_x);
  }
}

real sigmoid(real x) { return real(1) / (real(1) + std::exp(-x)); }

void fill_normal(DenseMatrix& m, Rng& rng, double scale) {
  for (real& v : m.data()) v = static_cast<real>(scale * rng.normal());
}

void fill_glorot(DenseMatrix& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (real& v : m.data()) v = static_cast<real>((2.0 * rng.uniform() - 1.0) * limit);
}

}  // namespace

unsigned ModalityBundle::presence() const {
  unsigned mask = 0;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (slots[k]) mask |= 1u << k;
  }
  return mask;
}

std::size_t ModalityBundle::count() const {
  std::size_t n = 0;
  for (const auto& s : slots) n += s ? 1 : 0;
  return n;
}

ModalityBundle ModalityBundle::restricted(unsigned mask) const {
  ModalityBundle out;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (mask & (1u << k)) out.slots[k] = slots[k];
  }
  return out;
}

std::string pattern_name(unsigned mask) {
  std::string out;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (!(mask & (1u << k))) continue;
    if (!out.empty()) out += '+';
    out += kShortNames[k];
  }
  return out.empty() ? "none" : out;
}

std::optional<unsigned> parse_modalities(std::string_view list) {
  unsigned mask = 0;
  while (!list.empty()) {
    const auto comma = list.find(',');
    const auto item = list.substr(0, comma);
    if (item == "t" || item == "text") {
      mask |= 1u;
    } else if (item == "i" || item == "image") {
      mask |= 2u;
    } else if (item == "p" || item == "pc" || item == "pointcloud") {
      mask |= 4u;
    } else {
      return std::nullopt;
    }
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  if (mask == 0) return std::nullopt;
  return mask;
}

ModalityBundle mask_modalities(const ModalityBundle& bundle, double drop_probability, Rng& rng) {
  if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) {
    throw ConfigError("modality drop probability must lie in [0, 1], got " +
                      std::to_string(drop_probability));
  }
  ModalityBundle out = bundle;
  std::array<std::size_t, kModalityCount> present{};
  std::size_t n_present = 0;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    const bool drop = rng.uniform() < drop_probability;
    if (!bundle.slots[k]) continue;
    present[n_present++] = k;
    if (drop) out.slots[k].reset();
  }
  if (n_present > 0 && out.count() == 0) {
    const std::size_t keep = present[rng.below(n_present)];
    out.slots[keep] = bundle.slots[keep];
  }
  return out;
}

std::string_view to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::Mean:
      return "mean";
    case FusionVariant::Mlp:
      return "mlp";
    case FusionVariant::MaskedMlp:
      return "masked-mlp";
    case FusionVariant::Gated:
      return "gated";
    case FusionVariant::Attention:
      return "attention";
  }
  return "?";
}

std::optional<FusionVariant> parse_fusion_variant(std::string_view s) {
  for (auto v : {FusionVariant::Mean, FusionVariant::Mlp, FusionVariant::MaskedMlp,
                 FusionVariant::Gated, FusionVariant::Attention}) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::string_view to_string(MissingPolicy p) {
  return p == MissingPolicy::MaskToken ? "mask-token" : "zero-pad";
}

std::optional<MissingPolicy> parse_missing_policy(std::string_view s) {
  if (s == "mask-token" || s == "mask") return MissingPolicy::MaskToken;
  if (s == "zero-pad" || s == "zero") return MissingPolicy::ZeroPad;
  return std::nullopt;
}

FusionStrategy FusionStrategy::init(FusionVariant variant, std::size_t dim, std::size_t width,
                                    MissingPolicy missing, Rng& rng) {
  FusionStrategy s;
  s.variant_ = variant;
  s.missing_ = missing;
  s.dim_ = dim;
  s.mask_tokens = DenseMatrix(kModalityCount, dim);
  Rng token_rng = rng.split(1);
  fill_normal(s.mask_tokens, token_rng, 0.1);
  Rng prng = rng.split(2);
  switch (variant) {
    case FusionVariant::Mean:
      break;
    case FusionVariant::Mlp:
      s.mlp = Mlp::make({kModalityCount * dim, width, dim}, Activation::Silu, prng);
      break;
    case FusionVariant::MaskedMlp:
      s.mlp = Mlp::make({dim, width, dim}, Activation::Silu, prng);
      break;
    case FusionVariant::Gated:
      s.gate_weight = DenseMatrix(kModalityCount, dim);
      s.gate_bias = DenseMatrix(1, kModalityCount);
      fill_normal(s.gate_weight, prng, 0.1);
      break;
    case FusionVariant::Attention:
      s.modality_ids = DenseMatrix(kModalityCount, dim);
      fill_normal(s.modality_ids, prng, 0.1);
      s.query_weight = DenseMatrix(dim, dim);
      s.key_weight = DenseMatrix(dim, dim);
      s.value_weight = DenseMatrix(dim, dim);
      fill_glorot(s.query_weight, prng);
      fill_glorot(s.key_weight, prng);
      // Values start at the identity so fusion begins as a weighted mean.
      for (std::size_t i = 0; i < dim; ++i) s.value_weight(i, i) = 1;
      break;
  }
  return s;
}

Vector FusionStrategy::fuse(const std::array<const Vector*, kModalityCount>& in,
                            FusionTape* tape) const {
  FusionTape local;
  FusionTape& t = tape ? *tape : local;
  t = {};
  std::size_t n_present = 0;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    t.present[k] = in[k] != nullptr;
    if (t.present[k]) {
      require_dim(dim_, in[k]->size(), "fuse modality slot");
      t.slots[k] = *in[k];
      ++n_present;
    } else if (missing_ == MissingPolicy::MaskToken) {
      const auto row = mask_tokens.row(k);
      t.slots[k].assign(row.begin(), row.end());
    } else {
      t.slots[k].assign(dim_, real(0));
    }
  }
  if (n_present == 0) throw QueryError("fusion needs at least one modality");

  Vector out(dim_, real(0));
  switch (variant_) {
    case FusionVariant::Mean: {
      for (const auto& s : t.slots) axpy(real(1), s, out);
      for (real& v : out) v /= real(kModalityCount);
      break;
    }
    case FusionVariant::Mlp: {
      Vector cat;
      cat.reserve(kModalityCount * dim_);
      for (const auto& s : t.slots) cat.insert(cat.end(), s.begin(), s.end());
      out = mlp.forward(cat, t.mlp);
      break;
    }
    case FusionVariant::MaskedMlp: {
      Vector avg(dim_, real(0));
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        if (t.present[k]) axpy(real(1), t.slots[k], avg);
      }
      for (real& v : avg) v /= static_cast<real>(n_present);
      out = mlp.forward(avg, t.mlp);
      break;
    }
    case FusionVariant::Gated: {
      real total = 0;
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        t.gates[k] = sigmoid(dot(gate_weight.row(k), t.slots[k]) + gate_bias(0, k));
        total += t.gates[k];
        axpy(t.gates[k], t.slots[k], out);
      }
      for (real& v : out) v /= total;
      break;
    }
    case FusionVariant::Attention: {
      const real scale = real(1) / std::sqrt(static_cast<real>(dim_));
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        t.tokens[k] = t.slots[k];
        axpy(real(1), modality_ids.row(k), t.tokens[k]);
        t.q[k] = matvec(query_weight, t.tokens[k]);
        t.k[k] = matvec(key_weight, t.tokens[k]);
        t.v[k] = matvec(value_weight, t.tokens[k]);
      }
      for (std::size_t a = 0; a < kModalityCount; ++a) {
        std::array<real, kModalityCount> logits{};
        for (std::size_t b = 0; b < kModalityCount; ++b) logits[b] = dot(t.q[a], t.k[b]) * scale;
        const real lse = stable_log_sum_exp(logits);
        for (std::size_t b = 0; b < kModalityCount; ++b) {
          t.attn[a][b] = std::exp(logits[b] - lse);
          axpy(t.attn[a][b], t.v[b], out);
        }
      }
      for (real& v : out) v /= real(kModalityCount);
      break;
    }
  }
  return out;
}

std::array<Vector, kModalityCount> FusionStrategy::backward(const FusionTape& t,
                                                            std::span<const real> gout,
                                                            FusionStrategy& grads) const {
  require_dim(dim_, gout.size(), "fusion backward");
  std::array<Vector, kModalityCount> gslot;
  for (auto& g : gslot) g.assign(dim_, real(0));
  std::size_t n_present = 0;
  for (bool p : t.present) n_present += p ? 1 : 0;

  switch (variant_) {
    case FusionVariant::Mean: {
      for (auto& g : gslot) axpy(real(1) / real(kModalityCount), gout, g);
      break;
    }
    case FusionVariant::Mlp: {
      const Vector gin = mlp.backward(t.mlp, gout, grads.mlp);
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        std::copy_n(gin.begin() + static_cast<std::ptrdiff_t>(k * dim_), dim_, gslot[k].begin());
      }
      break;
    }
    case FusionVariant::MaskedMlp: {
      const Vector gin = mlp.backward(t.mlp, gout, grads.mlp);
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        if (t.present[k]) axpy(real(1) / static_cast<real>(n_present), gin, gslot[k]);
      }
      break;
    }
    case FusionVariant::Gated: {
      real total = 0;
      for (real g : t.gates) total += g;
      Vector out(dim_, real(0));
      for (std::size_t k = 0; k < kModalityCount; ++k) axpy(t.gates[k], t.slots[k], out);
      for (real& v : out) v /= total;
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        real ggate = 0;
        for (std::size_t a = 0; a < dim_; ++a) ggate += gout[a] * (t.slots[k][a] - out[a]);
        ggate /= total;
        const real graw = ggate * t.gates[k] * (1 - t.gates[k]);
        grads.gate_bias(0, k) += graw;
        axpy(graw, t.slots[k], grads.gate_weight.row(k));
        axpy(t.gates[k] / total, gout, gslot[k]);
        axpy(graw, gate_weight.row(k), gslot[k]);
      }
      break;
    }
    case FusionVariant::Attention: {
      const real scale = real(1) / std::sqrt(static_cast<real>(dim_));
      Vector go(gout.begin(), gout.end());
      for (real& v : go) v /= real(kModalityCount);
      std::array<Vector, kModalityCount> gq, gk, gv;
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        gq[k].assign(dim_, 0);
        gk[k].assign(dim_, 0);
        gv[k].assign(dim_, 0);
      }
      for (std::size_t a = 0; a < kModalityCount; ++a) {
        std::array<real, kModalityCount> gattn{};
        real weighted = 0;
        for (std::size_t b = 0; b < kModalityCount; ++b) {
          gattn[b] = dot(go, t.v[b]);
          axpy(t.attn[a][b], go, gv[b]);
          weighted += t.attn[a][b] * gattn[b];
        }
        for (std::size_t b = 0; b < kModalityCount; ++b) {
          const real glogit = t.attn[a][b] * (gattn[b] - weighted) * scale;
          axpy(glogit, t.k[b], gq[a]);
          axpy(glogit, t.q[a], gk[b]);
        }
      }
      for (std::size_t k = 0; k < kModalityCount; ++k) {
        Vector gtoken(dim_, real(0));
        matvec_backward(query_weight, t.tokens[k], gq[k], grads.query_weight, gtoken);
        matvec_backward(key_weight, t.tokens[k], gk[k], grads.key_weight, gtoken);
        matvec_backward(value_weight, t.tokens[k], gv[k], grads.value_weight, gtoken);
        axpy(real(1), gtoken, grads.modality_ids.row(k));
        axpy(real(1), gtoken, gslot[k]);
      }
      break;
    }
  }

  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (t.present[k]) continue;
    // MaskedMlp never reads the stand-in, so its slot gradient is zero here.
    if (missing_ == MissingPolicy::MaskToken) axpy(real(1), gslot[k], grads.mask_tokens.row(k));
    gslot[k].clear();
  }
  return gslot;
}

FusionStrategy FusionStrategy::zeros_like() const {
  FusionStrategy z = *this;
  z.mask_tokens.fill(0);
  z.modality_ids.fill(0);
  z.mlp = mlp.zeros_like();
  z.gate_weight.fill(0);
  z.gate_bias.fill(0);
  z.query_weight.fill(0);
  z.key_weight.fill(0);
  z.value_weight.fill(0);
  return z;
}

void FusionStrategy::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".mask_tokens", &mask_tokens});
  switch (variant_) {
    case FusionVariant::Mean:
      break;
    case FusionVariant::Mlp:
    case FusionVariant::MaskedMlp:
      mlp.collect(prefix + ".mlp", out);
      break;
    case FusionVariant::Gated:
      out.push_back({prefix + ".gate_weight", &gate_weight});
      out.push_back({prefix + ".gate_bias", &gate_bias});
      break;
    case FusionVariant::Attention:
      out.push_back({prefix + ".modality_ids", &modality_ids});
      out.push_back({prefix + ".query_weight", &query_weight});
      out.push_back({prefix + ".key_weight", &key_weight});
      out.push_back({prefix + ".value_weight", &value_weight});
      break;
  }
}

Vector fuse(const FusionStrategy& strategy, const ModalityBundle& bundle, FusionTape* tape) {
  std::array<const Vector*, kModalityCount> in{};
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    in[k] = bundle.slots[k] ? &*bundle.slots[k] : nullptr;
  }
  return strategy.fuse(in, tape);
}

Vector normalized(std::span<const real> v) {
  const real norm = l2_norm(v);
  if (!(norm > 0) || !std::isfinite(norm)) {
    throw NumericError("cannot normalize a vector with norm " + std::to_string(norm));
  }
  Vector out(v.begin(), v.end());
  for (real& x : out) x /= norm;
  return out;
}

Vector compose_query(const FusionStrategy& strategy, const ModalityBundle& bundle,
                     std::span<const real> layout, real lambda) {
  Vector v = fuse(strategy, bundle);
  if (!layout.empty() && !is_zero(layout)) {
    require_dim(v.size(), layout.size(), "compose_query layout");
    axpy(lambda, layout, v);
  }
  return normalized(v);
}

Vector encode_gallery_asset(const FusionStrategy& strategy, const ModalityBundle& bundle) {
  if (bundle.presence() != kAllModalities) {
    throw GalleryError("gallery assets need all modalities, got " + pattern_name(bundle.presence()));
  }
  return normalized(fuse(strategy, bundle));
}

Tower Tower::init(const TowerConfig& config, Rng& rng) {
  Tower t;
  t.config_ = config;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    Rng erng = rng.split(10 + k);
    t.encoders[k] =
        Mlp::make({config.input_dim, config.width, config.dim}, Activation::Silu, erng);
  }
  Rng frng = rng.split(20);
  t.fusion = FusionStrategy::init(config.variant, config.dim, config.width, config.missing, frng);
  t.lambda_gate = DenseMatrix(1, 1, config.lambda_init);
  return t;
}

ModalityBundle Tower::embed(const ModalityBundle& raw) const {
  ModalityBundle out;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (raw.slots[k]) out.slots[k] = encoders[k].forward(*raw.slots[k]);
  }
  return out;
}

Vector Tower::compose_query(const ModalityBundle& raw, std::span<const real> layout,
                            TowerTape* tape) const {
  TowerTape local;
  TowerTape& t = tape ? *tape : local;
  std::array<Vector, kModalityCount> encoded;
  std::array<const Vector*, kModalityCount> in{};
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (!raw.slots[k]) continue;
    require_dim(config_.input_dim, raw.slots[k]->size(), "query modality feature");
    encoded[k] = encoders[k].forward(*raw.slots[k], t.encoder[k]);
    in[k] = &encoded[k];
  }
  Vector v = fusion.fuse(in, &t.fusion);
  t.layout.assign(layout.begin(), layout.end());
  if (!layout.empty() && !is_zero(layout)) {
    require_dim(v.size(), layout.size(), "compose_query layout");
    axpy(lambda(), layout, v);
  }
  t.pre_norm = v;
  t.norm = l2_norm(v);
  t.output = normalized(v);
  return t.output;
}

Vector Tower::encode_gallery_asset(const ModalityBundle& raw, TowerTape* tape) const {
  if (raw.presence() != kAllModalities) {
    throw GalleryError("gallery assets need all modalities, got " + pattern_name(raw.presence()));
  }
  return compose_query(raw, {}, tape);
}

Vector Tower::backward(const TowerTape& t, std::span<const real> gq, Tower& grads) const {
  require_dim(t.output.size(), gq.size(), "tower backward");
  const real proj = dot(t.output, gq);
  Vector gv(gq.size());
  for (std::size_t a = 0; a < gv.size(); ++a) gv[a] = (gq[a] - t.output[a] * proj) / t.norm;

  Vector glayout;
  if (!t.layout.empty()) {
    glayout.assign(t.layout.size(), real(0));
    if (!is_zero(t.layout)) {
      grads.lambda_gate(0, 0) += dot(gv, t.layout);
      axpy(lambda(), gv, glayout);
    }
  }
  const auto gslots = fusion.backward(t.fusion, gv, grads.fusion);
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    if (!t.fusion.present[k]) continue;
    encoders[k].backward(t.encoder[k], gslots[k], grads.encoders[k]);
  }
  return glayout;
}

Tower Tower::zeros_like() const {
  Tower z;
  z.config_ = config_;
  for (std::size_t k = 0; k < kModalityCount; ++k) z.encoders[k] = encoders[k].zeros_like();
  z.fusion = fusion.zeros_like();
  z.lambda_gate = lambda_gate.zeros_like();
  return z;
}

void Tower::collect(const std::string& prefix, ParamList& out) {
  static constexpr std::array<const char*, kModalityCount> names = {"text", "image", "pointcloud"};
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    encoders[k].collect(prefix + ".encoder." + names[k], out);
  }
  fusion.collect(prefix + ".fusion", out);
  out.push_back({prefix + ".lambda", &lambda_gate});
}

}  // namespace layoutret::inline LAYOUTRET_ABI
