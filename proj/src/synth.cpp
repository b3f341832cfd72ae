#include "layoutret/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

constexpr std::array<const char*, 16> kCategoryNames = {
    "chair", "table", "sofa",   "bed",  "lamp", "shelf", "cabinet", "desk",
    "rug",   "plant", "tv",     "clock", "vase", "mirror", "stool", "wardrobe"};
constexpr std::array<const char*, 4> kStyleNames = {"modern", "rustic", "industrial",
                                                    "scandinavian"};

// Category pairs with planted high affinity (same-function furniture groups).
struct Affinity {
  std::size_t a, b;
  double value;
};
constexpr std::array<Affinity, 12> kPlanted = {{{0, 1, 0.95},
                                                {0, 7, 0.9},
                                                {2, 10, 0.85},
                                                {2, 8, 0.7},
                                                {3, 4, 0.75},
                                                {3, 15, 0.8},
                                                {1, 12, 0.65},
                                                {7, 4, 0.8},
                                                {5, 9, 0.6},
                                                {6, 13, 0.65},
                                                {14, 1, 0.7},
                                                {11, 5, 0.6}}};

bool is_surface(std::size_t c) { return c == 1 || c == 5 || c == 6 || c == 7; }
bool is_small(std::size_t c) { return c == 4 || c == 9 || c == 10 || c == 11 || c == 12; }

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t hash_values(std::span<const real> v, std::uint64_t h = kFnvOffset) {
  return fnv1a(h, v.data(), v.size_bytes());
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

void fill_normal(DenseMatrix& m, Rng rng, double scale) {
  for (real& v : m.data()) v = static_cast<real>(scale * rng.normal());
}

Vector apply_map(const DenseMatrix& a, std::span<const real> latent, Rng* noise, double sigma) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(a.cols()));
  Vector out(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double y = 0;
    for (std::size_t c = 0; c < a.cols(); ++c) y += double(a(r, c)) * latent[c];
    y *= inv;
    double v = y + 0.25 * std::tanh(y);
    if (noise && sigma > 0) v += sigma * noise->normal();
    out[r] = static_cast<real>(v);
  }
  return out;
}

std::uint64_t world_checksum(const SynthWorld& w) {
  std::uint64_t h = hash_values(w.category_anchors.data());
  h = hash_values(w.style_anchors.data(), h);
  for (const auto& m : w.encoder_maps) h = hash_values(m.data(), h);
  for (const auto& a : w.assets) {
    h = fnv1a(h, a.asset_id.data(), a.asset_id.size());
    h = hash_values(a.latent, h);
  }
  return h;
}

}  // namespace

void WorldConfig::validate() const {
  if (categories < 2 || styles < 2) throw ConfigError("need at least 2 categories and 2 styles");
  if (train_assets == 0) throw ConfigError("world needs at least one training asset");
  if (latent_dim == 0 || sem_dim == 0) throw ConfigError("latent and semantic dims must be positive");
  if (!(anchor_noise >= 0) || !(modality_noise >= 0) || !(style_scale >= 0)) {
    throw ConfigError("noise scales must be non-negative");
  }
}

std::vector<std::size_t> SynthWorld::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assets.size(); ++i) {
    if (assets[i].heldout == (split == Split::Heldout)) out.push_back(i);
  }
  return out;
}

const SynthAsset* SynthWorld::find(std::string_view asset_id) const {
  for (const auto& a : assets) {
    if (a.asset_id == asset_id) return &a;
  }
  return nullptr;
}

SynthWorld generate_world(const WorldConfig& config) {
  config.validate();
  SynthWorld w;
  w.config = config;
  const Rng root(config.seed, 0x776f726c64ull);
  w.category_anchors = DenseMatrix(config.categories, config.latent_dim);
  w.style_anchors = DenseMatrix(config.styles, config.latent_dim);
  fill_normal(w.category_anchors, root.split(1), 1.0);
  fill_normal(w.style_anchors, root.split(2), config.style_scale);
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    w.encoder_maps[m] = DenseMatrix(config.sem_dim, config.latent_dim);
    fill_normal(w.encoder_maps[m], root.split(10 + m), 1.0);
  }

  const std::size_t cells = config.categories * config.styles;
  auto add_split = [&](std::size_t count, bool heldout) {
    Rng noise = root.split(heldout ? 4 : 3);
    for (std::size_t k = 0; k < count; ++k) {
      SynthAsset a;
      const std::size_t cell = k % cells;
      a.category = cell / config.styles;
      a.style = cell % config.styles;
      a.heldout = heldout;
      char id[32];
      std::snprintf(id, sizeof id, "%s%04zu", heldout ? "h" : "a", k);
      a.asset_id = id;
      a.latent.resize(config.latent_dim);
      for (std::size_t d = 0; d < config.latent_dim; ++d) {
        a.latent[d] = static_cast<real>(double(w.category_anchors(a.category, d)) +
                                        double(w.style_anchors(a.style, d)) +
                                        config.anchor_noise * noise.normal());
      }
      w.assets.push_back(std::move(a));
    }
  };
  add_split(config.train_assets, false);
  add_split(config.heldout_assets, true);
  return w;
}

ModalityBundle encode_latent(const SynthWorld& world, std::span<const real> latent) {
  require_dim(world.config.latent_dim, latent.size(), "encode_modalities latent");
  const std::uint64_t key = hash_values(latent);
  ModalityBundle b;
  for (std::size_t m = 0; m < kModalityCount; ++m) {
    Rng noise(world.config.seed ^ key, 0x6e6f697365ull + m);
    b.slots[m] = apply_map(world.encoder_maps[m], latent, &noise, world.config.modality_noise);
  }
  return b;
}

ModalityBundle encode_modalities(const SynthWorld& world, const SynthAsset& asset) {
  return encode_latent(world, asset.latent);
}

ModalityBundle describe_category(const SynthWorld& world, std::size_t category) {
  if (category >= world.config.categories) {
    throw ConfigError("category " + std::to_string(category) + " out of range");
  }
  ModalityBundle b;
  b.slots[0] = apply_map(world.encoder_maps[0], world.category_anchors.row(category), nullptr, 0);
  return b;
}

std::string category_name(std::size_t category) {
  if (category < kCategoryNames.size()) return kCategoryNames[category];
  return "category-" + std::to_string(category);
}

std::string style_name(std::size_t style) {
  if (style < kStyleNames.size()) return kStyleNames[style];
  return "style-" + std::to_string(style);
}

std::optional<std::size_t> parse_category(std::string_view name, std::size_t categories) {
  for (std::size_t c = 0; c < categories; ++c) {
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

double category_affinity(const SynthWorld& world, std::size_t a, std::size_t b) {
  if (a == b) return 1.0;
  for (const auto& p : kPlanted) {
    if ((p.a == a && p.b == b) || (p.a == b && p.b == a)) return p.value;
  }
  // Background affinity below the threshold, symmetric in (a, b).
  const std::size_t lo = std::min(a, b), hi = std::max(a, b);
  Rng r(world.config.seed, 0x616666ull + lo * 1009 + hi);
  return 0.45 * r.uniform();
}

std::vector<AssetRecord> asset_records(const SynthWorld& world, Split split) {
  std::vector<AssetRecord> out;
  for (std::size_t i : world.split_indices(split)) {
    const auto& a = world.assets[i];
    out.push_back({a.asset_id, encode_modalities(world, a), category_name(a.category),
                   style_name(a.style)});
  }
  return out;
}

nlohmann::json world_manifest(const SynthWorld& w) {
  const auto& c = w.config;
  nlohmann::json anchors = nlohmann::json::array();
  for (std::size_t k = 0; k < c.categories; ++k) {
    anchors.push_back(hex64(hash_values(w.category_anchors.row(k))));
  }
  nlohmann::json styles = nlohmann::json::array();
  for (std::size_t k = 0; k < c.styles; ++k) styles.push_back(hex64(hash_values(w.style_anchors.row(k))));
  return {{"format", "layoutret-world"},
          {"version", 1},
          {"seed", c.seed},
          {"train_assets", c.train_assets},
          {"heldout_assets", c.heldout_assets},
          {"categories", c.categories},
          {"styles", c.styles},
          {"latent_dim", c.latent_dim},
          {"sem_dim", c.sem_dim},
          {"anchor_noise", c.anchor_noise},
          {"style_scale", c.style_scale},
          {"modality_noise", c.modality_noise},
          {"category_anchor_checksums", anchors},
          {"style_anchor_checksums", styles},
          {"world_checksum", hex64(world_checksum(w))}};
}

WorldConfig config_from_manifest(const nlohmann::json& m) {
  try {
    if (m.at("format") != "layoutret-world") throw FormatError("not a world manifest");
    if (m.at("version") != 1) throw FormatError("unsupported world manifest version");
    WorldConfig c;
    c.seed = m.at("seed").get<std::uint64_t>();
    c.train_assets = m.at("train_assets").get<std::size_t>();
    c.heldout_assets = m.at("heldout_assets").get<std::size_t>();
    c.categories = m.at("categories").get<std::size_t>();
    c.styles = m.at("styles").get<std::size_t>();
    c.latent_dim = m.at("latent_dim").get<std::size_t>();
    c.sem_dim = m.at("sem_dim").get<std::size_t>();
    c.anchor_noise = m.at("anchor_noise").get<double>();
    c.style_scale = m.at("style_scale").get<double>();
    c.modality_noise = m.at("modality_noise").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("world manifest: ") + e.what());
  }
}

SynthWorld world_from_manifest(const nlohmann::json& manifest) {
  SynthWorld w = generate_world(config_from_manifest(manifest));
  if (manifest.contains("world_checksum") &&
      manifest["world_checksum"] != hex64(world_checksum(w))) {
    throw FormatError("world manifest checksum does not match the regenerated world");
  }
  return w;
}

std::vector<SynthScene> generate_scenes(const SynthWorld& world, std::uint64_t seed,
                                        std::size_t n_scenes, Split split,
                                        const SceneConfig& config) {
  const std::size_t n = config.assets_per_scene;
  if (n < 2) throw ConfigError("a scene needs at least 2 assets");
  if (!(config.cell_size > 0) || !(config.room_size >= config.cell_size)) {
    throw ConfigError("room must hold at least one grid cell");
  }
  const auto& wc = world.config;
  // Asset pool per (category, style) cell of the chosen split.
  std::vector<std::vector<std::size_t>> pool(wc.categories * wc.styles);
  for (std::size_t i : world.split_indices(split)) {
    pool[world.assets[i].category * wc.styles + world.assets[i].style].push_back(i);
  }
  for (const auto& p : pool) {
    if (p.empty()) throw ConfigError("every category/style cell of the split needs an asset");
  }

  const auto grid = static_cast<std::size_t>(config.room_size / config.cell_size);
  std::vector<SynthScene> scenes;
  scenes.reserve(n_scenes);
  const Rng root(seed, 0x7363656e65ull);
  for (std::size_t s = 0; s < n_scenes; ++s) {
    Rng rng = root.split(s);
    SynthScene scene;
    scene.scene_id = "scene-" + std::to_string(s);
    scene.style = rng.below(wc.styles);
    const auto off_count = static_cast<std::size_t>(std::floor(config.off_style_fraction * double(n)));
    const std::size_t target_slot = rng.below(n);

    // Distinct categories while they last.
    std::vector<std::size_t> cats(wc.categories);
    std::iota(cats.begin(), cats.end(), std::size_t{0});
    for (std::size_t k = 0; k < std::min(n, cats.size()); ++k) {
      std::swap(cats[k], cats[k + rng.below(cats.size() - k)]);
    }
    std::vector<std::size_t> slot_category(n);
    for (std::size_t k = 0; k < n; ++k) {
      slot_category[k] = k < cats.size() ? cats[k] : rng.below(wc.categories);
    }

    std::vector<std::size_t> others;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != target_slot) others.push_back(k);
    }
    std::vector<bool> off_style(n, false);
    for (std::size_t k = 0; k < off_count && k < others.size(); ++k) {
      std::swap(others[k], others[k + rng.below(others.size() - k)]);
      off_style[others[k]] = true;
    }

    std::vector<std::size_t> cells(grid * grid);
    std::iota(cells.begin(), cells.end(), std::size_t{0});
    for (std::size_t k = 0; k + 1 < cells.size(); ++k) {
      std::swap(cells[k], cells[k + rng.below(cells.size() - k)]);
    }

    std::vector<SceneNode> nodes;
    std::vector<RelationSpec> physical;
    std::vector<std::size_t> surfaces;  // node positions in `nodes` still free to stack on
    std::size_t next_cell = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t c = slot_category[k];
      const std::size_t style = off_style[k] ? (scene.style + 1 + rng.below(wc.styles - 1)) % wc.styles
                                             : scene.style;
      const auto& candidates = pool[c * wc.styles + style];
      const std::size_t asset = candidates[rng.below(candidates.size())];

      Position pos{};
      std::optional<std::size_t> stacked_on;
      if (k != target_slot && is_small(c) && !surfaces.empty() &&
          rng.bernoulli(config.stack_probability)) {
        const std::size_t pick = rng.below(surfaces.size());
        stacked_on = surfaces[pick];
        surfaces.erase(surfaces.begin() + static_cast<std::ptrdiff_t>(pick));
        const auto& base = nodes[*stacked_on].position;
        pos = {base[0] + 0.1 * (2 * rng.uniform() - 1), base[1] + 0.1 * (2 * rng.uniform() - 1), 0.8};
      } else {
        const std::size_t cell = cells[next_cell++ % cells.size()];
        const double cx = (double(cell % grid) + 0.5) * config.cell_size;
        const double cy = (double(cell / grid) + 0.5) * config.cell_size;
        pos = {cx + config.jitter * (2 * rng.uniform() - 1), cy + config.jitter * (2 * rng.uniform() - 1),
               0.0};
      }

      if (k == target_slot) {
        scene.target = asset;
        scene.target_position = pos;
        continue;
      }
      SceneNode node;
      node.id = "n" + std::to_string(nodes.size());
      node.position = pos;
      node.feature = *encode_modalities(world, world.assets[asset]).slots[0];
      node.asset_id = world.assets[asset].asset_id;
      node.category = category_name(c);
      node.style = style_name(world.assets[asset].style);
      if (stacked_on) {
        physical.push_back({node.id, nodes[*stacked_on].id, Relation::On});
        physical.push_back({nodes[*stacked_on].id, node.id, Relation::Supports});
      }
      if (is_surface(c)) surfaces.push_back(nodes.size());
      nodes.push_back(std::move(node));
    }

    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (i == j) continue;
        double d2 = 0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double d = nodes[i].position[a] - nodes[j].position[a];
          d2 += d * d;
        }
        if (d2 < config.adjacency_distance * config.adjacency_distance) {
          physical.push_back({nodes[i].id, nodes[j].id, Relation::Adjacent});
        }
      }
    }
    std::vector<RelationSpec> semantic;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = 0; j < nodes.size(); ++j) {
        if (i == j) continue;
        const auto ci = *parse_category(nodes[i].category, wc.categories);
        const auto cj = *parse_category(nodes[j].category, wc.categories);
        if (ci != cj && category_affinity(world, ci, cj) >= kAffinityThreshold) {
          semantic.push_back({nodes[i].id, nodes[j].id, Relation::SameFunction});
        }
      }
    }
    scene.context = SceneGraph::build(wc.sem_dim, std::move(nodes), physical, semantic);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

double style_coherence(const SynthWorld& world, const SynthScene& scene) {
  const std::string room = style_name(scene.style);
  std::size_t match = world.assets[scene.target].style == scene.style ? 1 : 0;
  for (const auto& n : scene.context.nodes()) match += n.style == room ? 1 : 0;
  return double(match) / double(scene.context.size() + 1);
}

void BatchConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  auto rate = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
    }
  };
  rate(modality_dropout, "modality dropout");
  rate(scene_dropout, "scene dropout");
  rate(category_query_rate, "category query rate");
}

PairPool stage1_pool(const SynthWorld& world, Split split) {
  PairPool p;
  for (std::size_t i : world.split_indices(split)) {
    p.targets.push_back(i);
    p.bundles.push_back(encode_modalities(world, world.assets[i]));
    p.categories.push_back(world.assets[i].category);
  }
  return p;
}

PairPool stage2_pool(const SynthWorld& world, const std::vector<SynthScene>& scenes) {
  PairPool p;
  for (const auto& s : scenes) {
    p.targets.push_back(s.target);
    p.bundles.push_back(encode_modalities(world, world.assets[s.target]));
    p.categories.push_back(world.assets[s.target].category);
  }
  return p;
}

Batch make_batch(const SynthWorld& world, const PairPool& pool, const BatchConfig& config,
                 Stage stage, Rng& rng) {
  config.validate();
  if (pool.targets.empty()) throw ConfigError("cannot draw a batch from an empty pair pool");
  Batch b;
  if (stage == Stage::Two) b.drop_layout = rng.bernoulli(config.scene_dropout);

  // Partial Fisher-Yates, skipping pairs whose target is already in the batch.
  std::vector<std::size_t> order(pool.targets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> seen;
  for (std::size_t k = 0; k < order.size() && b.items.size() < config.batch_size; ++k) {
    std::swap(order[k], order[k + rng.below(order.size() - k)]);
    const std::size_t target = pool.targets[order[k]];
    if (std::find(seen.begin(), seen.end(), target) != seen.end()) continue;
    seen.push_back(target);
    b.items.push_back(order[k]);
  }
  if (b.items.size() < 2) throw ConfigError("pair pool has fewer than 2 distinct targets");

  for (std::size_t item : b.items) {
    if (stage == Stage::Two && rng.bernoulli(config.category_query_rate)) {
      b.queries.push_back(describe_category(world, pool.categories[item]));
    } else {
      b.queries.push_back(mask_modalities(pool.bundles[item], config.modality_dropout, rng));
    }
  }
  return b;
}

}  // namespace layoutret::inline LAYOUTRET_ABI
