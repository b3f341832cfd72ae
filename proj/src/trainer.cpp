#include "layoutret/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <thread>
#include <unordered_map>

#include "layoutret/binary_io.hpp"
#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

// Runs fn(i) for i in [0, n). Each index writes only its own outputs, so the
// result does not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = next++; i < n; i = next++) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void add_into(const ParamList& from, const ParamList& to) {
  for (std::size_t k = 0; k < from.size(); ++k) {
    axpy(real(1), from[k].tensor->data(), to[k].tensor->data());
  }
}

bool frozen_by(const std::set<std::string>& freeze, const std::string& group) {
  for (const auto& f : freeze) {
    if (group == f || group.starts_with(f + ".")) return true;
  }
  return false;
}

void step_optimizers(TrainState& state, RetrievalModel& grads, const std::set<std::string>& trainable,
                     const AdamConfig& adam) {
  auto params = param_groups(state.model);
  auto gradients = param_groups(grads);
  for (const auto& group : trainable) {
    auto it = state.optimizers.find(group);
    if (it == state.optimizers.end()) it = state.optimizers.emplace(group, AdamState(adam)).first;
    it->second.step(params.at(group), gradients.at(group));
  }
}

void maybe_checkpoint(const TrainConfig& config, const TrainState& state, int stage) {
  if (config.checkpoint_dir.empty() || config.checkpoint_every == 0) return;
  if (state.step % config.checkpoint_every != 0) return;
  namespace fs = std::filesystem;
  fs::create_directories(config.checkpoint_dir);
  char name[64];
  std::snprintf(name, sizeof name, "stage%d-step%06llu.ckpt", stage,
                static_cast<unsigned long long>(state.step));
  save_state(state, config.checkpoint_dir / name);
  std::vector<fs::path> existing;
  const std::string prefix = "stage" + std::to_string(stage) + "-step";
  for (const auto& entry : fs::directory_iterator(config.checkpoint_dir)) {
    const auto file = entry.path().filename().string();
    if (file.starts_with(prefix) && file.ends_with(".ckpt")) existing.push_back(entry.path());
  }
  std::sort(existing.begin(), existing.end());
  while (existing.size() > config.keep_checkpoints) {
    fs::remove(existing.front());
    existing.erase(existing.begin());
  }
}

void check_loss(real loss, std::uint64_t step) {
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss at step " + std::to_string(step));
  }
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

}  // namespace

std::string_view to_string(HeadPolicy p) {
  return p == HeadPolicy::TwoHeads ? "two-heads" : "shared-head";
}

std::optional<HeadPolicy> parse_head_policy(std::string_view s) {
  if (s == "two-heads") return HeadPolicy::TwoHeads;
  if (s == "shared-head") return HeadPolicy::SharedHead;
  return std::nullopt;
}

std::string param_group(std::string_view name) {
  const auto dot = name.find('.');
  const std::string_view tower = name.substr(0, dot);
  if (tower == "layout") return "layout";
  if (dot == std::string_view::npos) return std::string(name);
  const std::string_view rest = name.substr(dot + 1);
  std::string part;
  if (rest.starts_with("encoder.")) part = "encoders";
  else if (rest.starts_with("fusion.")) part = "fusion";
  else if (rest == "lambda") part = "lambda";
  else part = std::string(rest.substr(0, rest.find('.')));
  return std::string(tower) + "." + part;
}

std::map<std::string, ParamList> param_groups(RetrievalModel& model) {
  std::map<std::string, ParamList> out;
  for (const auto& p : model.params()) out[param_group(p.name)].push_back(p);
  return out;
}

std::map<std::string, std::uint64_t> group_checksums(RetrievalModel& model) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [group, params] : param_groups(model)) out[group] = checksum(params);
  return out;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  auto rate = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
    }
  };
  rate(modality_dropout, "modality dropout");
  rate(scene_dropout, "scene dropout");
  rate(category_query_rate, "category query rate");
  if (!(adam.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (lambda_fixed && !std::isfinite(*lambda_fixed)) throw ConfigError("fixed lambda must be finite");
  if (threads == 0) throw ConfigError("thread count must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"stage", stage == Stage::One ? 1 : 2},
                      {"batch_size", batch_size},
                      {"steps", steps},
                      {"temperature", temperature},
                      {"modality_dropout", modality_dropout},
                      {"scene_dropout", scene_dropout},
                      {"category_query_rate", category_query_rate},
                      {"freeze", std::vector<std::string>(freeze.begin(), freeze.end())},
                      {"fusion", std::string(to_string(fusion))},
                      {"missing", std::string(to_string(missing))},
                      {"seed", seed},
                      {"head_policy", std::string(to_string(head_policy))},
                      {"learning_rate", adam.learning_rate},
                      {"stage2_scenes", stage2_scenes}};
  j["lambda_fixed"] = lambda_fixed ? nlohmann::json(*lambda_fixed) : nlohmann::json(nullptr);
  return j;
}

TrainState init_state(const TrainConfig& config, const SynthWorld& world) {
  ModelConfig mc;
  mc.sem_dim = world.config.sem_dim;
  mc.variant = config.fusion;
  mc.missing = config.missing;
  TrainState s;
  s.model = RetrievalModel::init(mc, config.seed);
  s.seed = config.seed;
  return s;
}

std::set<std::string> trainable_groups(const TrainConfig& config, const RetrievalModel& model) {
  std::set<std::string> groups;
  if (config.stage == Stage::One) {
    groups = {"query.encoders", "query.fusion", "gallery.encoders", "gallery.fusion"};
  } else if (config.head_policy == HeadPolicy::TwoHeads) {
    groups = {"scene.encoders", "scene.fusion", "scene.lambda", "layout"};
  } else {
    groups = {"query.fusion", "query.lambda", "layout"};
  }
  if (config.stage == Stage::Two && config.lambda_fixed) {
    groups.erase(config.head_policy == HeadPolicy::TwoHeads ? "scene.lambda" : "query.lambda");
  }
  std::erase_if(groups, [&](const std::string& g) { return frozen_by(config.freeze, g); });
  if (!model.scene) std::erase_if(groups, [](const std::string& g) { return g.starts_with("scene."); });
  return groups;
}

TrainState stage1_pretrain(const TrainConfig& config, const SynthWorld& world, TrainState state,
                           const StepCallback& on_step) {
  config.validate();
  if (config.stage != Stage::One) throw ConfigError("stage1_pretrain needs stage one");
  const auto trainable = trainable_groups(config, state.model);
  const PairPool pool = stage1_pool(world, Split::Train);
  const BatchConfig bc{config.batch_size, config.modality_dropout, 0.0, 0.0};
  Rng rng(config.seed, 0x5374616765ull + 1);

  struct Item {
    TowerTape qtape, gtape;
    Tower qgrad, ggrad;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < config.steps; ++s) {
    const Batch batch = make_batch(world, pool, bc, Stage::One, rng);
    const std::size_t n = batch.items.size();
    items.resize(n);
    std::vector<Vector> queries(n), gallery(n);
    parallel_for(n, config.threads, [&](std::size_t i) {
      queries[i] = state.model.query.compose_query(batch.queries[i], {}, &items[i].qtape);
      gallery[i] = state.model.gallery.encode_gallery_asset(pool.bundles[batch.items[i]], &items[i].gtape);
    });
    const LossResult loss = pretrain_loss(queries, gallery, config.temperature);
    check_loss(loss.loss, state.step + 1);
    parallel_for(n, config.threads, [&](std::size_t i) {
      items[i].qgrad = state.model.query.zeros_like();
      items[i].ggrad = state.model.gallery.zeros_like();
      state.model.query.backward(items[i].qtape, loss.grad_queries[i], items[i].qgrad);
      state.model.gallery.backward(items[i].gtape, loss.grad_gallery[i], items[i].ggrad);
    });
    RetrievalModel grads = state.model.zeros_like();
    ParamList gq, gg;
    grads.query.collect("query", gq);
    grads.gallery.collect("gallery", gg);
    for (auto& item : items) {
      ParamList iq, ig;
      item.qgrad.collect("query", iq);
      item.ggrad.collect("gallery", ig);
      add_into(iq, gq);
      add_into(ig, gg);
    }
    step_optimizers(state, grads, trainable, config.adam);
    ++state.step;
    state.loss_history.push_back(loss.loss);
    if (on_step) on_step(state.step, loss.loss);
    maybe_checkpoint(config, state, 1);
  }
  state.stage_completed = std::max(state.stage_completed, 1);
  return state;
}

TrainState stage2_finetune(const TrainConfig& config, const SynthWorld& world,
                           const std::vector<SynthScene>& scenes, TrainState state,
                           const StepCallback& on_step) {
  config.validate();
  if (config.stage != Stage::Two) throw ConfigError("stage2_finetune needs stage two");
  if (state.stage_completed < 1) {
    throw ConfigError("stage two needs a completed stage-one checkpoint");
  }
  const bool two_heads = config.head_policy == HeadPolicy::TwoHeads;
  if (two_heads && !state.model.scene) state.model.scene = state.model.query;
  Tower& head = two_heads ? *state.model.scene : state.model.query;
  if (config.lambda_fixed) head.set_lambda(*config.lambda_fixed);
  const std::string head_name = two_heads ? "scene" : "query";

  const auto trainable = trainable_groups(config, state.model);
  const PairPool pool = stage2_pool(world, scenes);
  const BatchConfig bc{config.batch_size, config.modality_dropout, config.scene_dropout,
                       config.category_query_rate};

  // The gallery tower is frozen, so every positive embedding is fixed.
  std::unordered_map<std::size_t, Vector> positives;
  for (std::size_t i = 0; i < pool.targets.size(); ++i) {
    if (!positives.contains(pool.targets[i])) {
      positives[pool.targets[i]] = state.model.gallery.encode_gallery_asset(pool.bundles[i]);
    }
  }

  Rng rng(config.seed, 0x5374616765ull + 2);
  struct Item {
    TowerTape tape;
    EncoderTape layout_tape;
    Tower head_grad;
    SceneEncoder layout_grad;
  };
  std::vector<Item> items;
  for (std::size_t s = 0; s < config.steps; ++s) {
    const Batch batch = make_batch(world, pool, bc, Stage::Two, rng);
    const std::size_t n = batch.items.size();
    items.resize(n);
    std::vector<Vector> queries(n), gallery(n);
    parallel_for(n, config.threads, [&](std::size_t i) {
      const auto& scene = scenes[batch.items[i]];
      Vector layout;
      if (!batch.drop_layout) layout = state.model.layout.encode(scene.context, items[i].layout_tape).embedding;
      queries[i] = head.compose_query(batch.queries[i], layout, &items[i].tape);
      gallery[i] = positives.at(pool.targets[batch.items[i]]);
    });
    const LossResult loss = bidirectional_loss(queries, gallery, config.temperature);
    check_loss(loss.loss, state.step + 1);
    parallel_for(n, config.threads, [&](std::size_t i) {
      items[i].head_grad = head.zeros_like();
      items[i].layout_grad = state.model.layout.zeros_like();
      const Vector glayout = head.backward(items[i].tape, loss.grad_queries[i], items[i].head_grad);
      if (!batch.drop_layout) {
        state.model.layout.backward(scenes[batch.items[i]].context, items[i].layout_tape, glayout,
                                    items[i].layout_grad);
      }
    });
    RetrievalModel grads = state.model.zeros_like();
    ParamList gh, gl;
    (two_heads ? *grads.scene : grads.query).collect(head_name, gh);
    grads.layout.collect("layout", gl);
    for (auto& item : items) {
      ParamList ih, il;
      item.head_grad.collect(head_name, ih);
      item.layout_grad.collect("layout", il);
      add_into(ih, gh);
      add_into(il, gl);
    }
    step_optimizers(state, grads, trainable, config.adam);
    ++state.step;
    state.loss_history.push_back(loss.loss);
    if (on_step) on_step(state.step, loss.loss);
    maybe_checkpoint(config, state, 2);
  }
  state.stage_completed = std::max(state.stage_completed, 2);
  return state;
}

CheckpointData state_to_checkpoint(const TrainState& state) {
  TrainState copy = state;
  CheckpointData data = model_to_checkpoint(copy.model);
  data.meta["step"] = std::to_string(state.step);
  data.meta["stage"] = std::to_string(state.stage_completed);
  data.meta["seed"] = std::to_string(state.seed);
  for (auto& [group, opt] : copy.optimizers) {
    data.meta["adam_steps." + group] = std::to_string(opt.steps());
    data.meta["adam_lr." + group] = std::to_string(opt.config().learning_rate);
    for (auto& [name, m] : opt.moments()) {
      append_params(data, {{"opt." + group + ".m." + name, &m.first},
                           {"opt." + group + ".v." + name, &m.second}});
    }
  }
  return data;
}

TrainState state_from_checkpoint(const CheckpointData& data) {
  TrainState s;
  s.model = model_from_checkpoint(data);
  auto number = [&](const char* key) -> std::uint64_t {
    const auto it = data.meta.find(key);
    if (it == data.meta.end()) return 0;
    try {
      return std::stoull(it->second);
    } catch (const std::logic_error&) {
      throw FormatError(std::string("bad '") + key + "' metadata");
    }
  };
  s.step = number("step");
  s.stage_completed = static_cast<int>(number("stage"));
  s.seed = number("seed");
  auto groups = param_groups(s.model);
  for (const auto& [key, value] : data.meta) {
    if (!key.starts_with("adam_steps.")) continue;
    const std::string group = key.substr(std::string_view("adam_steps.").size());
    const auto git = groups.find(group);
    if (git == groups.end()) throw FormatError("optimizer state for unknown group '" + group + "'");
    AdamConfig ac;
    if (const auto lr = data.meta.find("adam_lr." + group); lr != data.meta.end()) {
      ac.learning_rate = static_cast<real>(std::stod(lr->second));
    }
    AdamState opt(ac);
    opt.set_steps(std::stoull(value));
    for (const auto& p : git->second) {
      const std::string m = "opt." + group + ".m." + p.name;
      if (!data.find(m)) continue;
      AdamMoments mom{p.tensor->zeros_like(), p.tensor->zeros_like()};
      load_params(data, {{m, &mom.first}, {"opt." + group + ".v." + p.name, &mom.second}});
      opt.moments().emplace(p.name, std::move(mom));
    }
    s.optimizers.emplace(group, std::move(opt));
  }
  return s;
}

void save_state(const TrainState& state, const std::filesystem::path& path) {
  write_file(path, checkpoint_to_bytes(state_to_checkpoint(state)));
}

TrainState load_state(const std::filesystem::path& path) {
  return state_from_checkpoint(checkpoint_from_bytes(read_file(path)));
}

Gallery heldout_gallery(const RetrievalModel& model, const SynthWorld& world) {
  return build_gallery(asset_records(world, Split::Heldout), model.gallery);
}

std::vector<unsigned> all_patterns() { return {0b111, 0b001, 0b010, 0b100, 0b011, 0b101, 0b110}; }

RetrievalMetrics evaluate_retrieval(const RetrievalModel& model, const SynthWorld& world,
                                    const Gallery& gallery, unsigned pattern, HeadChoice head) {
  if (pattern == 0 || pattern > kAllModalities) throw ConfigError("modality pattern must be non-empty");
  RetrievalMetrics m;
  m.pattern = pattern;
  const Tower& tower = model.head(head, false);
  std::size_t hit1 = 0, hit5 = 0;
  for (const auto& entry : gallery.entries()) {
    const SynthAsset* asset = world.find(entry.asset_id);
    if (!asset) continue;
    const ModalityBundle raw = encode_modalities(world, *asset).restricted(pattern);
    const auto hits = gallery.topk(tower.compose_query(raw, {}), 5);
    for (std::size_t k = 0; k < hits.size(); ++k) {
      if (hits[k].asset_id == entry.asset_id) {
        hit1 += k == 0;
        ++hit5;
        break;
      }
    }
    ++m.queries;
  }
  if (m.queries == 0) throw ConfigError("evaluation set is empty");
  m.r1 = double(hit1) / double(m.queries);
  m.r5 = double(hit5) / double(m.queries);
  return m;
}

FeatureLookup world_feature_lookup(const SynthWorld& world) {
  auto table = std::make_shared<std::unordered_map<std::string, Vector>>();
  for (const auto& a : world.assets) (*table)[a.asset_id] = *encode_modalities(world, a).slots[0];
  return [table](const GalleryEntry& e) {
    const auto it = table->find(e.asset_id);
    if (it == table->end()) throw CompositionError("no semantic feature for asset '" + e.asset_id + "'");
    return it->second;
  };
}

double style_consistency(const RetrievalModel& model, const SynthWorld& world, const Gallery& gallery,
                         const std::vector<SynthScene>& scenes, const StyleBenchmarkConfig& config) {
  const std::size_t n_scenes = std::min(config.scenes, scenes.size());
  if (n_scenes == 0 || config.queries_per_scene == 0) throw ConfigError("style benchmark is empty");
  const std::size_t cats = world.config.categories;
  if (config.queries_per_scene > cats) throw ConfigError("more queries per scene than categories");
  Retriever retriever{&model, &gallery, world_feature_lookup(world), config.head,
                      config.lambda_override};
  std::unordered_map<std::string, std::string> style_of;
  for (const auto& e : gallery.entries()) style_of[e.asset_id] = e.style;

  std::size_t matches = 0, total = 0;
  for (std::size_t s = 0; s < n_scenes; ++s) {
    const auto& scene = scenes[s];
    Rng rng(config.seed, s);
    std::vector<std::size_t> chosen{world.assets[scene.target].category};
    while (chosen.size() < config.queries_per_scene) {
      const std::size_t c = rng.below(cats);
      if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) chosen.push_back(c);
    }
    std::vector<AssetQuery> queries;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      AssetQuery q;
      q.bundle = describe_category(world, chosen[k]);
      q.position = k == 0 ? scene.target_position
                          : Position{6.0 * rng.uniform(), 6.0 * rng.uniform(), 0.0};
      queries.push_back(std::move(q));
    }
    const auto trace = compose_scene(scene.context, queries, retriever);
    const std::string room = style_name(scene.style);
    for (const auto& step : trace.steps) {
      matches += style_of.at(step.asset_id) == room;
      ++total;
    }
  }
  return double(matches) / double(total);
}

nlohmann::json run_manifest(const TrainConfig& config, TrainState& state) {
  nlohmann::json sums;
  for (const auto& [group, sum] : group_checksums(state.model)) sums[group] = hex64(sum);
  nlohmann::json j = {{"config", config.to_json()},
                      {"seed", state.seed},
                      {"step", state.step},
                      {"stage_completed", state.stage_completed},
                      {"checksums", sums}};
  if (!state.loss_history.empty()) {
    j["first_loss"] = state.loss_history.front();
    j["last_loss"] = state.loss_history.back();
  }
  return j;
}

}  // namespace layoutret::inline LAYOUTRET_ABI
