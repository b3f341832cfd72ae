#include "layoutret/model.hpp"

#include "layoutret/binary_io.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {
constexpr char kMagic[4] = {'E', 'S', 'G', 'N'};
constexpr std::string_view kMetaPrefix = "meta:";
}  // namespace

std::optional<HeadChoice> parse_head_choice(std::string_view s) {
  if (s == "auto") return HeadChoice::Auto;
  if (s == "layout-free") return HeadChoice::LayoutFree;
  if (s == "scene-aware") return HeadChoice::SceneAware;
  return std::nullopt;
}

TowerConfig ModelConfig::tower() const {
  return {sem_dim, dim, width, variant, missing, lambda_init};
}

SceneEncoderConfig ModelConfig::layout() const {
  return {sem_dim, dim, relation_dim, layout_layers, width};
}

RetrievalModel RetrievalModel::init(const ModelConfig& config, std::uint64_t seed) {
  RetrievalModel m;
  m.config = config;
  Rng root(seed, 0x6d6f64656cull);
  Rng qrng = root.split(1);
  Rng grng = root.split(2);
  Rng lrng = root.split(3);
  m.query = Tower::init(config.tower(), qrng);
  m.gallery = Tower::init(config.tower(), grng);
  m.layout = SceneEncoder::init(config.layout(), lrng);
  return m;
}

const Tower& RetrievalModel::head(HeadChoice choice, bool has_layout) const {
  switch (choice) {
    case HeadChoice::LayoutFree:
      return query;
    case HeadChoice::SceneAware:
      return scene ? *scene : query;
    case HeadChoice::Auto:
      return (scene && has_layout) ? *scene : query;
  }
  return query;
}

ParamList RetrievalModel::params() {
  ParamList out;
  query.collect("query", out);
  if (scene) scene->collect("scene", out);
  gallery.collect("gallery", out);
  layout.collect("layout", out);
  return out;
}

RetrievalModel RetrievalModel::zeros_like() const {
  RetrievalModel z;
  z.config = config;
  z.query = query.zeros_like();
  if (scene) z.scene = scene->zeros_like();
  z.gallery = gallery.zeros_like();
  z.layout = layout.zeros_like();
  return z;
}

const std::vector<float>* CheckpointData::find(std::string_view name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return &v;
  }
  return nullptr;
}

std::string checkpoint_to_bytes(const CheckpointData& data) {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(data.layers);
  w.put<std::uint32_t>(data.hidden_dim);
  w.put<std::uint32_t>(data.edge_dim);
  w.put<std::uint32_t>(data.sem_dim);
  auto record = [&](std::string_view name, const std::vector<float>& values) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint64_t>(values.size());
    for (float v : values) w.put<float>(v);
  };
  for (const auto& [k, v] : data.meta) record(std::string(kMetaPrefix) + k + "=" + v, {});
  for (const auto& [name, values] : data.tensors) record(name, values);
  return w.take();
}

CheckpointData checkpoint_from_bytes(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_bytes(4, "magic") != std::string_view(kMagic, 4)) {
    throw FormatError("bad checkpoint magic at offset 0");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 4");
  }
  CheckpointData data;
  data.layers = r.get<std::uint32_t>("layers");
  data.hidden_dim = r.get<std::uint32_t>("hidden dim");
  data.edge_dim = r.get<std::uint32_t>("edge dim");
  data.sem_dim = r.get<std::uint32_t>("semantic dim");
  while (!r.at_end()) {
    const std::size_t at = r.offset();
    const auto len = r.get<std::uint32_t>("tensor name length");
    std::string name(r.get_bytes(len, "tensor name"));
    const auto count = r.get<std::uint64_t>("tensor element count");
    if (count > bytes.size()) {
      throw FormatError("tensor '" + name + "' at offset " + std::to_string(at) +
                        " claims more elements than the file holds");
    }
    std::vector<float> values(count);
    for (auto& v : values) v = r.get<float>("tensor payload");
    if (name.starts_with(kMetaPrefix)) {
      const auto eq = name.find('=');
      if (eq == std::string::npos || count != 0) {
        throw FormatError("malformed metadata record at offset " + std::to_string(at));
      }
      data.meta[name.substr(kMetaPrefix.size(), eq - kMetaPrefix.size())] = name.substr(eq + 1);
      continue;
    }
    data.tensors.emplace_back(std::move(name), std::move(values));
  }
  return data;
}

void append_params(CheckpointData& data, const ParamList& params) {
  for (const auto& p : params) {
    std::vector<float> values(p.tensor->size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(p.tensor->data()[i]);
    data.tensors.emplace_back(p.name, std::move(values));
  }
}

void load_params(const CheckpointData& data, const ParamList& params) {
  for (const auto& p : params) {
    const auto* values = data.find(p.name);
    if (!values) throw FormatError("checkpoint is missing tensor '" + p.name + "'");
    if (values->size() != p.tensor->size()) {
      throw FormatError("tensor '" + p.name + "' has " + std::to_string(values->size()) +
                        " elements, expected " + std::to_string(p.tensor->size()));
    }
    for (std::size_t i = 0; i < values->size(); ++i) p.tensor->data()[i] = static_cast<real>((*values)[i]);
  }
}

ModelConfig config_from_meta(const CheckpointData& data) {
  ModelConfig c;
  c.sem_dim = data.sem_dim;
  c.dim = data.hidden_dim;
  c.layout_layers = data.layers;
  if (data.edge_dim < 2) throw FormatError("edge dimension must be at least 2");
  c.relation_dim = data.edge_dim - 2;
  auto get = [&](const char* key) -> const std::string& {
    const auto it = data.meta.find(key);
    if (it == data.meta.end()) throw FormatError(std::string("checkpoint lacks metadata '") + key + "'");
    return it->second;
  };
  try {
    c.width = std::stoul(get("width"));
  } catch (const std::logic_error&) {
    throw FormatError("bad 'width' metadata");
  }
  const auto variant = parse_fusion_variant(get("fusion"));
  const auto missing = parse_missing_policy(get("missing"));
  if (!variant || !missing) throw FormatError("unknown fusion metadata in checkpoint");
  c.variant = *variant;
  c.missing = *missing;
  return c;
}

CheckpointData model_to_checkpoint(RetrievalModel& model) {
  CheckpointData data;
  const auto lc = model.config.layout();
  data.layers = static_cast<std::uint32_t>(lc.layers);
  data.hidden_dim = static_cast<std::uint32_t>(lc.hidden_dim);
  data.edge_dim = static_cast<std::uint32_t>(lc.edge_dim());
  data.sem_dim = static_cast<std::uint32_t>(lc.sem_dim);
  data.meta["width"] = std::to_string(model.config.width);
  data.meta["fusion"] = std::string(to_string(model.config.variant));
  data.meta["missing"] = std::string(to_string(model.config.missing));
  data.meta["scene_head"] = model.scene ? "1" : "0";
  append_params(data, model.params());
  return data;
}

RetrievalModel model_from_checkpoint(const CheckpointData& data) {
  const ModelConfig config = config_from_meta(data);
  RetrievalModel model = RetrievalModel::init(config, 0);
  const auto it = data.meta.find("scene_head");
  if (it != data.meta.end() && it->second == "1") model.scene = model.query;
  load_params(data, model.params());
  return model;
}

}  // namespace layoutret::inline LAYOUTRET_ABI
