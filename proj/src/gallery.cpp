#include "layoutret/gallery.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

#include "layoutret/binary_io.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'G', 'A'};
constexpr std::size_t kMaxIdBytes = 64;
constexpr double kNormTolerance = 1e-4;

bool ranks_before(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.asset_id < b.asset_id;
}

std::vector<SearchHit> scan(const std::vector<GalleryEntry>& entries, std::size_t begin,
                            std::size_t end, std::span<const real> query, std::size_t k) {
  std::vector<SearchHit> hits;
  hits.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    hits.push_back({entries[i].asset_id, dot(entries[i].embedding, query), i});
  }
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    ranks_before);
  hits.resize(keep);
  return hits;
}

}  // namespace

Gallery Gallery::from_entries(std::size_t dim, std::vector<GalleryEntry> entries) {
  std::set<std::string_view> ids;
  for (const auto& e : entries) {
    if (e.asset_id.size() > kMaxIdBytes) throw GalleryError("asset id longer than 64 bytes: " + e.asset_id);
    if (!ids.insert(e.asset_id).second) throw GalleryError("duplicate asset id '" + e.asset_id + "'");
    if (e.embedding.size() != dim) {
      throw GalleryError("asset '" + e.asset_id + "' has dimension " +
                         std::to_string(e.embedding.size()) + ", gallery dimension is " +
                         std::to_string(dim));
    }
    double sq = 0;
    for (real v : e.embedding) sq += double(v) * v;
    if (!(std::abs(std::sqrt(sq) - 1.0) <= kNormTolerance)) {
      throw GalleryError("asset '" + e.asset_id + "' embedding is not unit norm");
    }
  }
  Gallery g(dim);
  g.entries_ = std::move(entries);
  return g;
}

const GalleryEntry* Gallery::find(std::string_view asset_id) const {
  for (const auto& e : entries_) {
    if (e.asset_id == asset_id) return &e;
  }
  return nullptr;
}

std::vector<SearchHit> Gallery::topk(std::span<const real> query, std::size_t k,
                                     std::size_t shards) const {
  if (entries_.empty()) throw RetrievalError("gallery is empty");
  if (k == 0) throw RetrievalError("k must be at least 1");
  require_dim(dim_, query.size(), "topk_search query");
  shards = std::clamp<std::size_t>(shards, 1, entries_.size());
  if (shards == 1) return scan(entries_, 0, entries_.size(), query, k);

  std::vector<std::vector<SearchHit>> partial(shards);
  {
    std::vector<std::jthread> workers;
    const std::size_t per = (entries_.size() + shards - 1) / shards;
    for (std::size_t s = 0; s < shards; ++s) {
      const std::size_t begin = std::min(entries_.size(), s * per);
      const std::size_t end = std::min(entries_.size(), begin + per);
      workers.emplace_back([&, s, begin, end] { partial[s] = scan(entries_, begin, end, query, k); });
    }
  }
  std::vector<SearchHit> merged;
  for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
  const std::size_t keep = std::min(k, merged.size());
  std::partial_sort(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(keep),
                    merged.end(), ranks_before);
  merged.resize(keep);
  return merged;
}

Gallery build_gallery(const std::vector<AssetRecord>& assets, const Tower& gallery_tower) {
  std::vector<GalleryEntry> entries;
  entries.reserve(assets.size());
  std::set<std::string_view> ids;
  for (const auto& a : assets) {
    if (!ids.insert(a.asset_id).second) throw GalleryError("duplicate asset id '" + a.asset_id + "'");
    entries.push_back(
        {a.asset_id, a.category, a.style, gallery_tower.encode_gallery_asset(a.bundle)});
  }
  return Gallery::from_entries(gallery_tower.config().dim, std::move(entries));
}

std::string gallery_to_bytes(const Gallery& g) {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kGalleryFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(g.dim()));
  w.put<std::uint64_t>(g.size());
  for (const auto& e : g.entries()) {
    w.put_string16(e.asset_id, "asset id");
    w.put_string16(e.category, "category");
    w.put_string16(e.style, "style");
    for (real v : e.embedding) w.put<float>(static_cast<float>(v));
  }
  return w.take();
}

Gallery gallery_from_bytes(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.get_bytes(4, "magic") != std::string_view(kMagic, 4)) {
    throw FormatError("bad gallery magic at offset 0");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kGalleryFormatVersion) {
    throw FormatError("unsupported gallery version " + std::to_string(version) + " at offset 4");
  }
  const auto dim = r.get<std::uint32_t>("dim");
  const auto count = r.get<std::uint64_t>("count");
  std::vector<GalleryEntry> entries;
  for (std::uint64_t i = 0; i < count; ++i) {
    GalleryEntry e;
    e.asset_id = r.get_string16("asset id");
    e.category = r.get_string16("category");
    e.style = r.get_string16("style");
    e.embedding.resize(dim);
    for (auto& v : e.embedding) v = static_cast<real>(r.get<float>("embedding"));
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after gallery at offset " + std::to_string(r.offset()));
  }
  try {
    return Gallery::from_entries(dim, std::move(entries));
  } catch (const GalleryError& e) {
    throw FormatError(std::string("invalid gallery contents: ") + e.what());
  }
}

void save_gallery(const Gallery& g, const std::filesystem::path& path) {
  write_file(path, gallery_to_bytes(g));
}

Gallery load_gallery(const std::filesystem::path& path) { return gallery_from_bytes(read_file(path)); }

}  // namespace layoutret::inline LAYOUTRET_ABI
