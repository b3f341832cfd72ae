#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "layoutret/fusion.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

struct GalleryEntry {
  std::string asset_id;
  std::string category;
  std::string style;
  Vector embedding;

  friend bool operator==(const GalleryEntry&, const GalleryEntry&) = default;
};

struct SearchHit {
  std::string asset_id;
  real score = 0;
  std::size_t index = 0;  // position in the gallery

  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

struct AssetRecord {
  std::string asset_id;
  ModalityBundle bundle;
  std::string category;
  std::string style;
};

/// Immutable store of unit-norm asset embeddings with exact top-k search.
class Gallery {
 public:
  Gallery() = default;
  explicit Gallery(std::size_t dim) : dim_(dim) {}

  /// Validates id length (<= 64 bytes), uniqueness, dimension and unit norm
  /// (within 1e-4). Throws GalleryError.
  static Gallery from_entries(std::size_t dim, std::vector<GalleryEntry> entries);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<GalleryEntry>& entries() const { return entries_; }
  const GalleryEntry* find(std::string_view asset_id) const;

  /// The k best entries by dot product, ordered by (-score, asset_id). `shards`
  /// > 1 scans contiguous slices on worker threads and merges the partial
  /// results; the output is identical to the single-threaded scan.
  std::vector<SearchHit> topk(std::span<const real> query, std::size_t k,
                              std::size_t shards = 1) const;

  friend bool operator==(const Gallery&, const Gallery&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<GalleryEntry> entries_;
};

/// One embedding per asset through the gallery tower, in input order.
Gallery build_gallery(const std::vector<AssetRecord>& assets, const Tower& gallery_tower);

/// Binary format (little-endian): "MFGA", u32 version, u32 dim, u64 count,
/// then per entry u16-length-prefixed id, category and style followed by
/// dim f32 values.
inline constexpr std::uint32_t kGalleryFormatVersion = 1;
std::string gallery_to_bytes(const Gallery& g);
Gallery gallery_from_bytes(std::string_view bytes);
void save_gallery(const Gallery& g, const std::filesystem::path& path);
Gallery load_gallery(const std::filesystem::path& path);

}  // namespace layoutret::inline LAYOUTRET_ABI
