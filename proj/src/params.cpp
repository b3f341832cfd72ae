#include "layoutret/params.hpp"

#include <cstring>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

void fnv(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

void zero_all(const ParamList& params) {
  for (const auto& p : params) p.tensor->fill(0);
}

std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params) {
    fnv(h, p.name.data(), p.name.size());
    const std::uint64_t shape[2] = {p.tensor->rows(), p.tensor->cols()};
    fnv(h, shape, sizeof(shape));
    fnv(h, p.tensor->data().data(), p.tensor->size() * sizeof(real));
  }
  return h;
}

void copy_values(const ParamList& from, const ParamList& to) {
  if (from.size() != to.size()) {
    throw ShapeError("copy_values: tensor count " + std::to_string(from.size()) + " vs " +
                     std::to_string(to.size()));
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].tensor->rows() != to[i].tensor->rows() ||
        from[i].tensor->cols() != to[i].tensor->cols()) {
      throw ShapeError("copy_values: shape mismatch on " + from[i].name);
    }
    *to[i].tensor = *from[i].tensor;
  }
}

}  // namespace layoutret::inline LAYOUTRET_ABI
