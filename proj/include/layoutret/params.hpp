#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutret/tensor.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

struct NamedTensor {
  std::string name;
  DenseMatrix* tensor;
};

/// Flat, ordered view over the learnable tensors of a model. A gradient
/// object of the same model type yields a list with identical names and
/// shapes, which is how parameters and gradients are paired.
using ParamList = std::vector<NamedTensor>;

void zero_all(const ParamList& params);

/// FNV-1a over names, shapes and raw bytes of every tensor.
std::uint64_t checksum(const ParamList& params);

/// Copy values between two lists with matching names and shapes.
void copy_values(const ParamList& from, const ParamList& to);

}  // namespace layoutret::inline LAYOUTRET_ABI
