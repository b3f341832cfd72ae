#pragma once

#include <span>
#include <vector>

#include "layoutret/tensor.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

/// Default contrastive temperature.
inline constexpr double kDefaultTemperature = 0.5;

/// Dot product of two unit vectors.
real similarity(std::span<const real> a, std::span<const real> b);

struct LossResult {
  real loss = 0;
  std::vector<Vector> grad_queries;
  std::vector<Vector> grad_gallery;
};

/// In-batch InfoNCE, query to gallery: mean over rows i of
/// -log softmax_j(sim(q_i, g_j) / tau) at j = i.
LossResult pretrain_loss(const std::vector<Vector>& queries, const std::vector<Vector>& gallery,
                         real temperature);

/// Mean of the query-to-gallery and gallery-to-query InfoNCE terms.
LossResult bidirectional_loss(const std::vector<Vector>& queries,
                              const std::vector<Vector>& gallery, real temperature);

/// Row-wise InfoNCE on an n x n logit matrix (diagonal positives); returns
/// the mean loss and writes d loss / d logits into `grad` when non-null.
real infonce_rows(const DenseMatrix& logits, DenseMatrix* grad = nullptr);
/// Column-wise variant (softmax over each column).
real infonce_cols(const DenseMatrix& logits, DenseMatrix* grad = nullptr);

}  // namespace layoutret::inline LAYOUTRET_ABI
