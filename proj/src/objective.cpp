#include "layoutret/objective.hpp"

#include <cmath>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

namespace {

void check_batch(const std::vector<Vector>& q, const std::vector<Vector>& g, real tau) {
  if (!(tau > 0)) throw ConfigError("temperature must be positive");
  if (q.empty()) throw ShapeError("contrastive batch is empty");
  require_dim(q.size(), g.size(), "contrastive batch rows");
  const std::size_t d = q.front().size();
  for (const auto& v : q) require_dim(d, v.size(), "query embedding");
  for (const auto& v : g) require_dim(d, v.size(), "gallery embedding");
}

DenseMatrix logits_of(const std::vector<Vector>& q, const std::vector<Vector>& g, real tau) {
  DenseMatrix s(q.size(), g.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) s(i, j) = similarity(q[i], g[j]) / tau;
  }
  return s;
}

// Chain d loss / d logits through logits = q_i . g_j / tau.
void embed_grads(const DenseMatrix& glogits, const std::vector<Vector>& q,
                 const std::vector<Vector>& g, real tau, LossResult& out) {
  const std::size_t n = q.size();
  const std::size_t d = q.front().size();
  out.grad_queries.assign(n, Vector(d, real(0)));
  out.grad_gallery.assign(n, Vector(d, real(0)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const real c = glogits(i, j) / tau;
      if (c == real(0)) continue;
      axpy(c, g[j], out.grad_queries[i]);
      axpy(c, q[i], out.grad_gallery[j]);
    }
  }
}

}  // namespace

real similarity(std::span<const real> a, std::span<const real> b) { return dot(a, b); }

real infonce_rows(const DenseMatrix& logits, DenseMatrix* grad) {
  const std::size_t n = logits.rows();
  require_dim(n, logits.cols(), "infonce logits");
  if (grad) *grad = logits.zeros_like();
  real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const real lse = stable_log_sum_exp(row);
    total += lse - row[i];
    if (grad) {
      for (std::size_t j = 0; j < n; ++j) {
        (*grad)(i, j) = (std::exp(row[j] - lse) - (i == j ? real(1) : real(0))) /
                        static_cast<real>(n);
      }
    }
  }
  return total / static_cast<real>(n);
}

real infonce_cols(const DenseMatrix& logits, DenseMatrix* grad) {
  const std::size_t n = logits.rows();
  require_dim(n, logits.cols(), "infonce logits");
  DenseMatrix t(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) t(j, i) = logits(i, j);
  }
  DenseMatrix gt;
  const real loss = infonce_rows(t, grad ? &gt : nullptr);
  if (grad) {
    *grad = logits.zeros_like();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) (*grad)(i, j) = gt(j, i);
    }
  }
  return loss;
}

LossResult pretrain_loss(const std::vector<Vector>& queries, const std::vector<Vector>& gallery,
                         real temperature) {
  check_batch(queries, gallery, temperature);
  const DenseMatrix s = logits_of(queries, gallery, temperature);
  DenseMatrix gs;
  LossResult out;
  out.loss = infonce_rows(s, &gs);
  embed_grads(gs, queries, gallery, temperature, out);
  return out;
}

LossResult bidirectional_loss(const std::vector<Vector>& queries,
                              const std::vector<Vector>& gallery, real temperature) {
  check_batch(queries, gallery, temperature);
  const DenseMatrix s = logits_of(queries, gallery, temperature);
  DenseMatrix grow, gcol;
  const real q2g = infonce_rows(s, &grow);
  const real g2q = infonce_cols(s, &gcol);
  LossResult out;
  out.loss = (q2g + g2q) / 2;
  DenseMatrix gs = s.zeros_like();
  for (std::size_t k = 0; k < gs.size(); ++k) {
    gs.data()[k] = (grow.data()[k] + gcol.data()[k]) / 2;
  }
  embed_grads(gs, queries, gallery, temperature, out);
  return out;
}

}  // namespace layoutret::inline LAYOUTRET_ABI
