#pragma once

#include "simclr/tensorgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace simclr::contrastive {

using tg::Matrix;
using tg::Tensor;
using tg::Vector;

enum class Metric { cosine, dot };
enum class LossKind { nt_xent, nt_logistic, margin_triplet };
enum class NegativesMode { both_views, one_view };
enum class Mining { none, semi_hard };

std::string to_string(LossKind kind);
std::string to_string(NegativesMode mode);
std::string to_string(Mining mining);
LossKind parse_loss_kind(const std::string& name);
NegativesMode parse_negatives_mode(const std::string& name);
Mining parse_mining(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::nt_xent;
  double temperature = 0.1;
  double margin = 0.4;  // margin_triplet, and the window for semi-hard mining
  bool l2_normalize = true;
  NegativesMode negatives = NegativesMode::both_views;
  Mining mining = Mining::none;

  void validate() const;
};

/// Pairwise similarities of the rows of z. The diagonal holds self-similarity
/// and is never used as a candidate.
template <typename Scalar>
struct SimilarityMatrix {
  Matrix<Scalar> values;
  Metric metric = Metric::cosine;

  Index size() const { return values.rows(); }
};

struct ContrastiveMetrics {
  double accuracy = 0;  // fraction of anchors whose positive beats every negative
  double entropy = 0;   // mean softmax entropy over candidates, nats
};

/// Rows 2k and 2k+1 are the two views of item k.
inline Index positive_of(Index i) { return i ^ 1; }

/// Negatives of anchor i among n = 2N rows. both_views: all rows except i and
/// its positive. one_view: only rows from the positive's view.
inline std::vector<Index> negatives_of(Index i, Index n, NegativesMode mode) {
  std::vector<Index> out;
  const Index pos = positive_of(i);
  for (Index j = 0; j < n; ++j) {
    if (j == i || j == pos) continue;
    if (mode == NegativesMode::one_view && (j & 1) != (pos & 1)) continue;
    out.push_back(j);
  }
  return out;
}

namespace detail {

template <typename Scalar>
void require_pairs(const Matrix<Scalar>& z, const char* who) {
  if (z.rows() == 0) throw ContractError(std::string(who) + ": empty batch");
  if (z.rows() % 2 != 0) {
    throw DimensionError(std::string(who) + ": expected 2N rows, got " + std::to_string(z.rows()));
  }
}

/// Row-normalized copy; zero rows stay zero. Also returns the row norms.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& z, Vector<Scalar>& norms) {
  norms = z.rowwise().norm();
  Matrix<Scalar> u = z;
  for (Index i = 0; i < z.rows(); ++i) {
    if (norms[i] > Scalar(0)) u.row(i) /= norms[i];
  }
  return u;
}

/// log(sigmoid(x)) without overflow.
template <typename Scalar>
Scalar log_sigmoid(Scalar x) {
  return -(std::max(-x, Scalar(0)) + std::log1p(std::exp(-std::abs(x))));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
SimilarityMatrix<Scalar> similarity_matrix(const Matrix<Scalar>& z, Metric metric = Metric::cosine) {
  if (z.rows() == 0) throw ContractError("similarity_matrix: empty batch");
  SimilarityMatrix<Scalar> s;
  s.metric = metric;
  if (metric == Metric::cosine) {
    Vector<Scalar> norms;
    const Matrix<Scalar> u = detail::normalize_rows(z, norms);
    s.values = u * u.transpose();
  } else {
    s.values = z * z.transpose();
  }
  return s;
}

/// Accuracy and entropy of softmax(sims / tau) over each anchor's candidates
/// (positive plus negatives).
template <typename Scalar>
ContrastiveMetrics contrastive_metrics(const SimilarityMatrix<Scalar>& sims, double tau,
                                       NegativesMode mode = NegativesMode::both_views) {
  if (tau <= 0) throw ContractError("contrastive_metrics: temperature must be > 0");
  const Index n = sims.size();
  if (n == 0 || n % 2 != 0) throw DimensionError("contrastive_metrics: expected 2N rows");
  double correct = 0, entropy = 0;
  std::vector<double> logits;
  for (Index i = 0; i < n; ++i) {
    const Index pos = positive_of(i);
    const auto negs = negatives_of(i, n, mode);
    const double sp = static_cast<double>(sims.values(i, pos));
    bool wins = true;
    logits.assign(1, sp / tau);
    for (Index j : negs) {
      const double sj = static_cast<double>(sims.values(i, j));
      if (sj >= sp) wins = false;
      logits.push_back(sj / tau);
    }
    correct += wins ? 1.0 : 0.0;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - mx);
    const double log_z = mx + std::log(z);
    double h = 0;
    for (double l : logits) {
      const double p = std::exp(l - log_z);
      if (p > 0) h -= p * (l - log_z);
    }
    entropy += h;
  }
  return {correct / static_cast<double>(n), entropy / static_cast<double>(n)};
}

/// Negative chosen by semi-hard mining for one anchor. Semi-hard means
/// sim < positive sim and positive sim - sim < margin; the closest such
/// negative (highest sim) is kept. With no semi-hard candidate the hardest
/// negative is returned instead.
template <typename Scalar>
std::vector<Index> semi_hard_select(std::span<const Scalar> sims, Index positive, std::span<const Index> negatives,
                                    double margin) {
  if (negatives.empty()) throw ContractError("semi_hard_select: no negative candidates");
  if (positive < 0 || positive >= static_cast<Index>(sims.size())) {
    throw ContractError("semi_hard_select: positive index out of range");
  }
  const double sp = static_cast<double>(sims[static_cast<std::size_t>(positive)]);
  Index best_semi = -1, hardest = -1;
  double best_semi_sim = -std::numeric_limits<double>::infinity();
  double hardest_sim = -std::numeric_limits<double>::infinity();
  for (Index j : negatives) {
    const double s = static_cast<double>(sims[static_cast<std::size_t>(j)]);
    if (s > hardest_sim) {
      hardest_sim = s;
      hardest = j;
    }
    if (s < sp && sp - s < margin && s > best_semi_sim) {
      best_semi_sim = s;
      best_semi = j;
    }
  }
  return {best_semi >= 0 ? best_semi : hardest};
}

template <typename Scalar>
struct LossOutput {
  Scalar loss = 0;
  Matrix<Scalar> grad;             // d loss / d z, same shape as z
  std::vector<Scalar> per_anchor;  // loss contribution of each row as anchor (before averaging)
  ContrastiveMetrics metrics;
};

/// Batch loss over z[2N, D] with rows (2k, 2k+1) the two views of item k.
/// Every loss here is the quantity to minimize: the negated form of the
/// log-likelihood style objectives. The result is the mean over the 2N
/// anchors, so for NT-Xent it is the average of l(2k,2k+1) and l(2k+1,2k)
/// over items.
template <typename Scalar>
LossOutput<Scalar> contrastive_loss(const Matrix<Scalar>& z, const LossConfig& cfg) {
  cfg.validate();
  detail::require_pairs(z, "contrastive_loss");
  const Index n = z.rows();
  const auto tau = static_cast<Scalar>(cfg.temperature);
  const auto margin = static_cast<Scalar>(cfg.margin);

  Vector<Scalar> norms;
  const Matrix<Scalar> u = cfg.l2_normalize ? detail::normalize_rows(z, norms) : z;
  SimilarityMatrix<Scalar> sims{u * u.transpose(), cfg.l2_normalize ? Metric::cosine : Metric::dot};

  // dS holds d loss / d S for the raw similarity S = u u^T.
  Matrix<Scalar> dS = Matrix<Scalar>::Zero(n, n);
  LossOutput<Scalar> out;
  out.per_anchor.assign(static_cast<std::size_t>(n), Scalar(0));
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);

  std::vector<Scalar> row(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Index pos = positive_of(i);
    std::vector<Index> negs = negatives_of(i, n, cfg.negatives);
    if (cfg.mining == Mining::semi_hard && !negs.empty()) {
      for (Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = sims.values(i, j);
      negs = semi_hard_select<Scalar>(row, pos, negs, cfg.margin);
    }
    const Scalar sp = sims.values(i, pos);
    Scalar li = 0;
    switch (cfg.kind) {
      case LossKind::nt_xent: {
        Scalar mx = sp / tau;
        for (Index j : negs) mx = std::max(mx, sims.values(i, j) / tau);
        Scalar zsum = std::exp(sp / tau - mx);
        for (Index j : negs) zsum += std::exp(sims.values(i, j) / tau - mx);
        const Scalar log_z = mx + std::log(zsum);
        li = log_z - sp / tau;
        dS(i, pos) += inv_n * (std::exp(sp / tau - log_z) - Scalar(1)) / tau;
        for (Index j : negs) dS(i, j) += inv_n * std::exp(sims.values(i, j) / tau - log_z) / tau;
        break;
      }
      case LossKind::nt_logistic: {
        li = -detail::log_sigmoid(sp / tau);
        dS(i, pos) += -inv_n * detail::sigmoid(-sp / tau) / tau;
        for (Index j : negs) {
          const Scalar sn = sims.values(i, j);
          li -= detail::log_sigmoid(-sn / tau);
          dS(i, j) += inv_n * detail::sigmoid(sn / tau) / tau;
        }
        break;
      }
      case LossKind::margin_triplet: {
        for (Index j : negs) {
          const Scalar sn = sims.values(i, j);
          const Scalar gap = sp - sn;
          if (gap < margin) {
            li += margin - gap;
            dS(i, j) += inv_n;
            dS(i, pos) -= inv_n;
          }
        }
        break;
      }
    }
    out.per_anchor[static_cast<std::size_t>(i)] = li;
    out.loss += li;
  }
  out.loss *= inv_n;

  // S = u u^T, so dL/du = (dS + dS^T) u.
  const Matrix<Scalar> du = (dS + dS.transpose()) * u;
  if (cfg.l2_normalize) {
    out.grad.resize(n, z.cols());
    for (Index i = 0; i < n; ++i) {
      if (norms[i] > Scalar(0)) {
        out.grad.row(i) = (du.row(i) - u.row(i).dot(du.row(i)) * u.row(i)) / norms[i];
      } else {
        out.grad.row(i).setZero();
      }
    }
  } else {
    out.grad = du;
  }
  out.metrics = contrastive_metrics(sims, cfg.temperature, cfg.negatives);
  return out;
}

/// NT-Xent over z[2N, D].
template <typename Scalar>
LossOutput<Scalar> nt_xent(const Matrix<Scalar>& z, double tau, bool l2_normalize = true,
                           NegativesMode negatives = NegativesMode::both_views) {
  LossConfig cfg;
  cfg.kind = LossKind::nt_xent;
  cfg.temperature = tau;
  cfg.l2_normalize = l2_normalize;
  cfg.negatives = negatives;
  return contrastive_loss(z, cfg);
}

/// Loss and gradients for a single anchor u with one positive and a set of
/// negatives (rows of v_neg). Inputs are used as given; normalize first if
/// cosine similarity is intended.
template <typename Scalar>
struct TripleOutput {
  Scalar loss = 0;
  Vector<Scalar> grad_u, grad_pos;
  Matrix<Scalar> grad_neg;
};

/// -log sigmoid(u.v+/tau) - sum log sigmoid(-u.v-/tau).
template <typename Scalar>
TripleOutput<Scalar> nt_logistic(const Vector<Scalar>& u, const Vector<Scalar>& v_pos, const Matrix<Scalar>& v_neg,
                                 double tau) {
  if (tau <= 0) throw ContractError("nt_logistic: temperature must be > 0");
  if (u.size() != v_pos.size() || v_neg.cols() != u.size()) throw DimensionError("nt_logistic: dimension mismatch");
  const auto t = static_cast<Scalar>(tau);
  TripleOutput<Scalar> out;
  const Scalar sp = u.dot(v_pos);
  out.loss = -detail::log_sigmoid(sp / t);
  const Scalar wp = detail::sigmoid(-sp / t) / t;
  out.grad_u = -wp * v_pos;
  out.grad_pos = -wp * u;
  out.grad_neg.resize(v_neg.rows(), v_neg.cols());
  for (Index j = 0; j < v_neg.rows(); ++j) {
    const Scalar sn = v_neg.row(j).dot(u);
    out.loss -= detail::log_sigmoid(-sn / t);
    const Scalar wn = detail::sigmoid(sn / t) / t;
    out.grad_u += wn * v_neg.row(j).transpose();
    out.grad_neg.row(j) = wn * u.transpose();
  }
  return out;
}

/// sum over negatives of max(u.v- - u.v+ + m, 0). Zero loss and gradient once
/// the gap u.v+ - u.v- reaches m.
template <typename Scalar>
TripleOutput<Scalar> margin_triplet(const Vector<Scalar>& u, const Vector<Scalar>& v_pos, const Matrix<Scalar>& v_neg,
                                    double m) {
  if (m < 0) throw ContractError("margin_triplet: margin must be >= 0");
  if (u.size() != v_pos.size() || v_neg.cols() != u.size()) throw DimensionError("margin_triplet: dimension mismatch");
  const auto margin = static_cast<Scalar>(m);
  TripleOutput<Scalar> out;
  out.grad_u = Vector<Scalar>::Zero(u.size());
  out.grad_pos = Vector<Scalar>::Zero(u.size());
  out.grad_neg = Matrix<Scalar>::Zero(v_neg.rows(), v_neg.cols());
  const Scalar sp = u.dot(v_pos);
  for (Index j = 0; j < v_neg.rows(); ++j) {
    const Scalar gap = sp - v_neg.row(j).dot(u);
    if (gap >= margin) continue;
    out.loss += margin - gap;
    out.grad_u += v_neg.row(j).transpose() - v_pos;
    out.grad_pos -= u;
    out.grad_neg.row(j) = u.transpose();
  }
  return out;
}

/// Loss node on the tape. The gradient is the analytic one above; metrics of
/// the batch are written to `metrics` when given.
template <typename Scalar>
Tensor<Scalar> contrastive_loss(tg::Tape<Scalar>& tape, const Tensor<Scalar>& z, const LossConfig& cfg,
                                ContrastiveMetrics* metrics = nullptr) {
  if (z.rank() != 2) throw DimensionError("contrastive_loss: z must be rank 2, got " + tg::to_string(z.shape()));
  return tg::scalar_function<Scalar>(
      tape, z, "contrastive_loss", [&](const Tensor<Scalar>& x) {
        const Matrix<Scalar> m = x.matrix(x.dim(0), x.dim(1));
        LossOutput<Scalar> r = contrastive_loss(m, cfg);
        if (metrics) *metrics = r.metrics;
        Vector<Scalar> g = Eigen::Map<const Vector<Scalar>>(r.grad.data(), r.grad.size());
        return std::pair<Scalar, Vector<Scalar>>{r.loss, std::move(g)};
      });
}

}  // namespace simclr::contrastive
