#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dietcl/core.hpp"
#include "dietcl/model.hpp"

namespace dietcl {

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Scalar loss with its gradient with respect to the first argument
/// (logits or predicted pixels).
template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  MatrixT<Scalar> grad;
};

/// How the reconstruction error is normalised.
enum class ReconstructionReduction {
  mean,  // mean over masked patches, batch and patch elements
  sum,   // raw double sum of squared patch errors
};

struct LossConfig {
  double alpha_r = 50.0;
  int b_l = 16;
  int b_m = 16;
  int b_u = 16;
  ReconstructionReduction reduction = ReconstructionReduction::mean;

  void validate() const {
    if (!(alpha_r >= 0.0) || !std::isfinite(alpha_r)) throw ConfigError("alpha_r must be finite and >= 0");
    if (b_l < 1 || b_m < 1 || b_u < 1) throw ConfigError("loss batch sizes must be >= 1");
  }
};

struct LossReport {
  double l_r = 0;
  double l_m = 0;
  double l_b = 0;
  double total = 0;
  int n_labeled = 0;
  int n_unlabeled = 0;
  int n_buffer = 0;
};

/// Mean (or sum) squared error between predicted and true masked patches.
/// An empty masked set contributes exactly 0.
template <typename Scalar>
LossValue<Scalar> reconstruction_loss(const MatrixT<Scalar>& predictions, const MatrixT<Scalar>& targets,
                                      ReconstructionReduction reduction = ReconstructionReduction::mean) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw InputError("reconstruction_loss: prediction and target shapes differ");
  }
  LossValue<Scalar> out;
  out.grad = MatrixT<Scalar>::Zero(predictions.rows(), predictions.cols());
  if (predictions.size() == 0) return out;
  const MatrixT<Scalar> diff = predictions - targets;
  const Scalar scale = reduction == ReconstructionReduction::mean ? Scalar(1) / static_cast<Scalar>(diff.size())
                                                                  : Scalar(1);
  out.value = diff.squaredNorm() * scale;
  out.grad = diff * (Scalar(2) * scale);
  return out;
}

namespace detail {

/// Cross-entropy over rows of `logits` restricted to `live` columns (all when
/// empty), divided by `normalizer`.
template <typename Scalar>
LossValue<Scalar> cross_entropy(const MatrixT<Scalar>& logits, std::span<const int> labels,
                                const std::vector<char>& live, Scalar normalizer) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw InputError("cross_entropy: one label per logit row required");
  }
  LossValue<Scalar> out;
  out.grad = MatrixT<Scalar>::Zero(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    Scalar max_logit = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (live.empty() || live[static_cast<std::size_t>(c)]) max_logit = std::max(max_logit, logits(r, c));
    }
    Scalar denom = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (live.empty() || live[static_cast<std::size_t>(c)]) {
        const Scalar e = std::exp(logits(r, c) - max_logit);
        out.grad(r, c) = e;
        denom += e;
      }
    }
    out.value += std::log(denom) - (logits(r, y) - max_logit);
    out.grad.row(r) /= denom;
    out.grad(r, y) -= Scalar(1);
  }
  out.value /= normalizer;
  out.grad /= normalizer;
  return out;
}

}  // namespace detail

/// Cross-entropy over the softmax restricted to `mask.active`, summed over
/// the batch and divided by b_l. Inactive columns receive exactly zero
/// gradient and do not influence the value.
template <typename Scalar>
LossValue<Scalar> masked_classification_loss(const MatrixT<Scalar>& logits, std::span<const int> labels,
                                             const ClassMask& mask, int b_l) {
  if (mask.active.empty()) throw ContractViolation("masked_classification_loss: empty class mask");
  if (b_l < 1) throw ContractViolation("masked_classification_loss: b_l must be >= 1");
  std::vector<char> live(static_cast<std::size_t>(logits.cols()), 0);
  for (int c : mask.active) {
    if (c < 0 || c >= logits.cols()) throw ContractViolation("class mask column out of range");
    live[static_cast<std::size_t>(c)] = 1;
  }
  for (int y : labels) {
    if (y < 0 || y >= logits.cols() || !live[static_cast<std::size_t>(y)]) {
      throw ContractViolation("masked_classification_loss: label " + std::to_string(y) + " is not an active class");
    }
  }
  return detail::cross_entropy<Scalar>(logits, labels, live, static_cast<Scalar>(b_l));
}

/// Plain cross-entropy over every seen class, summed and divided by b_m.
template <typename Scalar>
LossValue<Scalar> buffer_loss(const MatrixT<Scalar>& logits, std::span<const int> labels, int b_m) {
  if (b_m < 1) throw ContractViolation("buffer_loss: b_m must be >= 1");
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) {
      throw ContractViolation("buffer_loss: label " + std::to_string(y) + " is outside the head");
    }
  }
  return detail::cross_entropy<Scalar>(logits, labels, {}, static_cast<Scalar>(b_m));
}

/// alpha_r * l_r + l_m + l_b. Non-finite components raise NumericalError
/// tagged with the offending component.
inline double joint_loss(double l_r, double l_m, double l_b, const LossConfig& cfg) {
  const std::pair<const char*, double> parts[] = {{"l_r", l_r}, {"l_m", l_m}, {"l_b", l_b}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericalError(name, std::string("loss component ") + name + " is not finite");
  }
  return cfg.alpha_r * l_r + l_m + l_b;
}

}  // namespace dietcl
