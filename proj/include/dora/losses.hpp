#pragma once

#include <cstdint>
#include <span>

#include "dora/nn.hpp"

namespace dora::losses {

using nn::Matrix;
using nn::Vector;

struct PretextLossConfig {
  double alpha = 0.7;  // weight of cross-entropy; (1 - alpha) goes to contrastive
  double tau = 0.1;
  // L2-normalize embedding rows before the dot products.
  bool normalize_embeddings = true;

  // Throws std::invalid_argument unless 0 <= alpha <= 1 and tau > 0.
  void validate() const;
};

struct LossWithGrad {
  double loss = 0.0;
  Matrix grad;
};

// Mean over rows of -log p[label], log clamped at 1e-12. The gradient is with
// respect to the pre-softmax logits: (p - onehot) / B.
LossWithGrad cross_entropy(const Matrix& probs, std::span<const std::int32_t> labels);

// Supervised contrastive loss summed over anchors that have at least one
// positive (same label, other index). The denominator runs over every other
// row in the batch. Gradient is with respect to the raw (un-normalized) Z.
LossWithGrad supcon_loss(const Matrix& z, std::span<const std::int32_t> labels,
                         const PretextLossConfig& cfg);

struct PretrainLoss {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double contrastive = 0.0;
  Matrix grad_logits;
  Matrix grad_z;
};

// alpha * CE + (1 - alpha) * SupCon. Both components are always reported; a
// component with zero weight is left out of the sum and the gradients.
PretrainLoss pretrain_loss(const Matrix& probs, const Matrix& z,
                           std::span<const std::int32_t> labels, const PretextLossConfig& cfg);

struct MseLoss {
  double loss = 0.0;
  Vector grad;
};

// (1/n) sum (pred - target)^2, gradient 2 (pred - target) / n.
MseLoss mse_loss(const Vector& pred, const Vector& target);

}  // namespace dora::losses
