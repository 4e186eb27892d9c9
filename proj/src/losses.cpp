#include "dora/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dora::losses {

void PretextLossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
}

LossWithGrad cross_entropy(const Matrix& probs, std::span<const std::int32_t> labels) {
  const auto batch = probs.rows();
  if (static_cast<std::size_t>(batch) != labels.size()) {
    throw std::invalid_argument("cross_entropy: label count does not match batch");
  }
  if (batch == 0) throw std::invalid_argument("cross_entropy: empty batch");
  LossWithGrad out{0.0, probs};
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(probs.cols()) + ")");
    }
    out.loss -= std::log(std::max(probs(i, y), 1e-12));
    out.grad(i, y) -= 1.0;
  }
  const double inv = 1.0 / static_cast<double>(batch);
  out.loss *= inv;
  out.grad *= inv;
  return out;
}

LossWithGrad supcon_loss(const Matrix& z, std::span<const std::int32_t> labels,
                         const PretextLossConfig& cfg) {
  cfg.validate();
  const auto batch = z.rows();
  if (static_cast<std::size_t>(batch) != labels.size()) {
    throw std::invalid_argument("supcon_loss: label count does not match batch");
  }
  if (batch < 1 || z.cols() < 1) throw std::invalid_argument("supcon_loss: empty input");

  Matrix u = z;
  Vector norms = Vector::Ones(batch);
  if (cfg.normalize_embeddings) {
    for (Eigen::Index i = 0; i < batch; ++i) {
      norms(i) = std::max(z.row(i).norm(), 1e-12);
      u.row(i) /= norms(i);
    }
  }
  const Matrix sim = (u * u.transpose()) / cfg.tau;

  LossWithGrad out{0.0, Matrix::Zero(batch, z.cols())};
  Matrix g = Matrix::Zero(batch, batch);  // d loss / d sim
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto yi = labels[static_cast<std::size_t>(i)];
    Eigen::Index positives = 0;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < batch; ++a) {
      if (a == i) continue;
      m = std::max(m, sim(i, a));
      if (labels[static_cast<std::size_t>(a)] == yi) ++positives;
    }
    if (positives == 0) continue;

    double denom = 0.0;
    for (Eigen::Index a = 0; a < batch; ++a) {
      if (a != i) denom += std::exp(sim(i, a) - m);
    }
    const double lse = m + std::log(denom);
    const double inv_p = 1.0 / static_cast<double>(positives);
    double pos_sum = 0.0;
    for (Eigen::Index a = 0; a < batch; ++a) {
      if (a == i) continue;
      g(i, a) = std::exp(sim(i, a) - m) / denom;
      if (labels[static_cast<std::size_t>(a)] == yi) {
        pos_sum += sim(i, a);
        g(i, a) -= inv_p;
      }
    }
    out.loss += lse - pos_sum * inv_p;
  }

  const Matrix grad_u = ((g + g.transpose()) * u) / cfg.tau;
  if (!cfg.normalize_embeddings) {
    out.grad = grad_u;
    return out;
  }
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double proj = u.row(i).dot(grad_u.row(i));
    out.grad.row(i) = (grad_u.row(i) - proj * u.row(i)) / norms(i);
  }
  return out;
}

PretrainLoss pretrain_loss(const Matrix& probs, const Matrix& z,
                           std::span<const std::int32_t> labels, const PretextLossConfig& cfg) {
  cfg.validate();
  auto ce = cross_entropy(probs, labels);
  auto cl = supcon_loss(z, labels, cfg);
  PretrainLoss out;
  out.cross_entropy = ce.loss;
  out.contrastive = cl.loss;
  const double a = cfg.alpha;
  out.grad_logits = Matrix::Zero(ce.grad.rows(), ce.grad.cols());
  out.grad_z = Matrix::Zero(cl.grad.rows(), cl.grad.cols());
  if (a > 0.0) {
    out.loss += a * ce.loss;
    out.grad_logits = a * ce.grad;
  }
  if (a < 1.0) {
    out.loss += (1.0 - a) * cl.loss;
    out.grad_z = (1.0 - a) * cl.grad;
  }
  return out;
}

MseLoss mse_loss(const Vector& pred, const Vector& target) {
  if (pred.size() != target.size()) throw std::invalid_argument("mse_loss: length mismatch");
  if (pred.size() == 0) throw std::invalid_argument("mse_loss: empty input");
  const double n = static_cast<double>(pred.size());
  const Vector diff = pred - target;
  return {diff.squaredNorm() / n, 2.0 * diff / n};
}

}  // namespace dora::losses
