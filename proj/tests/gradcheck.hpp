#pragma once

#include <algorithm>

#include "dora/losses.hpp"
#include "dora/model.hpp"

namespace dora::testing {

// Largest relative error between analytic and central-difference gradients
// over every parameter in `components`.
template <class LossFn, class BackwardFn>
double model_gradcheck(DoraModel& model, unsigned components, LossFn loss, BackwardFn analytic) {
  const ModelGrads grads = analytic();
  auto blocks = model.param_blocks(grads, components);
  double worst = 0.0;
  for (auto& b : blocks) {
    const auto numeric = nn::numerical_gradient(loss, b.value);
    worst = std::max(worst, nn::max_relative_error(b.grad, numeric));
  }
  return worst;
}

inline double pretrain_gradcheck(DoraModel& model, const Batch& batch, const losses::PretextLossConfig& cfg) {
  const auto labels = model.pretext_labels(batch);
  auto loss = [&] {
    const auto f = model.forward(batch, kPretextHead);
    return losses::pretrain_loss(f.probs, f.z, labels, cfg).loss;
  };
  auto analytic = [&] {
    auto f = model.forward(batch, kPretextHead);
    auto l = losses::pretrain_loss(f.probs, f.z, labels, cfg);
    return model.backward(f, &l.grad_logits, &l.grad_z, nullptr);
  };
  return model_gradcheck(model, kPretrainComponents, loss, analytic);
}

inline double finetune_gradcheck(DoraModel& model, const Batch& batch, const nn::Vector& target) {
  auto loss = [&] { return losses::mse_loss(model.forward(batch, kPriceHead).price, target).loss; };
  auto analytic = [&] {
    auto f = model.forward(batch, kPriceHead);
    auto l = losses::mse_loss(f.price, target);
    return model.backward(f, nullptr, nullptr, &l.grad);
  };
  return model_gradcheck(model, kFinetuneComponents, loss, analytic);
}

}  // namespace dora::testing
