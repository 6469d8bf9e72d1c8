#include "dadet/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace dadet {

namespace {

constexpr float kProbClamp = 1e-7f;

struct FocalSlot {
  double loss;
  double dlogit;  // d loss / d logit
};

FocalSlot focal_slot(float logit, float target, float alpha, float gamma) {
  // stable sigmoid
  double p;
  if (logit >= 0.0f) {
    p = 1.0 / (1.0 + std::exp(-static_cast<double>(logit)));
  } else {
    const double e = std::exp(static_cast<double>(logit));
    p = e / (1.0 + e);
  }
  const bool positive = target > 0.5f;
  double pt = positive ? p : 1.0 - p;
  bool clamped = false;
  if (pt < kProbClamp) {
    pt = kProbClamp;
    clamped = true;
  } else if (pt > 1.0 - kProbClamp) {
    pt = 1.0 - kProbClamp;
    clamped = true;
  }
  const double at = alpha < 0.0f ? 1.0 : (positive ? alpha : 1.0f - alpha);
  const double one_m = 1.0 - pt;
  const double pow_term = gamma == 0.0f ? 1.0 : std::pow(one_m, gamma);
  const double loss = -at * pow_term * std::log(pt);

  double dlogit = 0.0;
  if (!clamped) {
    // d loss / d pt, then d pt / d logit = (+-) p (1-p)
    double dpow = 0.0;
    if (gamma != 0.0f)
      dpow = -static_cast<double>(gamma) * std::pow(one_m, gamma - 1.0);
    const double dldpt = -at * (dpow * std::log(pt) + pow_term / pt);
    const double dptdz = (positive ? 1.0 : -1.0) * p * (1.0 - p);
    dlogit = dldpt * dptdz;
  }
  return {loss, dlogit};
}

Tensor focal_impl(const Tensor& logits, const Tensor& targets,
                  const Tensor* mask, float alpha, float gamma,
                  bool mean_over_included) {
  if (logits.shape() != targets.shape())
    throw std::invalid_argument("focal_loss: logits/targets shape mismatch");
  if (mask && mask->shape() != logits.shape())
    throw std::invalid_argument("focal_loss: mask shape mismatch");

  const auto& zv = logits.values();
  const auto& tv = targets.values();
  const float* mv = mask ? mask->values().data() : nullptr;

  auto dlogits = std::make_shared<std::vector<float>>(zv.size(), 0.0f);
  double total = 0.0;
  std::size_t included = 0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    if (mv && mv[i] == 0.0f) continue;
    const FocalSlot s = focal_slot(zv[i], tv[i], alpha, gamma);
    total += s.loss;
    (*dlogits)[i] = static_cast<float>(s.dlogit);
    ++included;
  }
  float norm = 1.0f;
  if (mean_over_included)
    norm = included > 0 ? static_cast<float>(included) : 1.0f;
  Tensor out = Tensor::scalar(static_cast<float>(total / norm));

  if (grad_enabled() && logits.requires_grad()) {
    auto zi = logits.impl();
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->parents = {zi};
    impl->backprop = [zi, dlogits, norm](TensorImpl& self) {
      if (zi->grad.empty()) zi->grad.assign(zi->values.size(), 0.0f);
      const float up = self.grad[0] / norm;
      for (std::size_t i = 0; i < zi->grad.size(); ++i)
        zi->grad[i] += up * (*dlogits)[i];
    };
  }
  return out;
}

}  // namespace

Tensor focal_loss(const Tensor& logits, const Tensor& targets, float alpha,
                  float gamma) {
  return focal_impl(logits, targets, nullptr, alpha, gamma, true);
}

Tensor focal_loss(const Tensor& logits, const Tensor& targets,
                  const Tensor& mask, float alpha, float gamma) {
  return focal_impl(logits, targets, &mask, alpha, gamma, true);
}

Tensor focal_loss_sum(const Tensor& logits, const Tensor& targets,
                      const Tensor& mask, float alpha, float gamma) {
  return focal_impl(logits, targets, &mask, alpha, gamma, false);
}

Tensor smooth_l1_sum(const Tensor& pred, const Tensor& target,
                     const Tensor& mask, float beta) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw std::invalid_argument("smooth_l1_sum: shape mismatch");
  if (beta <= 0.0f)
    throw std::invalid_argument("smooth_l1_sum: beta must be positive");

  const auto& pv = pred.values();
  const auto& tv = target.values();
  const auto& mv = mask.values();

  auto dpred = std::make_shared<std::vector<float>>(pv.size(), 0.0f);
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (mv[i] == 0.0f) continue;
    const double r = static_cast<double>(pv[i]) - tv[i];
    const double a = std::fabs(r);
    if (a < beta) {
      total += 0.5 * r * r / beta;
      (*dpred)[i] = static_cast<float>(r / beta);
    } else {
      total += a - 0.5 * beta;
      (*dpred)[i] = r > 0.0 ? 1.0f : -1.0f;
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(total));
  if (grad_enabled() && pred.requires_grad()) {
    auto pi = pred.impl();
    auto impl = out.impl();
    impl->requires_grad = true;
    impl->parents = {pi};
    impl->backprop = [pi, dpred](TensorImpl& self) {
      if (pi->grad.empty()) pi->grad.assign(pi->values.size(), 0.0f);
      const float up = self.grad[0];
      for (std::size_t i = 0; i < pi->grad.size(); ++i)
        pi->grad[i] += up * (*dpred)[i];
    };
  }
  return out;
}

}  // namespace dadet
