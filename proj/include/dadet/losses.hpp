#pragma once

#include "dadet/tensor.hpp"

namespace dadet {

/// Sigmoid focal loss term for one slot: -alpha_t * (1-p_t)^gamma * log(p_t),
/// with p = sigmoid(logit), p_t = p for target 1 and 1-p for target 0, and
/// alpha_t = alpha for target 1, 1-alpha for target 0. Probabilities are
/// clamped to [1e-7, 1-1e-7]. Pass alpha < 0 to disable the alpha weighting
/// (alpha_t = 1 on both sides).
///
/// focal_loss averages over slots whose mask is nonzero; focal_loss_sum
/// returns the plain masked sum so callers can pick their own normalizer.
Tensor focal_loss(const Tensor& logits, const Tensor& targets, float alpha,
                  float gamma);
Tensor focal_loss(const Tensor& logits, const Tensor& targets,
                  const Tensor& mask, float alpha, float gamma);
Tensor focal_loss_sum(const Tensor& logits, const Tensor& targets,
                      const Tensor& mask, float alpha, float gamma);

/// Masked smooth-L1: per element f(r) = 0.5 r^2 / beta for |r| < beta, else
/// |r| - beta/2, summed over elements with nonzero mask.
Tensor smooth_l1_sum(const Tensor& pred, const Tensor& target,
                     const Tensor& mask, float beta);

}  // namespace dadet
