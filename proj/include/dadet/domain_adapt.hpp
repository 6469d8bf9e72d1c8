#pragma once

#include <set>

#include "dadet/detector.hpp"
#include "dadet/nn.hpp"
#include "dadet/tensor.hpp"

namespace dadet {

/// Per-level domain discriminator attached to a backbone C-level through a
/// gradient reversal layer. Level 3 is fully convolutional (three 1x1 convs,
/// per-location logit map); levels 4 and 5 use three stride-2 3x3 convs, each
/// with batch norm, ReLU and dropout, then global average pooling and one
/// (level 4) or two (level 5) linear layers down to a single logit.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int level, int in_channels, Rng& rng);

  /// Logits: [B,1,H,W] for level 3, [B,1] for levels 4 and 5.
  Tensor forward(const Tensor& features, bool training, Rng& rng);

  int level() const { return level_; }
  void collect(const std::string& prefix, ParamMap& params) const;

 private:
  int level_ = 0;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> bns_;
  std::vector<Linear> fcs_;
  float dropout_rate_ = 0.5f;
};

struct DomainLossParts {
  Tensor source;  // L_Ds,i
  Tensor target;  // L_Dt,i
  Tensor total;   // (L_Ds,i + L_Dt,i) / 2
};

struct DomainLoss {
  Tensor l_d3, l_d4, l_d5;  // zero scalars for disabled levels
};

/// Discriminator bank over the enabled subset of {3,4,5} with the loss
/// balance factor lambda applied inside the reversal layer.
class DiscriminatorSet {
 public:
  DiscriminatorSet() = default;
  DiscriminatorSet(const std::set<int>& levels, const ModelConfig& detector_cfg,
                   float lambda, Rng& rng);

  /// Focal domain loss for one level: features of both domains pass through
  /// grad_reverse(., lambda) and the discriminator; source is labeled 0 and
  /// target 1. Returns the two sides and their mean.
  DomainLossParts level_loss(int level, const Tensor& source_features,
                             const Tensor& target_features, bool training,
                             Rng& rng);

  /// All enabled levels against one pyramid pair; disabled levels contribute
  /// exact zero scalars.
  DomainLoss loss(const FeaturePyramid& source, const FeaturePyramid& target,
                  bool training, Rng& rng);

  bool enabled(int level) const { return levels_.count(level) > 0; }
  const std::set<int>& levels() const { return levels_; }
  float lambda() const { return lambda_; }
  float focal_alpha = 0.5f;
  float focal_gamma = 2.0f;

  void collect(ParamMap& params) const;

 private:
  Discriminator& disc(int level);
  std::set<int> levels_;
  float lambda_ = 0.5f;
  Discriminator d3_, d4_, d5_;
};

/// Objective actually minimized by the single optimizer: the detection terms
/// plus the discriminator terms; the adversarial minus sign of the reported
/// objective lives inside grad_reverse, which hands the backbone the
/// lambda-scaled, sign-flipped gradients.
Tensor total_loss(const DetLoss& det, const DomainLoss& dom);

/// The reported objective value: l_class + l_box - lambda*(l_d3+l_d4+l_d5).
double reported_objective(const DetLoss& det, const DomainLoss& dom,
                          float lambda);

}  // namespace dadet
