#include "dadet/domain_adapt.hpp"

#include <stdexcept>

namespace dadet {

Discriminator::Discriminator(int level, int in_channels, Rng& rng)
    : level_(level) {
  if (level == 3) {
    convs_.emplace_back(in_channels, 64, 1, 1, 0, rng);
    convs_.emplace_back(64, 64, 1, 1, 0, rng);
    convs_.emplace_back(64, 1, 1, 1, 0, rng);
    return;
  }
  if (level != 4 && level != 5)
    throw std::invalid_argument("discriminator: level must be 3, 4 or 5");
  int in = in_channels;
  for (int i = 0; i < 3; ++i) {
    convs_.emplace_back(in, 64, 3, 2, 1, rng);
    bns_.emplace_back(64);
    in = 64;
  }
  if (level == 4) {
    fcs_.emplace_back(64, 1, rng);
  } else {
    fcs_.emplace_back(64, 32, rng);
    fcs_.emplace_back(32, 1, rng);
  }
}

Tensor Discriminator::forward(const Tensor& features, bool training, Rng& rng) {
  if (level_ == 3) {
    Tensor x = relu(convs_[0].forward(features));
    x = relu(convs_[1].forward(x));
    return convs_[2].forward(x);  // per-location logit map
  }
  Tensor x = features;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = convs_[i].forward(x);
    x = bns_[i].forward(x, training);
    x = relu(x);
    x = dropout(x, dropout_rate_, training, rng);
  }
  x = global_average_pool(x);
  if (level_ == 4) return fcs_[0].forward(x);
  return fcs_[1].forward(relu(fcs_[0].forward(x)));
}

void Discriminator::collect(const std::string& prefix, ParamMap& params) const {
  for (std::size_t i = 0; i < convs_.size(); ++i)
    convs_[i].collect(prefix + ".conv" + std::to_string(i), params);
  for (std::size_t i = 0; i < bns_.size(); ++i)
    bns_[i].collect(prefix + ".bn" + std::to_string(i), params);
  for (std::size_t i = 0; i < fcs_.size(); ++i)
    fcs_[i].collect(prefix + ".fc" + std::to_string(i), params);
}

DiscriminatorSet::DiscriminatorSet(const std::set<int>& levels,
                                   const ModelConfig& cfg, float lambda,
                                   Rng& rng)
    : levels_(levels), lambda_(lambda) {
  if (lambda < 0.0f)
    throw std::invalid_argument("discriminator set: lambda must be nonnegative");
  for (int level : levels_)
    if (level < 3 || level > 5)
      throw std::invalid_argument("discriminator set: levels must be in {3,4,5}");
  // Construction order is fixed so parameter init draws are reproducible.
  if (levels_.count(3)) d3_ = Discriminator(3, cfg.stage_channels[1], rng);
  if (levels_.count(4)) d4_ = Discriminator(4, cfg.stage_channels[2], rng);
  if (levels_.count(5)) d5_ = Discriminator(5, cfg.stage_channels[3], rng);
}

Discriminator& DiscriminatorSet::disc(int level) {
  switch (level) {
    case 3:
      return d3_;
    case 4:
      return d4_;
    default:
      return d5_;
  }
}

DomainLossParts DiscriminatorSet::level_loss(int level,
                                             const Tensor& source_features,
                                             const Tensor& target_features,
                                             bool training, Rng& rng) {
  if (!enabled(level))
    throw std::invalid_argument("discriminator set: level " +
                                std::to_string(level) + " not enabled");
  if (source_features.dim(0) < 1 || target_features.dim(0) < 1)
    throw std::invalid_argument("discriminator loss: empty batch");
  Discriminator& d = disc(level);

  DomainLossParts parts;
  const Tensor zs = d.forward(grad_reverse(source_features, lambda_), training,
                              rng);
  parts.source = focal_loss(zs, Tensor::zeros(zs.shape()), focal_alpha,
                            focal_gamma);
  const Tensor zt = d.forward(grad_reverse(target_features, lambda_), training,
                              rng);
  parts.target = focal_loss(zt, Tensor::full(zt.shape(), 1.0f), focal_alpha,
                            focal_gamma);
  parts.total = scale(add(parts.source, parts.target), 0.5f);
  return parts;
}

DomainLoss DiscriminatorSet::loss(const FeaturePyramid& source,
                                  const FeaturePyramid& target, bool training,
                                  Rng& rng) {
  DomainLoss out;
  out.l_d3 = enabled(3)
                 ? level_loss(3, source.c3, target.c3, training, rng).total
                 : Tensor::scalar(0.0f);
  out.l_d4 = enabled(4)
                 ? level_loss(4, source.c4, target.c4, training, rng).total
                 : Tensor::scalar(0.0f);
  out.l_d5 = enabled(5)
                 ? level_loss(5, source.c5, target.c5, training, rng).total
                 : Tensor::scalar(0.0f);
  return out;
}

void DiscriminatorSet::collect(ParamMap& params) const {
  if (levels_.count(3)) d3_.collect("disc.d3", params);
  if (levels_.count(4)) d4_.collect("disc.d4", params);
  if (levels_.count(5)) d5_.collect("disc.d5", params);
}

Tensor total_loss(const DetLoss& det, const DomainLoss& dom) {
  return add(add(det.l_class, det.l_box),
             add(add(dom.l_d3, dom.l_d4), dom.l_d5));
}

double reported_objective(const DetLoss& det, const DomainLoss& dom,
                          float lambda) {
  const double det_part =
      static_cast<double>(det.l_class.item()) + det.l_box.item();
  const double disc_part = static_cast<double>(dom.l_d3.item()) +
                           dom.l_d4.item() + dom.l_d5.item();
  return det_part - static_cast<double>(lambda) * disc_part;
}

}  // namespace dadet
