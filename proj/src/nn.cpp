#include "dadet/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dadet {

void ParamMap::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : entries_)
    if (n == name)
      throw std::invalid_argument("ParamMap: duplicate parameter name " + name);
  entries_.emplace_back(name, std::move(t));
}

std::vector<Tensor> ParamMap::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [_, t] : entries_)
    if (t.requires_grad()) out.push_back(t);
  return out;
}

Tensor ParamMap::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  return Tensor();
}

void he_uniform_init(Tensor& t, int fan_in, Rng& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_,
               int padding_, Rng& rng)
    : stride(stride_), padding(padding_) {
  weight = Tensor::zeros({out_channels, in_channels, kernel, kernel}, true);
  he_uniform_init(weight, in_channels * kernel * kernel, rng);
  bias = Tensor::zeros({out_channels}, true);
}

void Conv2d::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

Linear::Linear(int in_features, int out_features, Rng& rng) {
  weight = Tensor::zeros({out_features, in_features}, true);
  he_uniform_init(weight, in_features, rng);
  bias = Tensor::zeros({out_features}, true);
}

void Linear::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".weight", weight);
  params.add(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels) {
  gamma = Tensor::full({channels}, 1.0f, true);
  beta = Tensor::zeros({channels}, true);
  state.running_mean = Tensor::zeros({channels});
  state.running_var = Tensor::full({channels}, 1.0f);
  state.batches = Tensor::zeros({1});
}

void BatchNorm2d::collect(const std::string& prefix, ParamMap& params) const {
  params.add(prefix + ".gamma", gamma);
  params.add(prefix + ".beta", beta);
  params.add(prefix + ".running_mean", state.running_mean);
  params.add(prefix + ".running_var", state.running_var);
  params.add(prefix + ".batches", state.batches);
}

SgdMomentum::SgdMomentum(std::vector<Tensor> params, float momentum)
    : params_(std::move(params)), momentum_(momentum) {
  velocity_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    velocity_[i].assign(params_[i].numel(), 0.0f);
}

void SgdMomentum::step(float lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    auto& w = params_[i].values();
    const auto& g = params_[i].grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= lr * v[j];
    }
  }
}

void SgdMomentum::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace dadet
