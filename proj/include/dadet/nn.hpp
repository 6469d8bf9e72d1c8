#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dadet/tensor.hpp"

namespace dadet {

/// Ordered registry of named tensors. Trainable parameters carry
/// requires_grad; buffers (batch-norm running stats) do not. Names are unique
/// and define the checkpoint slot for each tensor.
class ParamMap {
 public:
  void add(const std::string& name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<Tensor> trainable() const;
  Tensor find(const std::string& name) const;  // undefined Tensor if absent

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// He-uniform fill: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
void he_uniform_init(Tensor& t, int fan_in, Rng& rng);

struct Conv2d {
  Tensor weight;  // [Cout,Cin,k,k]
  Tensor bias;    // [Cout]
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
         Rng& rng);

  Tensor forward(const Tensor& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }
  void collect(const std::string& prefix, ParamMap& params) const;
};

struct Linear {
  Tensor weight;  // [G,F]
  Tensor bias;    // [G]

  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamMap& params) const;
};

struct BatchNorm2d {
  Tensor gamma;  // [C], init 1
  Tensor beta;   // [C], init 0
  BatchNormState state;
  float momentum = 0.1f;
  float epsilon = 1e-5f;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x, bool training) {
    return batch_norm(x, gamma, beta, state, training, momentum, epsilon);
  }
  void collect(const std::string& prefix, ParamMap& params) const;
};

/// SGD with classic momentum: v = mu*v + g; w -= lr*v.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<Tensor> params, float momentum);
  void step(float lr);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> velocity_;
  float momentum_;
};

}  // namespace dadet
