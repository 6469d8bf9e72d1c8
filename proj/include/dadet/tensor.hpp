#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dadet {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Deterministic PCG32 stream. Every source of randomness in the project
/// (initialization, dropout, data generation, batch sampling) is an
/// explicitly seeded instance of this type; there is no hidden global state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint32_t next_u32();
  /// Uniform in [0, 1).
  float uniform();
  float uniform(float lo, float hi);
  /// Standard normal via Box-Muller (stdlib-independent, reproducible).
  float normal();
  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi);

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
  bool has_spare_ = false;
  float spare_ = 0.0f;
};

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

struct TensorImpl {
  Shape shape;
  std::vector<float> values;
  std::vector<float> grad;  // allocated on first accumulation; same size as values
  bool requires_grad = false;
  // Tape edges; populated per forward pass, released by backward().
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backprop;
};

/// Dense float32 n-d array participating in reverse-mode differentiation.
/// Value-semantics handle over a shared node; copying shares storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, float value, bool requires_grad = false);
  static Tensor from_values(const Shape& shape, std::vector<float> values,
                            bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim(int i) const;
  std::size_t numel() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  std::vector<float>& values();
  const std::vector<float>& values() const;
  /// Value of a scalar (1-element) tensor.
  float item() const;

  /// Gradient buffer, allocated (zeroed) on demand.
  std::vector<float>& grad();
  bool has_grad() const;
  void zero_grad();

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::vector<float>& mutable_values() const;
  std::shared_ptr<TensorImpl> impl_;
};

/// While an instance is alive, ops do not record tape edges (eval forward).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

/// Reverse-mode sweep from a scalar loss. Grads of reachable requires_grad
/// tensors are accumulated (+=); the tape is released afterwards.
void backward(const Tensor& loss);

// ---- differentiable primitives ----

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
Tensor sum(const Tensor& x);

/// Identity forward; backward multiplies the upstream gradient by -lambda.
Tensor grad_reverse(const Tensor& x, float lambda);

/// y[b,g] = sum_f x[b,f] * weight[g,f] + bias[g]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Cross-correlation with square kernel. x: [B,Cin,H,W], weight:
/// [Cout,Cin,k,k], bias: [Cout]. Inner loops are data-parallel; results are
/// bitwise independent of the worker count.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

Tensor global_average_pool(const Tensor& x);  // [B,C,H,W] -> [B,C]
Tensor upsample_nearest_2x(const Tensor& x);
Tensor max_pool(const Tensor& x, int kernel, int stride);

/// Train mode zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate); eval mode is the exact identity.
Tensor dropout(const Tensor& x, float rate, bool training, Rng& rng);

struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C], biased estimator
  Tensor batches;       // [1], number of train-mode updates applied
};

/// Train mode normalizes by per-channel batch statistics and updates the
/// running stats; eval mode uses the running stats and signals an error if
/// no update has ever happened.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, float momentum = 0.1f,
                  float epsilon = 1e-5f);

/// Worker count for conv2d data parallelism (0 = hardware concurrency).
void set_num_threads(int n);
int num_threads();

bool all_finite(const std::vector<float>& v);

}  // namespace dadet
