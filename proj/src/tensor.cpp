#include "dadet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "gemm.hpp"
#include "parallel.hpp"

namespace dadet {

namespace {

thread_local int g_no_grad_depth = 0;

std::vector<float>& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0f);
  return t.grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void record(const Tensor& out, std::vector<std::shared_ptr<TensorImpl>> parents,
            std::function<void(TensorImpl&)> fn) {
  TensorImpl& impl = *out.impl();
  impl.requires_grad = true;
  impl.parents = std::move(parents);
  impl.backprop = std::move(fn);
}

float sigmoid_scalar(float x) {
  if (x >= 0.0f) {
    return 1.0f / (1.0f + std::exp(-x));
  }
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace

// ---- shapes ----

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---- rng ----

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined word
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) {
  state_ = 0u;
  inc_ = (mix_seed(seed, 0x1234) << 1u) | 1u;
  next_u32();
  state_ += mix_seed(seed, 0x5678);
  next_u32();
}

std::uint32_t Rng::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const std::uint32_t xorshifted =
      static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
}

float Rng::uniform() {
  return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f;
}

float Rng::uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

float Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  float u1 = 0.0f;
  do {
    u1 = uniform();
  } while (u1 <= 1e-12f);
  const float u2 = uniform();
  const float r = std::sqrt(-2.0f * std::log(u1));
  const float theta = 6.28318530717958647692f * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int lo, int hi) {
  const std::uint32_t span = static_cast<std::uint32_t>(hi - lo) + 1u;
  return lo + static_cast<int>(next_u32() % span);
}

// ---- tensor ----

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->values.assign(shape_numel(shape), 0.0f);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::vector<float> values,
                           bool requires_grad) {
  if (values.size() != shape_numel(shape))
    throw std::invalid_argument("Tensor::from_values: " + shape_str(shape) +
                                " needs " + std::to_string(shape_numel(shape)) +
                                " values, got " + std::to_string(values.size()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

int Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }

std::size_t Tensor::numel() const { return impl_->values.size(); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }

std::vector<float>& Tensor::values() { return impl_->values; }

const std::vector<float>& Tensor::values() const { return impl_->values; }

float Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("Tensor::item: tensor has " +
                                std::to_string(numel()) + " elements");
  return impl_->values[0];
}

std::vector<float>& Tensor::grad() { return ensure_grad(*impl_); }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");

  // Post-order DFS over parent edges; reversed it yields an order where each
  // node is processed before anything it depends on.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorImpl* p = node->parents[idx++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  ensure_grad(*loss.impl())[0] += 1.0f;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
  // Release the tape.
  for (TensorImpl* node : topo) {
    node->parents.clear();
    node->backprop = nullptr;
  }
}

// ---- elementwise ----

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi](TensorImpl& self) {
      auto& pg = ensure_grad(*xi);
      const auto& pv = xi->values;
      for (std::size_t i = 0; i < pg.size(); ++i)
        if (pv[i] > 0.0f) pg[i] += self.grad[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = sigmoid_scalar(xv[i]);
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi](TensorImpl& self) {
      auto& pg = ensure_grad(*xi);
      const auto& y = self.values;
      for (std::size_t i = 0; i < pg.size(); ++i)
        pg[i] += y[i] * (1.0f - y[i]) * self.grad[i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
  if (should_record({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    record(out, {ai, bi}, [ai, bi](TensorImpl& self) {
      if (ai->requires_grad) {
        auto& g = ensure_grad(*ai);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (bi->requires_grad) {
        auto& g = ensure_grad(*bi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
  if (should_record({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    record(out, {ai, bi}, [ai, bi](TensorImpl& self) {
      if (ai->requires_grad) {
        auto& g = ensure_grad(*ai);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += bi->values[i] * self.grad[i];
      }
      if (bi->requires_grad) {
        auto& g = ensure_grad(*bi);
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += ai->values[i] * self.grad[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, float s) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = s * xv[i];
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi, s](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      const float up = self.grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
    });
  }
  return out;
}

Tensor grad_reverse(const Tensor& x, float lambda) {
  if (lambda < 0.0f)
    throw std::invalid_argument("grad_reverse: lambda must be nonnegative");
  Tensor out = Tensor::from_values(x.shape(), x.values());
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi, lambda](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += -lambda * self.grad[i];
    });
  }
  return out;
}

// ---- dense ----

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2)
    throw std::invalid_argument("linear: x and weight must be 2-d");
  const int B = x.dim(0), F = x.dim(1);
  const int G = weight.dim(0);
  if (weight.dim(1) != F)
    throw std::invalid_argument("linear: weight " + shape_str(weight.shape()) +
                                " incompatible with input " +
                                shape_str(x.shape()));
  if (bias.shape() != Shape{G})
    throw std::invalid_argument("linear: bias must have shape [" +
                                std::to_string(G) + "]");
  Tensor out = Tensor::zeros({B, G});
  detail::gemm_abt_acc(B, G, F, x.values().data(), weight.values().data(),
                       out.values().data());
  auto& ov = out.values();
  const auto& bv = bias.values();
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g) ov[static_cast<std::size_t>(b) * G + g] += bv[g];

  if (should_record({&x, &weight, &bias})) {
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    record(out, {xi, wi, bi}, [xi, wi, bi, B, F, G](TensorImpl& self) {
      const float* dy = self.grad.data();
      if (xi->requires_grad) {
        detail::gemm_acc(B, F, G, dy, wi->values.data(),
                         ensure_grad(*xi).data());
      }
      if (wi->requires_grad) {
        std::vector<float> dyt(static_cast<std::size_t>(G) * B);
        detail::transpose(B, G, dy, dyt.data());
        detail::gemm_acc(G, F, B, dyt.data(), xi->values.data(),
                         ensure_grad(*wi).data());
      }
      if (bi->requires_grad) {
        auto& db = ensure_grad(*bi);
        for (int b = 0; b < B; ++b)
          for (int g = 0; g < G; ++g)
            db[g] += dy[static_cast<std::size_t>(b) * G + g];
      }
    });
  }
  return out;
}

// ---- conv2d ----

namespace {

struct ConvDims {
  int B, Cin, H, W, Cout, k, stride, padding, Ho, Wo;
  std::size_t col_rows() const { return static_cast<std::size_t>(Cin) * k * k; }
  std::size_t out_hw() const { return static_cast<std::size_t>(Ho) * Wo; }
};

void im2col(const float* img, const ConvDims& d, float* col) {
  // col[(c*k+ky)*k+kx][oy*Wo+ox]
  const std::size_t hw = static_cast<std::size_t>(d.H) * d.W;
  for (int c = 0; c < d.Cin; ++c) {
    const float* plane = img + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        float* row = col + ((static_cast<std::size_t>(c) * d.k + ky) * d.k + kx) *
                               d.out_hw();
        for (int oy = 0; oy < d.Ho; ++oy) {
          const int iy = oy * d.stride - d.padding + ky;
          float* dst = row + static_cast<std::size_t>(oy) * d.Wo;
          if (iy < 0 || iy >= d.H) {
            std::fill(dst, dst + d.Wo, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * d.W;
          for (int ox = 0; ox < d.Wo; ++ox) {
            const int ix = ox * d.stride - d.padding + kx;
            dst[ox] = (ix >= 0 && ix < d.W) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, const ConvDims& d, float* img) {
  const std::size_t hw = static_cast<std::size_t>(d.H) * d.W;
  for (int c = 0; c < d.Cin; ++c) {
    float* plane = img + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const float* row =
            col + ((static_cast<std::size_t>(c) * d.k + ky) * d.k + kx) *
                      d.out_hw();
        for (int oy = 0; oy < d.Ho; ++oy) {
          const int iy = oy * d.stride - d.padding + ky;
          if (iy < 0 || iy >= d.H) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * d.W;
          const float* src = row + static_cast<std::size_t>(oy) * d.Wo;
          for (int ox = 0; ox < d.Wo; ++ox) {
            const int ix = ox * d.stride - d.padding + kx;
            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  if (x.shape().size() != 4 || weight.shape().size() != 4)
    throw std::invalid_argument("conv2d: x and weight must be 4-d");
  if (stride < 1 || padding < 0)
    throw std::invalid_argument("conv2d: stride must be >=1, padding >=0");
  ConvDims d;
  d.B = x.dim(0);
  d.Cin = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Cout = weight.dim(0);
  d.k = weight.dim(2);
  d.stride = stride;
  d.padding = padding;
  if (weight.dim(1) != d.Cin)
    throw std::invalid_argument("conv2d: input has " + std::to_string(d.Cin) +
                                " channels but weight expects " +
                                std::to_string(weight.dim(1)));
  if (weight.dim(3) != d.k)
    throw std::invalid_argument("conv2d: kernel must be square");
  if (bias.shape() != Shape{d.Cout})
    throw std::invalid_argument("conv2d: bias must have shape [" +
                                std::to_string(d.Cout) + "]");
  if (d.H + 2 * padding < d.k || d.W + 2 * padding < d.k)
    throw std::invalid_argument("conv2d: spatial dims smaller than kernel");
  d.Ho = (d.H + 2 * padding - d.k) / stride + 1;
  d.Wo = (d.W + 2 * padding - d.k) / stride + 1;

  const bool direct = (d.k == 1 && stride == 1 && padding == 0);
  const std::size_t col_size = d.col_rows() * d.out_hw();
  const std::size_t in_sz = static_cast<std::size_t>(d.Cin) * d.H * d.W;
  const std::size_t out_sz = static_cast<std::size_t>(d.Cout) * d.out_hw();

  Tensor out = Tensor::zeros({d.B, d.Cout, d.Ho, d.Wo});
  // Column buffers are kept alive for the backward pass.
  auto cols = std::make_shared<std::vector<float>>();
  if (!direct) cols->resize(col_size * d.B);

  const float* xv = x.values().data();
  float* ov = out.values().data();
  const float* wv = weight.values().data();
  const float* bv = bias.values().data();

  detail::parallel_for(d.B, [&](int b) {
    const float* img = xv + static_cast<std::size_t>(b) * in_sz;
    const float* col = img;
    if (!direct) {
      float* cb = cols->data() + static_cast<std::size_t>(b) * col_size;
      im2col(img, d, cb);
      col = cb;
    }
    float* y = ov + static_cast<std::size_t>(b) * out_sz;
    detail::gemm_acc(d.Cout, static_cast<int>(d.out_hw()),
                     static_cast<int>(d.col_rows()), wv, col, y);
    for (int co = 0; co < d.Cout; ++co) {
      float* plane = y + static_cast<std::size_t>(co) * d.out_hw();
      const float bc = bv[co];
      for (std::size_t i = 0; i < d.out_hw(); ++i) plane[i] += bc;
    }
  });

  if (should_record({&x, &weight, &bias})) {
    auto xi = x.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    record(out, {xi, wi, bi}, [xi, wi, bi, d, direct, cols, col_size, in_sz,
                               out_sz](TensorImpl& self) {
      const float* dy = self.grad.data();
      const int HW = static_cast<int>(d.out_hw());
      const int CK = static_cast<int>(d.col_rows());

      if (bi->requires_grad) {
        auto& db = ensure_grad(*bi);
        for (int b = 0; b < d.B; ++b)
          for (int co = 0; co < d.Cout; ++co) {
            const float* plane = dy + static_cast<std::size_t>(b) * out_sz +
                                 static_cast<std::size_t>(co) * d.out_hw();
            double acc = 0.0;
            for (int i = 0; i < HW; ++i) acc += plane[i];
            db[co] += static_cast<float>(acc);
          }
      }

      if (wi->requires_grad) {
        // Per-image partials, then a fixed-order reduction over the batch.
        std::vector<float> partials(static_cast<std::size_t>(d.B) * d.Cout * CK,
                                    0.0f);
        detail::parallel_for(d.B, [&](int b) {
          const float* col =
              direct ? xi->values.data() + static_cast<std::size_t>(b) * in_sz
                     : cols->data() + static_cast<std::size_t>(b) * col_size;
          detail::gemm_abt_acc(
              d.Cout, CK, HW, dy + static_cast<std::size_t>(b) * out_sz, col,
              partials.data() + static_cast<std::size_t>(b) * d.Cout * CK);
        });
        auto& dw = ensure_grad(*wi);
        for (int b = 0; b < d.B; ++b) {
          const float* p = partials.data() + static_cast<std::size_t>(b) * d.Cout * CK;
          for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += p[i];
        }
      }

      if (xi->requires_grad) {
        std::vector<float> wt(static_cast<std::size_t>(CK) * d.Cout);
        detail::transpose(d.Cout, CK, wi->values.data(), wt.data());
        auto& dx = ensure_grad(*xi);
        detail::parallel_for(d.B, [&](int b) {
          if (direct) {
            detail::gemm_acc(CK, HW, d.Cout, wt.data(),
                             dy + static_cast<std::size_t>(b) * out_sz,
                             dx.data() + static_cast<std::size_t>(b) * in_sz);
          } else {
            std::vector<float> dcol(col_size, 0.0f);
            detail::gemm_acc(CK, HW, d.Cout, wt.data(),
                             dy + static_cast<std::size_t>(b) * out_sz,
                             dcol.data());
            col2im_add(dcol.data(), d,
                       dx.data() + static_cast<std::size_t>(b) * in_sz);
          }
        });
      }
    });
  }
  return out;
}

// ---- pooling / resampling ----

Tensor global_average_pool(const Tensor& x) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("global_average_pool: input must be 4-d");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out = Tensor::zeros({B, C});
  const auto& xv = x.values();
  auto& ov = out.values();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* plane = xv.data() + (static_cast<std::size_t>(b) * C + c) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
      ov[static_cast<std::size_t>(b) * C + c] =
          static_cast<float>(acc / static_cast<double>(hw));
    }
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi, B, C, hw](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      const float inv = 1.0f / static_cast<float>(hw);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const float up = self.grad[static_cast<std::size_t>(b) * C + c] * inv;
          float* plane = g.data() + (static_cast<std::size_t>(b) * C + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) plane[i] += up;
        }
    });
  }
  return out;
}

Tensor upsample_nearest_2x(const Tensor& x) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("upsample_nearest_2x: input must be 4-d");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::zeros({B, C, 2 * H, 2 * W});
  const auto& xv = x.values();
  auto& ov = out.values();
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = xv.data() + p * H * W;
    float* dst = ov.data() + p * 4 * H * W;
    for (int y = 0; y < H; ++y)
      for (int xcol = 0; xcol < W; ++xcol) {
        const float v = src[static_cast<std::size_t>(y) * W + xcol];
        float* r0 = dst + static_cast<std::size_t>(2 * y) * 2 * W + 2 * xcol;
        float* r1 = r0 + static_cast<std::size_t>(2) * W;
        r0[0] = r0[1] = r1[0] = r1[1] = v;
      }
  }
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi, planes, H, W](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      for (std::size_t p = 0; p < planes; ++p) {
        float* dst = g.data() + p * H * W;
        const float* src = self.grad.data() + p * 4 * H * W;
        for (int y = 0; y < H; ++y)
          for (int xcol = 0; xcol < W; ++xcol) {
            const float* r0 =
                src + static_cast<std::size_t>(2 * y) * 2 * W + 2 * xcol;
            const float* r1 = r0 + static_cast<std::size_t>(2) * W;
            dst[static_cast<std::size_t>(y) * W + xcol] +=
                r0[0] + r0[1] + r1[0] + r1[1];
          }
      }
    });
  }
  return out;
}

Tensor max_pool(const Tensor& x, int kernel, int stride) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("max_pool: input must be 4-d");
  if (kernel < 1 || stride < 1)
    throw std::invalid_argument("max_pool: kernel and stride must be >=1");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < kernel || W < kernel)
    throw std::invalid_argument("max_pool: spatial dims smaller than kernel");
  const int Ho = (H - kernel) / stride + 1;
  const int Wo = (W - kernel) / stride + 1;
  Tensor out = Tensor::zeros({B, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const auto& xv = x.values();
  auto& ov = out.values();
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = xv.data() + p * H * W;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        float best = src[static_cast<std::size_t>(oy * stride) * W + ox * stride];
        std::size_t best_idx =
            p * H * W + static_cast<std::size_t>(oy * stride) * W + ox * stride;
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const std::size_t idx =
                static_cast<std::size_t>(oy * stride + ky) * W + ox * stride + kx;
            if (src[idx] > best) {  // first max wins on ties
              best = src[idx];
              best_idx = p * H * W + idx;
            }
          }
        const std::size_t o =
            p * Ho * Wo + static_cast<std::size_t>(oy) * Wo + ox;
        ov[o] = best;
        (*argmax)[o] = best_idx;
      }
  }
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi, argmax](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      for (std::size_t o = 0; o < self.grad.size(); ++o)
        g[(*argmax)[o]] += self.grad[o];
    });
  }
  return out;
}

// ---- dropout ----

Tensor dropout(const Tensor& x, float rate, bool training, Rng& rng) {
  if (rate < 0.0f || rate >= 1.0f)
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - rate);
  auto mask = std::make_shared<std::vector<float>>(x.numel());
  for (auto& m : *mask) m = (rng.uniform() < rate) ? 0.0f : keep_scale;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] * (*mask)[i];
  if (should_record({&x})) {
    auto xi = x.impl();
    record(out, {xi}, [xi, mask](TensorImpl& self) {
      auto& g = ensure_grad(*xi);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += (*mask)[i] * self.grad[i];
    });
  }
  return out;
}

// ---- batch norm ----

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, float momentum,
                  float epsilon) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("batch_norm: input must be 4-d");
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw std::invalid_argument("batch_norm: gamma/beta must have shape [" +
                                std::to_string(C) + "]");
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  const std::size_t n = static_cast<std::size_t>(B) * hw;

  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.values();
  auto& ov = out.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();

  if (training) {
    if (n < 2)
      throw std::invalid_argument(
          "batch_norm: train mode needs B*H*W >= 2 per channel");
    auto mean = std::make_shared<std::vector<float>>(C);
    auto invstd = std::make_shared<std::vector<float>>(C);
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int b = 0; b < B; ++b) {
        const float* plane = xv.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
      }
      const double m = acc / static_cast<double>(n);
      double var = 0.0;
      for (int b = 0; b < B; ++b) {
        const float* plane = xv.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double dlt = plane[i] - m;
          var += dlt * dlt;
        }
      }
      var /= static_cast<double>(n);
      (*mean)[c] = static_cast<float>(m);
      (*invstd)[c] = static_cast<float>(1.0 / std::sqrt(var + epsilon));
      auto& rm = state.running_mean.values();
      auto& rv = state.running_var.values();
      rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(m);
      rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(var);
    }
    state.batches.values()[0] += 1.0f;

    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c) {
        const float* src = xv.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        float* dst = ov.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        const float m = (*mean)[c], is = (*invstd)[c], g = gv[c], bt = bv[c];
        for (std::size_t i = 0; i < hw; ++i) dst[i] = g * (src[i] - m) * is + bt;
      }

    if (should_record({&x, &gamma, &beta})) {
      auto xi = x.impl();
      auto gi = gamma.impl();
      auto bi = beta.impl();
      record(out, {xi, gi, bi},
             [xi, gi, bi, mean, invstd, B, C, hw, n](TensorImpl& self) {
               const float* dy = self.grad.data();
               const auto& xvv = xi->values;
               for (int c = 0; c < C; ++c) {
                 const float m = (*mean)[c], is = (*invstd)[c];
                 const float gmm = gi->values[c];
                 double sum_dy = 0.0, sum_dy_xhat = 0.0;
                 for (int b = 0; b < B; ++b) {
                   const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
                   for (std::size_t i = 0; i < hw; ++i) {
                     const float xhat = (xvv[off + i] - m) * is;
                     sum_dy += dy[off + i];
                     sum_dy_xhat += dy[off + i] * xhat;
                   }
                 }
                 if (gi->requires_grad)
                   ensure_grad(*gi)[c] += static_cast<float>(sum_dy_xhat);
                 if (bi->requires_grad)
                   ensure_grad(*bi)[c] += static_cast<float>(sum_dy);
                 if (xi->requires_grad) {
                   auto& dx = ensure_grad(*xi);
                   const float inv_n = 1.0f / static_cast<float>(n);
                   const float t1 = static_cast<float>(sum_dy) * inv_n;
                   const float t2 = static_cast<float>(sum_dy_xhat) * inv_n;
                   for (int b = 0; b < B; ++b) {
                     const std::size_t off =
                         (static_cast<std::size_t>(b) * C + c) * hw;
                     for (std::size_t i = 0; i < hw; ++i) {
                       const float xhat = (xvv[off + i] - m) * is;
                       dx[off + i] +=
                           gmm * is * (dy[off + i] - t1 - xhat * t2);
                     }
                   }
                 }
               }
             });
    }
    return out;
  }

  // eval mode
  if (state.batches.values()[0] < 1.0f)
    throw std::runtime_error(
        "batch_norm: eval mode before any running-statistics update");
  const auto& rm = state.running_mean.values();
  const auto& rv = state.running_var.values();
  std::vector<float> is(C);
  for (int c = 0; c < C; ++c) is[c] = 1.0f / std::sqrt(rv[c] + epsilon);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* src = xv.data() + (static_cast<std::size_t>(b) * C + c) * hw;
      float* dst = ov.data() + (static_cast<std::size_t>(b) * C + c) * hw;
      const float m = rm[c], s = is[c], g = gv[c], bt = bv[c];
      for (std::size_t i = 0; i < hw; ++i) dst[i] = g * (src[i] - m) * s + bt;
    }
  if (should_record({&x, &gamma, &beta})) {
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto scales = std::make_shared<std::vector<float>>(C);
    for (int c = 0; c < C; ++c) (*scales)[c] = gv[c] * is[c];
    record(out, {xi, gi}, [xi, scales, B, C, hw](TensorImpl& self) {
      if (!xi->requires_grad) return;
      auto& dx = ensure_grad(*xi);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
          const float s = (*scales)[c];
          for (std::size_t i = 0; i < hw; ++i)
            dx[off + i] += s * self.grad[off + i];
        }
    });
  }
  return out;
}

// ---- misc ----

void set_num_threads(int n) { detail::ThreadPool::instance().set_size(n); }

int num_threads() { return detail::ThreadPool::instance().size(); }

bool all_finite(const std::vector<float>& v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace dadet
