#include "nseg/ops.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

// Every kernel assigns each output element to exactly one thread and keeps a
// fixed accumulation order inside it, so results are bitwise identical for
// any thread count.

namespace nseg {

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!(a.shape == b.shape)) {
    throw ContractError(std::string(what) + ": shape mismatch " + a.shape.str() + " vs " +
                        b.shape.str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvParams<T>& params) {
  if (input.shape.c != params.in_channels()) {
    throw ConfigError("conv2d: input has " + std::to_string(input.shape.c) +
                      " channels, weights expect " + std::to_string(params.in_channels()));
  }
  const int N = input.shape.n, C = input.shape.c, H = input.shape.h, W = input.shape.w;
  const int CO = params.out_channels(), K = params.kernel(), pad = (K - 1) / 2;

  Tensor<T> out(Shape{N, CO, H, W});
  const bool big = static_cast<std::int64_t>(N) * CO * C * H * W * K * K > 65536;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (big)
#endif
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < CO; ++co) {
      T* outp = out.plane(n, co);
      for (int ci = 0; ci < C; ++ci) {
        const T* inp = input.plane(n, ci);
        const T* wp = params.weights.plane(co, ci);
        for (int ky = 0; ky < K; ++ky) {
          const int sy = ky - pad;
          for (int kx = 0; kx < K; ++kx) {
            const int sx = kx - pad;
            const T wv = wp[ky * K + kx];
            const int y0 = std::max(0, -sy), y1 = std::min(H, H - sy);
            const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
            for (int y = y0; y < y1; ++y) {
              const T* irow = inp + static_cast<std::ptrdiff_t>(y + sy) * W + sx;
              T* orow = outp + static_cast<std::ptrdiff_t>(y) * W;
              for (int x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
        }
      }
    }
  }
  (void)big;
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params,
                             const Tensor<T>& grad_out) {
  const int N = input.shape.n, C = input.shape.c, H = input.shape.h, W = input.shape.w;
  const int CO = params.out_channels(), K = params.kernel(), pad = (K - 1) / 2;
  const Shape expect{N, CO, H, W};
  if (!(grad_out.shape == expect)) {
    throw ContractError("conv2d_backward: grad_out shape " + grad_out.shape.str() +
                        " does not match forward output " + expect.str());
  }
  if (input.shape.c != params.in_channels()) {
    throw ConfigError("conv2d_backward: channel mismatch");
  }

  ConvGrads<T> g{Tensor<T>(input.shape), Tensor<T>(params.weights.shape)};
  const bool big = static_cast<std::int64_t>(N) * CO * C * H * W * K * K > 65536;

  // grad_input[y, x] += w[ky, kx] * grad_out[y - ky + pad, x - kx + pad]
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (big)
#endif
  for (int n = 0; n < N; ++n) {
    for (int ci = 0; ci < C; ++ci) {
      T* gip = g.input.plane(n, ci);
      for (int co = 0; co < CO; ++co) {
        const T* gop = grad_out.plane(n, co);
        const T* wp = params.weights.plane(co, ci);
        for (int ky = 0; ky < K; ++ky) {
          const int sy = pad - ky;  // grad_out row offset relative to input row
          for (int kx = 0; kx < K; ++kx) {
            const int sx = pad - kx;
            const T wv = wp[ky * K + kx];
            const int y0 = std::max(0, -sy), y1 = std::min(H, H - sy);
            const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
            for (int y = y0; y < y1; ++y) {
              const T* grow = gop + static_cast<std::ptrdiff_t>(y + sy) * W + sx;
              T* irow = gip + static_cast<std::ptrdiff_t>(y) * W;
              for (int x = x0; x < x1; ++x) irow[x] += wv * grow[x];
            }
          }
        }
      }
    }
  }

  // grad_w[co, ci, ky, kx] = sum_{n, y, x} grad_out[n, co, y, x] * input[n, ci, y + ky - pad, x + kx - pad]
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (big)
#endif
  for (int co = 0; co < CO; ++co) {
    for (int ci = 0; ci < C; ++ci) {
      T* gwp = g.weights.plane(co, ci);
      for (int ky = 0; ky < K; ++ky) {
        const int sy = ky - pad;
        for (int kx = 0; kx < K; ++kx) {
          const int sx = kx - pad;
          const int y0 = std::max(0, -sy), y1 = std::min(H, H - sy);
          const int x0 = std::max(0, -sx), x1 = std::min(W, W - sx);
          T acc0 = T(0), acc1 = T(0), acc2 = T(0), acc3 = T(0);
          for (int n = 0; n < N; ++n) {
            const T* gop = grad_out.plane(n, co);
            const T* inp = input.plane(n, ci);
            for (int y = y0; y < y1; ++y) {
              const T* grow = gop + static_cast<std::ptrdiff_t>(y) * W;
              const T* irow = inp + static_cast<std::ptrdiff_t>(y + sy) * W + sx;
              int x = x0;
              for (; x + 4 <= x1; x += 4) {
                acc0 += grow[x] * irow[x];
                acc1 += grow[x + 1] * irow[x + 1];
                acc2 += grow[x + 2] * irow[x + 2];
                acc3 += grow[x + 3] * irow[x + 3];
              }
              for (; x < x1; ++x) acc0 += grow[x] * irow[x];
            }
          }
          gwp[ky * K + kx] = ((acc0 + acc1) + (acc2 + acc3));
        }
      }
    }
  }
  (void)big;
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor<T>& input, const BatchNormParams<T>& params,
                                     Mode mode) {
  const int N = input.shape.n, C = input.shape.c, H = input.shape.h, W = input.shape.w;
  if (params.channels() != C) {
    throw ContractError("batchnorm: params have " + std::to_string(params.channels()) +
                        " channels, input has " + std::to_string(C));
  }
  const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
  if (m <= 0 || input.data.empty()) {
    throw ContractError("batchnorm: empty batch");
  }

  BatchNormResult<T> r{Tensor<T>(input.shape),
                       BatchNormCache<T>{Tensor<T>(input.shape), std::vector<T>(), params.gamma, mode},
                       params};
  r.cache.inv_std.resize(static_cast<std::size_t>(C));

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * C > 16384)
#endif
  for (int c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      T sum = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = input.plane(n, c);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(m);
      T sq = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = input.plane(n, c);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
          const T d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(m);  // population variance, also used for running stats
      const std::size_t cc = static_cast<std::size_t>(c);
      r.updated.running_mean[cc] =
          (T(1) - params.momentum) * params.running_mean[cc] + params.momentum * mean;
      r.updated.running_var[cc] =
          (T(1) - params.momentum) * params.running_var[cc] + params.momentum * var;
    } else {
      mean = params.running_mean[static_cast<std::size_t>(c)];
      var = params.running_var[static_cast<std::size_t>(c)];
    }
    const T inv_std = T(1) / std::sqrt(var + params.eps);
    r.cache.inv_std[static_cast<std::size_t>(c)] = inv_std;
    const T gamma = params.gamma[static_cast<std::size_t>(c)];
    const T beta = params.beta[static_cast<std::size_t>(c)];
    for (int n = 0; n < N; ++n) {
      const T* p = input.plane(n, c);
      T* xh = r.cache.x_hat.plane(n, c);
      T* outp = r.output.plane(n, c);
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
        const T v = (p[i] - mean) * inv_std;
        xh[i] = v;
        outp[i] = gamma * v + beta;
      }
    }
  }
  return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& grad_out) {
  check_same_shape(cache.x_hat, grad_out, "batchnorm_backward");
  const int N = grad_out.shape.n, C = grad_out.shape.c, H = grad_out.shape.h,
            W = grad_out.shape.w;
  const std::int64_t m = static_cast<std::int64_t>(N) * H * W;

  BatchNormGrads<T> g{Tensor<T>(grad_out.shape), std::vector<T>(static_cast<std::size_t>(C)),
                      std::vector<T>(static_cast<std::size_t>(C))};

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * C > 16384)
#endif
  for (int c = 0; c < C; ++c) {
    const std::size_t cc = static_cast<std::size_t>(c);
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (int n = 0; n < N; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * xh[i];
      }
    }
    g.beta[cc] = sum_dy;
    g.gamma[cc] = sum_dy_xhat;
    const T gamma = cache.gamma[cc];
    const T inv_std = cache.inv_std[cc];
    if (cache.mode == Mode::train) {
      const T scale = gamma * inv_std / static_cast<T>(m);
      for (int n = 0; n < N; ++n) {
        const T* dy = grad_out.plane(n, c);
        const T* xh = cache.x_hat.plane(n, c);
        T* dx = g.input.plane(n, c);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
          dx[i] = scale * (static_cast<T>(m) * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
        }
      }
    } else {
      const T scale = gamma * inv_std;
      for (int n = 0; n < N; ++n) {
        const T* dy = grad_out.plane(n, c);
        T* dx = g.input.plane(n, c);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(H) * W; ++i) {
          dx[i] = scale * dy[i];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    out.data[i] = input.data[i] > T(0) ? input.data[i] : T(0);
  }
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  check_same_shape(input, grad_out, "relu_backward");
  Tensor<T> g(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    g.data[i] = input.data[i] > T(0) ? grad_out.data[i] : T(0);
  }
  return g;
}

namespace {

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape);
  for (std::size_t i = 0; i < input.data.size(); ++i) out.data[i] = sigmoid_scalar(input.data[i]);
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  check_same_shape(output, grad_out, "sigmoid_backward");
  Tensor<T> g(output.shape);
  for (std::size_t i = 0; i < output.data.size(); ++i) {
    const T s = output.data[i];
    g.data[i] = grad_out.data[i] * s * (T(1) - s);
  }
  return g;
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation kind) {
  return kind == Activation::relu ? relu_forward(input) : sigmoid_forward(input);
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& forward_input, const Tensor<T>& forward_output,
                              const Tensor<T>& grad_out, Activation kind) {
  return kind == Activation::relu ? relu_backward(forward_input, grad_out)
                                  : sigmoid_backward(forward_output, grad_out);
}

// ---------------------------------------------------------------------------
// Pooling / upsampling / concatenation
// ---------------------------------------------------------------------------

template <typename T>
MaxPoolResult<T> maxpool2x2_forward(const Tensor<T>& input) {
  const int N = input.shape.n, C = input.shape.c, H = input.shape.h, W = input.shape.w;
  if (H % 2 != 0 || W % 2 != 0) {
    throw ConfigError("maxpool2x2: spatial dims must be even, got " + input.shape.str());
  }
  MaxPoolResult<T> r{Tensor<T>(Shape{N, C, H / 2, W / 2}),
                     std::vector<std::uint32_t>(
                         static_cast<std::size_t>(static_cast<std::int64_t>(N) * C * (H / 2) * (W / 2)))};
  std::int64_t oi = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* p = input.plane(n, c);
      for (int y = 0; y < H; y += 2) {
        for (int x = 0; x < W; x += 2) {
          // strict > keeps the first max in row-major window order on ties
          std::int64_t best = static_cast<std::int64_t>(y) * W + x;
          T bv = p[best];
          const std::int64_t cands[3] = {static_cast<std::int64_t>(y) * W + x + 1,
                                         (static_cast<std::int64_t>(y) + 1) * W + x,
                                         (static_cast<std::int64_t>(y) + 1) * W + x + 1};
          for (const std::int64_t cand : cands) {
            if (p[cand] > bv) {
              bv = p[cand];
              best = cand;
            }
          }
          r.output.data[static_cast<std::size_t>(oi)] = bv;
          r.argmax[static_cast<std::size_t>(oi)] =
              static_cast<std::uint32_t>(input.index(n, c, 0, 0) + best);
          ++oi;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                              const Tensor<T>& grad_out) {
  const Shape expect{input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2};
  if (!(grad_out.shape == expect) ||
      argmax.size() != static_cast<std::size_t>(grad_out.size())) {
    throw ContractError("maxpool2x2_backward: grad_out/argmax do not match pooled shape");
  }
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    g.data[argmax[i]] += grad_out.data[i];
  }
  return g;
}

template <typename T>
Tensor<T> upsample2x_forward(const Tensor<T>& input) {
  const int N = input.shape.n, C = input.shape.c, H = input.shape.h, W = input.shape.w;
  Tensor<T> out(Shape{N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* p = input.plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const T v = p[static_cast<std::ptrdiff_t>(y) * W + x];
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(2 * y) * (2 * W) + 2 * x;
          o[base] = v;
          o[base + 1] = v;
          o[base + 2 * W] = v;
          o[base + 2 * W + 1] = v;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample2x_backward(const Tensor<T>& grad_out) {
  const int N = grad_out.shape.n, C = grad_out.shape.c, H2 = grad_out.shape.h,
            W2 = grad_out.shape.w;
  if (H2 % 2 != 0 || W2 % 2 != 0) {
    throw ContractError("upsample2x_backward: grad_out dims must be even");
  }
  Tensor<T> g(Shape{N, C, H2 / 2, W2 / 2});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* go = grad_out.plane(n, c);
      T* p = g.plane(n, c);
      for (int y = 0; y < H2 / 2; ++y) {
        for (int x = 0; x < W2 / 2; ++x) {
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(2 * y) * W2 + 2 * x;
          p[static_cast<std::ptrdiff_t>(y) * (W2 / 2) + x] =
              (go[base] + go[base + 1]) + (go[base + W2] + go[base + W2 + 1]);
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& inputs) {
  if (inputs.empty()) throw ContractError("concat_channels: no inputs");
  const Shape& s0 = inputs[0]->shape;
  int total_c = 0;
  for (const Tensor<T>* t : inputs) {
    if (t->shape.n != s0.n || t->shape.h != s0.h || t->shape.w != s0.w) {
      throw ContractError("concat_channels: batch/spatial mismatch " + t->shape.str() + " vs " +
                          s0.str());
    }
    total_c += t->shape.c;
  }
  Tensor<T> out(Shape{s0.n, total_c, s0.h, s0.w});
  for (int n = 0; n < s0.n; ++n) {
    int co = 0;
    for (const Tensor<T>* t : inputs) {
      for (int c = 0; c < t->shape.c; ++c, ++co) {
        const T* src = t->plane(n, c);
        T* dst = out.plane(n, co);
        std::copy(src, src + static_cast<std::ptrdiff_t>(s0.h) * s0.w, dst);
      }
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> concat_backward(const Tensor<T>& grad_out,
                                       const std::vector<int>& channel_counts) {
  int total = 0;
  for (const int c : channel_counts) total += c;
  if (total != grad_out.shape.c) {
    throw ContractError("concat_backward: channel counts sum to " + std::to_string(total) +
                        ", grad_out has " + std::to_string(grad_out.shape.c));
  }
  std::vector<Tensor<T>> grads;
  grads.reserve(channel_counts.size());
  int offset = 0;
  for (const int c : channel_counts) {
    Tensor<T> g(Shape{grad_out.shape.n, c, grad_out.shape.h, grad_out.shape.w});
    for (int n = 0; n < grad_out.shape.n; ++n) {
      for (int ch = 0; ch < c; ++ch) {
        const T* src = grad_out.plane(n, offset + ch);
        T* dst = g.plane(n, ch);
        std::copy(src, src + static_cast<std::ptrdiff_t>(grad_out.shape.h) * grad_out.shape.w,
                  dst);
      }
    }
    offset += c;
    grads.push_back(std::move(g));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
BceResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target, T clamp_eps) {
  check_same_shape(pred, target, "bce_loss");
  const T lo = clamp_eps, hi = T(1) - clamp_eps;
  const std::int64_t count = pred.size();
  BceResult<T> r{T(0), Tensor<T>(pred.shape)};
  T sum = T(0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const T p_raw = pred.data[i];
    // branch form keeps NaN predictions NaN so a poisoned model is caught
    const T p = p_raw < lo ? lo : (p_raw > hi ? hi : p_raw);
    const T y = target.data[i];
    sum += -(y * std::log(p) + (T(1) - y) * std::log(T(1) - p));
    if (p_raw < lo || p_raw > hi) {
      r.grad_pred.data[i] = T(0);  // clamp is active, derivative vanishes
    } else {
      r.grad_pred.data[i] = (p - y) / (p * (T(1) - p) * static_cast<T>(count));
    }
  }
  r.loss = sum / static_cast<T>(count);
  return r;
}

// ---------------------------------------------------------------------------
// Explicit instantiations: float for training, double for gradient checking.
// ---------------------------------------------------------------------------

#define NSEG_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const ConvParams<T>&);                 \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&,              \
                                           const Tensor<T>&);                                   \
  template BatchNormResult<T> batchnorm_forward<T>(const Tensor<T>&, const BatchNormParams<T>&, \
                                                   Mode);                                       \
  template BatchNormGrads<T> batchnorm_backward<T>(const BatchNormCache<T>&, const Tensor<T>&); \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                         \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sigmoid_forward<T>(const Tensor<T>&);                                      \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> activation_forward<T>(const Tensor<T>&, Activation);                       \
  template Tensor<T> activation_backward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                            const Tensor<T>&, Activation);                      \
  template MaxPoolResult<T> maxpool2x2_forward<T>(const Tensor<T>&);                            \
  template Tensor<T> maxpool2x2_backward<T>(const Shape&, const std::vector<std::uint32_t>&,    \
                                            const Tensor<T>&);                                  \
  template Tensor<T> upsample2x_forward<T>(const Tensor<T>&);                                   \
  template Tensor<T> upsample2x_backward<T>(const Tensor<T>&);                                  \
  template Tensor<T> concat_channels<T>(const std::vector<const Tensor<T>*>&);                  \
  template std::vector<Tensor<T>> concat_backward<T>(const Tensor<T>&, const std::vector<int>&); \
  template BceResult<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&, T);

NSEG_INSTANTIATE_OPS(float)
NSEG_INSTANTIATE_OPS(double)

#undef NSEG_INSTANTIATE_OPS

}  // namespace nseg
