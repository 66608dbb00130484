#pragma once

// Test-only oracles, written independently of the library kernels: a naive
// quadruple-loop convolution and central finite differences. Used to freeze
// expected values and to check every backward pass.

#include <cmath>
#include <functional>
#include <vector>

#include "nseg/rng.hpp"
#include "nseg/tensor.hpp"

namespace oracle {

/// Direct summation convolution: stride 1, zero same-padding, no bias.
inline nseg::Tensor<double> conv2d_naive(const nseg::Tensor<double>& in,
                                         const nseg::Tensor<double>& w) {
  const int N = in.shape.n, C = in.shape.c, H = in.shape.h, W = in.shape.w;
  const int CO = w.shape.n, K = w.shape.h, pad = (K - 1) / 2;
  nseg::Tensor<double> out(nseg::Shape{N, CO, H, W});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < CO; ++co)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = 0.0;
          for (int ci = 0; ci < C; ++ci)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int sy = y + ky - pad, sx = x + kx - pad;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += in.at(n, ci, sy, sx) * w.at(co, ci, ky, kx);
              }
          out.at(n, co, y, x) = acc;
        }
  return out;
}

/// d/dx_i of `scalar_fn` via central differences.
inline double central_diff(const std::function<double()>& scalar_fn, double& x, double step) {
  const double orig = x;
  x = orig + step;
  const double fp = scalar_fn();
  x = orig - step;
  const double fm = scalar_fn();
  x = orig;
  return (fp - fm) / (2.0 * step);
}

/// Relative error that treats a pair of near-zero values as equal.
inline double rel_err(double a, double b, double floor = 1e-12) {
  const double denom = std::max(std::abs(a), std::abs(b));
  if (denom < floor) return 0.0;
  return std::abs(a - b) / denom;
}

/// Checks an analytic gradient vector against central differences of a
/// scalar-valued recomputation. Returns the max relative error.
inline double max_grad_rel_err(const std::function<double()>& scalar_fn, std::vector<double>& x,
                               const std::vector<double>& analytic, double step) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = central_diff(scalar_fn, x[i], step);
    worst = std::max(worst, rel_err(fd, analytic[i]));
  }
  return worst;
}

inline nseg::Tensor<double> random_tensor(nseg::Shape s, nseg::SplitMix64& rng, double lo = -1.0,
                                          double hi = 1.0) {
  nseg::Tensor<double> t(s);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Dot product used to scalarize multi-output ops for gradient checks.
inline double weighted_sum(const nseg::Tensor<double>& t, const nseg::Tensor<double>& weights) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) acc += t.data[i] * weights.data[i];
  return acc;
}

}  // namespace oracle
