#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nseg/model.hpp"

namespace nseg {

template <typename T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

/// First/second moments keyed like the gradients; shapes always mirror the
/// parameters they track. `t` counts completed steps.
template <typename T>
struct AdamState {
  std::int64_t t = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// One bias-corrected Adam update of a single parameter array, step index t
/// (1-based).
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::vector<T>& m, std::vector<T>& v,
                 std::int64_t t, const AdamConfig<T>& cfg);

/// Applies adam_update to every model parameter that has a gradient entry;
/// pruned-away parameters are left untouched. Increments state.t once.
template <typename T>
void adam_step(NestedUNet<T>& model, const Gradients<T>& grads, AdamState<T>& state,
               const AdamConfig<T>& cfg);

}  // namespace nseg
