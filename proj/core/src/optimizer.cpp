#include "nseg/optimizer.hpp"

#include <cmath>

namespace nseg {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::vector<T>& m, std::vector<T>& v,
                 std::int64_t t, const AdamConfig<T>& cfg) {
  if (param.size() != grad.size()) {
    throw ContractError("adam_update: gradient size " + std::to_string(grad.size()) +
                        " does not mirror parameter size " + std::to_string(param.size()));
  }
  if (m.empty()) m.assign(param.size(), T(0));
  if (v.empty()) v.assign(param.size(), T(0));
  if (m.size() != param.size() || v.size() != param.size()) {
    throw ContractError("adam_update: moment size does not mirror parameter");
  }
  const T one = T(1);
  const T bc1 = one - static_cast<T>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t)));
  const T bc2 = one - static_cast<T>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t)));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (one - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (one - cfg.beta2) * grad[i] * grad[i];
    const T m_hat = m[i] / bc1;
    const T v_hat = v[i] / bc2;
    param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

template <typename T>
void adam_step(NestedUNet<T>& model, const Gradients<T>& grads, AdamState<T>& state,
               const AdamConfig<T>& cfg) {
  ++state.t;
  model.for_each_param_mut([&](const ParamRef<T>& p) {
    if (!p.learned) return;
    const auto it = grads.find(p.name);
    if (it == grads.end()) return;  // outside the pruned sub-network
    adam_update(std::span<T>(p.values, static_cast<std::size_t>(p.count)),
                std::span<const T>(it->second.data(), it->second.size()), state.m[p.name],
                state.v[p.name], state.t, cfg);
  });
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::vector<float>&,
                                 std::vector<float>&, std::int64_t, const AdamConfig<float>&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::vector<double>&,
                                  std::vector<double>&, std::int64_t, const AdamConfig<double>&);
template void adam_step<float>(NestedUNet<float>&, const Gradients<float>&, AdamState<float>&,
                               const AdamConfig<float>&);
template void adam_step<double>(NestedUNet<double>&, const Gradients<double>&, AdamState<double>&,
                                const AdamConfig<double>&);

}  // namespace nseg
