#include "nseg/metrics.hpp"

namespace nseg {

namespace {

template <typename T>
void check_pair(const Tensor<T>& pred, const Tensor<T>& mask, const char* what) {
  if (!(pred.shape == mask.shape)) {
    throw ContractError(std::string(what) + ": shape mismatch " + pred.shape.str() + " vs " +
                        mask.shape.str());
  }
  for (const T v : mask.data) {
    if (v != T(0) && v != T(1)) {
      throw ContractError(std::string(what) + ": mask is not binary");
    }
  }
}

}  // namespace

template <typename T>
double pixel_accuracy(const Tensor<T>& pred_prob, const Tensor<T>& mask, double threshold) {
  check_pair(pred_prob, mask, "pixel_accuracy");
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < pred_prob.data.size(); ++i) {
    const bool a = static_cast<double>(pred_prob.data[i]) >= threshold;
    const bool b = mask.data[i] != T(0);
    correct += (a == b) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(pred_prob.size());
}

template <typename T>
double dice_coefficient(const Tensor<T>& pred_prob, const Tensor<T>& mask, double threshold) {
  check_pair(pred_prob, mask, "dice_coefficient");
  std::int64_t a_count = 0, b_count = 0, inter = 0;
  for (std::size_t i = 0; i < pred_prob.data.size(); ++i) {
    const bool a = static_cast<double>(pred_prob.data[i]) >= threshold;
    const bool b = mask.data[i] != T(0);
    a_count += a ? 1 : 0;
    b_count += b ? 1 : 0;
    inter += (a && b) ? 1 : 0;
  }
  if (a_count + b_count == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a_count + b_count);
}

template double pixel_accuracy<float>(const Tensor<float>&, const Tensor<float>&, double);
template double pixel_accuracy<double>(const Tensor<double>&, const Tensor<double>&, double);
template double dice_coefficient<float>(const Tensor<float>&, const Tensor<float>&, double);
template double dice_coefficient<double>(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace nseg
