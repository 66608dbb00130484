#pragma once

#include "nseg/tensor.hpp"

namespace nseg {

/// Fraction of pixels where (pred_prob >= threshold) equals the binary mask.
template <typename T>
double pixel_accuracy(const Tensor<T>& pred_prob, const Tensor<T>& mask, double threshold = 0.5);

/// Dice overlap 2|A∩B| / (|A| + |B|) of the thresholded prediction A and the
/// mask B; both empty counts as 1.
template <typename T>
double dice_coefficient(const Tensor<T>& pred_prob, const Tensor<T>& mask, double threshold = 0.5);

}  // namespace nseg
