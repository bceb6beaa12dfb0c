#pragma once

#include "efraft/config.hpp"
#include "efraft/tensor.hpp"

namespace efraft {

// Mean over pixels of the endpoint distance sqrt(du^2 + dv^2).
double compute_epe(const Tensor& pred, const Tensor& gt);

// Outlier percentage. paper_or flags a pixel when its endpoint error exceeds
// 3 pixels OR 5% of the ground-truth magnitude; kitti_and requires both.
double compute_f1_all(const Tensor& pred, const Tensor& gt, OutlierRule rule);

}  // namespace efraft
