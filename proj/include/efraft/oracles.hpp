#pragma once

#include "efraft/tensor.hpp"

namespace efraft {

// Naive reference implementations used by the selftest suites and the unit
// tests. Each one is written as plain nested loops, independent of the op it
// checks, and is only meant for small extents.

Tensor conv2d_naive(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding);
Tensor avg_pool2d_naive(const Tensor& a, int k);
Tensor global_max_min_pool_naive(const Tensor& a);
double bilinear_naive(const Tensor& field, int channel, double x, double y);  // clamp-to-edge

}  // namespace efraft
