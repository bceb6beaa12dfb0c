#pragma once

#include <functional>
#include <vector>

#include "efraft/tensor.hpp"

namespace efraft {

// Dense tensor operators. Each op computes its forward value and, when a
// tape is supplied and at least one input is tracked on it, records a node
// whose backward accumulates exact adjoints. Ops never mutate inputs.

// Elementwise (shapes must match where two tensors are involved).
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double c, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& a, double c, Tape* tape = nullptr);
Tensor tanh(const Tensor& a, Tape* tape = nullptr);
Tensor sigmoid(const Tensor& a, Tape* tape = nullptr);
Tensor relu(const Tensor& a, Tape* tape = nullptr);
Tensor sin(const Tensor& a, Tape* tape = nullptr);
Tensor cos(const Tensor& a, Tape* tape = nullptr);
Tensor abs(const Tensor& a, Tape* tape = nullptr);
Tensor exp(const Tensor& a, Tape* tape = nullptr);

// Structure / data movement.
Tensor concat(const std::vector<const Tensor*>& parts, Tape* tape = nullptr);  // along axis 0
Tensor slice_axis0(const Tensor& a, int begin, int end, Tape* tape = nullptr);
Tensor reshape(const Tensor& a, std::vector<int> shape, Tape* tape = nullptr);
// out = a * s[0], with s a one-element tensor (both factors differentiable).
Tensor scale_by(const Tensor& a, const Tensor& s, Tape* tape = nullptr);
Tensor sum(const Tensor& a, Tape* tape = nullptr);  // -> shape {1}
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);  // [m,k]x[k,n]
Tensor transpose2(const Tensor& a, Tape* tape = nullptr);               // [m,n] -> [n,m]
Tensor extract_row(const Tensor& a, int y, Tape* tape = nullptr);       // [C,H,W] -> [C,W]
Tensor extract_col(const Tensor& a, int x, Tape* tape = nullptr);       // [C,H,W] -> [C,H]
Tensor stack_rows(const std::vector<Tensor>& rows, Tape* tape = nullptr);  // H x [C,W] -> [C,H,W]
Tensor stack_cols(const std::vector<Tensor>& cols, Tape* tape = nullptr);  // W x [C,H] -> [C,H,W]
Tensor broadcast_spatial(const Tensor& a, int h, int w, Tape* tape = nullptr);  // [C] -> [C,h,w]

// Spatial / network operators.
//
// conv2d uses cross-correlation semantics with implicit zero padding:
// out[oc,oy,ox] = bias[oc] + sum_{ic,ky,kx} in[ic, oy*stride-pad+ky, ox*stride-pad+kx] * k[oc,ic,ky,kx].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding,
              Tape* tape = nullptr);

// Mean over k x k blocks of the two trailing dimensions; every leading
// dimension is carried through, so it applies unchanged to 4D volumes.
Tensor avg_pool2d(const Tensor& a, int k, Tape* tape = nullptr);

// Numerically stabilized softmax along the last dimension.
Tensor softmax_lastdim(const Tensor& a, Tape* tape = nullptr);

// [C,H,W] -> [2C]: per-channel spatial max in the first C slots, per-channel
// spatial min in the next C.
Tensor global_max_min_pool(const Tensor& a, Tape* tape = nullptr);

// Clamp-to-edge bilinear interpolation of a [C,H,W] field at n points.
// coords is [n,2] holding (x, y); x indexes W, y indexes H. Output is [C,n].
// Differentiable in both the field and the coordinates.
Tensor bilinear_sample(const Tensor& field, const Tensor& coords, Tape* tape = nullptr);
// Convenience overload for untracked coordinates.
Tensor bilinear_sample(const Tensor& field, const std::vector<std::pair<double, double>>& coords,
                       Tape* tape = nullptr);

// Bilinear upsampling of [C,h,w] by an integer factor with half-pixel
// centers (values are interpolated, not rescaled).
Tensor upsample_bilinear(const Tensor& a, int factor, Tape* tape = nullptr);

// Shared clamp-to-edge bilinear kernel: value and in-cell derivatives of a
// single-channel [h,w] plane addressed through a raw pointer.
struct BilinearTap {
    double value;
    double dvalue_dx;
    double dvalue_dy;
    int x0, y0, x1, y1;
    double fx, fy;
};
BilinearTap bilinear_tap(const double* plane, int h, int w, double x, double y);

// Max over all coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of the given point tensors. Runs under a
// ProbeGuard: ops spotting a kink at the probe point throw with a message
// asking for re-randomization.
double gradient_check(const std::function<Tensor(std::vector<Tensor>&, Tape*)>& f, std::vector<Tensor> point,
                      double eps);

}  // namespace efraft
