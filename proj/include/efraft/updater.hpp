#pragma once

#include <array>
#include <vector>

#include "efraft/lookup.hpp"
#include "efraft/tensor.hpp"
#include "efraft/weights.hpp"

namespace efraft {

enum class FlowResolution { eighth, full };

// Per-pixel displacement field: channel 0 is the x displacement u, channel 1
// the y displacement v. Units are feature-grid pixels at eighth resolution
// and image pixels at full resolution.
struct FlowField {
    Tensor uv;  // [2,h,w]
    FlowResolution res = FlowResolution::eighth;
};

struct RefinementTrace {
    std::vector<Tensor> flows_eighth;  // [2,h,w] per iteration
    std::vector<Tensor> flows_full;    // [2,8h,8w] per iteration, upsampled
    std::vector<AloScalars> scalars;   // grid parameters used per iteration
};

struct RefineOptions {
    int iters = -1;  // -1 = model config
    int alo = -1;    // -1 = model config, else 0/1
    int afl = -1;
};

// One convolutional GRU update. x carries the motion features; the output
// hidden state stays in (-1, 1).
Tensor gru_step(const Tensor& hidden, const Tensor& x, const Model& model, Tape* tape = nullptr);

// Concatenates encoded correlation features (two convs), encoded flow (one
// conv), the context map and the spatially broadcast packed grid scalars.
Tensor assemble_motion_features(const Tensor& corr, const Tensor& flow, const Tensor& context,
                                const Tensor& packed_scalars, const Model& model, Tape* tape = nullptr);

// Two 3x3 convolutions ending in a 2-channel flow increment.
Tensor flow_head(const Tensor& hidden, const Model& model, Tape* tape = nullptr);

// Bilinear x8 upsampling with the x8 unit conversion from feature-grid
// pixels to image pixels.
Tensor upsample_flow(const Tensor& flow_eighth, Tape* tape = nullptr);

// Full pipeline: encoders -> optional feature localization -> correlation
// pyramid -> iterative {scalar head, lookup, motion features, GRU, flow
// head} refinement from a zero initial flow.
RefinementTrace refine(const Tensor& frame1, const Tensor& frame2, const Model& model, const RefineOptions& opts = {},
                       Tape* tape = nullptr);

// sum_i gamma^(N-i) * mean_px(|u_i - u_gt| + |v_i - v_gt|) over the full-
// resolution iterates (1-based i, so the last iterate carries weight 1).
Tensor sequence_loss(const std::vector<Tensor>& flows_full, const Tensor& gt_flow, double gamma,
                     Tape* tape = nullptr);

}  // namespace efraft
