#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efraft/tensor.hpp"
#include "efraft/weights.hpp"

namespace efraft {

// Frame pair with exact ground-truth flow. frame2 is frame1 resampled with
// clamp-to-edge bilinear interpolation, so warping frame1 by gt_flow
// reproduces frame2 on the nose.
struct SyntheticScene {
    Tensor frame1, frame2;  // [3,H,W] in [0,1]
    Tensor gt_flow;         // [2,H,W], image pixels
    std::string kind;
};

// Band-limited texture (sum of 8 random sinusoids per channel) shifted by t.
SyntheticScene gen_translation_pair(std::uint64_t texture_seed, int h, int w, double tx, double ty);

// Textured background with a constant-color rectangle, both shifted by t.
// The rectangle is given as (x, y, width, height) in pixels.
SyntheticScene gen_flat_region_scene(std::uint64_t texture_seed, int h, int w, int rect_x, int rect_y, int rect_w,
                                     int rect_h, double tx, double ty);

// Clamp-to-edge bilinear warp of frame1 by the flow (the scene consistency
// oracle): result(x, y) = frame(x - u, y - v).
Tensor warp_backward(const Tensor& frame, const Tensor& flow);

// Seeded translation scenes for toy training: square frames of the given
// size, translations drawn from [-6,6] x [-4,4].
std::vector<SyntheticScene> default_toy_scenes(std::uint64_t seed, int count, int size);

// Full-batch gradient descent on the sequence loss over the scenes, with
// per-element gradient clipping to [-1, 1]. Enforces desk scale (frames
// <= 64 px, iters <= 4, steps <= 500). Returns steps+1 loss values: the loss
// each step descended plus a final evaluation.
std::vector<double> toy_train(Model& model, const std::vector<SyntheticScene>& scenes, int steps, double lr,
                              int iters);

struct BenchRow {
    std::string name;
    int h = 0, w = 0, iters = 0;
    bool alo = false, afl = false;
    double ms_per_iter = 0.0;
    std::uint64_t params_consumed = 0;
    double reach_px = 0.0;
    double est_mem_mb = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    std::string to_tsv() const;
    std::string to_records() const;  // one key: value block per row
};

// Times the refinement loop with the adaptive lookup and the localizer
// toggled on and off; reports per-iteration wall time, consumed parameter
// counts, analytic reach and a coarse memory estimate.
BenchReport bench_lookup(const ModelConfig& base_cfg, int h, int w, int iters, int repeats);

}  // namespace efraft
