#pragma once

#include <vector>

#include "efraft/correlation.hpp"
#include "efraft/tensor.hpp"
#include "efraft/weights.hpp"

namespace efraft {

// Set of sampling offsets in level-local pixel units. Offsets are ordered
// row-major in (dy, dx); the set always contains (0,0) and is closed under
// negation.
struct LookupGrid {
    std::vector<std::pair<double, double>> offsets;  // (dx, dy)
    int radius = 0;
};

LookupGrid make_vanilla_grid(int radius, GridNorm norm = GridNorm::linf);

// (i, j) -> (sx*i + sign(i)*dx, sy*j + sign(j)*dy), applied per offset with
// sign(0) = 0. Identity at s=1, d=0; symmetry under negation is preserved
// for any scalars.
LookupGrid alo_transform_grid(const LookupGrid& grid, double sx, double sy, double dx, double dy);

// Per-level grid shape parameters. sx, sy live in [1,3] and dx, dy in [0,2];
// s=1, d=0 reproduces the vanilla grid.
struct AloScalars {
    std::vector<double> sx, sy, dx, dy;  // one entry per pyramid level

    static AloScalars identity(int levels);
    static AloScalars from_packed(const Tensor& packed);  // inverse of the layout below
};

// Packed layout used on the tape: [sx0, sy0, .., sx(L-1), sy(L-1),
// dx0, dy0, .., dx(L-1), dy(L-1)], i.e. the s block then the d block.
Tensor pack_identity_scalars(int levels);

struct AloHeadResult {
    Tensor packed;       // [4L], tape-connected
    AloScalars scalars;  // plain values for logging
};

// Scalar head: concat(hidden, context) -> 1x1 conv -> global max/min pool
// -> two single-layer maps with logistic outputs, then s = 1 + 2*sigmoid,
// d = 2*sigmoid. One (sx, sy, dx, dy) quadruple per pyramid level.
AloHeadResult alo_scalar_head(const Tensor& hidden, const Tensor& context, const Model& model, Tape* tape = nullptr);

// Samples every pyramid level around p + flow(p) on the given per-level
// grids with clamp-to-edge bilinear interpolation. Output channels run level
// by level, offsets in their grid order. flow is [2,h,w] in feature-grid
// units with u = channel 0 (columns), v = channel 1 (rows).
Tensor lookup_correlation(const CorrelationPyramid& pyr, const Tensor& flow, const std::vector<LookupGrid>& grids,
                          Tape* tape = nullptr);

// Same lookup driven by a packed scalar tensor; per-level grids are the
// vanilla grid transformed by the scalars, and the sample positions are
// differentiable in both the flow and the scalars. Identity scalars
// reproduce lookup_correlation on vanilla grids bit for bit.
Tensor lookup_correlation_scaled(const CorrelationPyramid& pyr, const Tensor& flow, int radius, GridNorm norm,
                                 const Tensor& packed_scalars, Tape* tape = nullptr);

// Largest image-space displacement one lookup can query: (s*r + d) level-
// (L-1) pixels, each worth 2^(L-1) feature cells of 8 image pixels.
double lookup_reach_px(int radius, int levels, double s, double d);

}  // namespace efraft
