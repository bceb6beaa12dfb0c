#pragma once

#include <vector>

#include "efraft/tensor.hpp"

namespace efraft {

// All-pairs similarity volume plus its average-pooled levels. Level l has
// shape [H1, W1, H2/2^l, W2/2^l]; entry (i, j, y, x) of level 0 is the inner
// product of the frame-1 feature at row i, column j with the frame-2 feature
// at row y, column x. Memory is O(levels * H1*W1 * H2*W2) since every level
// is materialized.
struct CorrelationPyramid {
    std::vector<Tensor> levels;

    int query_h() const { return levels.front().dim(0); }
    int query_w() const { return levels.front().dim(1); }
    std::size_t total_elements() const;
};

// Builds the pyramid from two [D,H,W] feature maps. H and W must be
// divisible by 2^(levels-1). With scale set, level 0 is divided by sqrt(D).
CorrelationPyramid build_correlation_pyramid(const Tensor& f1, const Tensor& f2, int levels, bool scale = false,
                                             Tape* tape = nullptr);

// Pools an existing level-0 volume [H1,W1,H2,W2] into a pyramid. Used by
// build_correlation_pyramid and by tests that plant hand-made volumes.
CorrelationPyramid pyramid_from_level0(Tensor level0, int levels, Tape* tape = nullptr);

// Brute-force reference: plain loops for the inner products and for the
// block means, no shared code with the builder. Guarded to extents <= 16.
CorrelationPyramid correlation_oracle(const Tensor& f1, const Tensor& f2, int levels, bool scale = false);

}  // namespace efraft
