#pragma once

#include "efraft/tensor.hpp"
#include "efraft/weights.hpp"

namespace efraft {

struct ContextState {
    Tensor hidden0;  // [hidden_dim, H/8, W/8], tanh-bounded initial GRU state
    Tensor context;  // [context_dim, H/8, W/8], nonnegative
};

// Shared feature encoder applied to both frames. Input is [3,H,W] with
// pixel values in [0,1] and H, W multiples of 8; output is
// [feature_dim, H/8, W/8]. Three stride-2 stages (7x7 stem, then two 3x3
// downsamplers), two residual units per stage, and a 1x1 projection.
Tensor encode_features(const Tensor& image, const Model& model, Tape* tape = nullptr);

// Context encoder, applied to the first frame only. The trunk matches
// encode_features with its own parameters; the projection output is split
// into a tanh-bounded initial hidden state and a relu context map.
ContextState encode_context(const Tensor& image, const Model& model, Tape* tape = nullptr);

}  // namespace efraft
