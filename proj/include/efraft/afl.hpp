#pragma once

#include <cstdint>

#include "efraft/tensor.hpp"
#include "efraft/weights.hpp"

namespace efraft {

// Interleaved sinusoidal encodings: row t holds sin(t*w_k), cos(t*w_k) for
// w_k = base^(-k/d_pe), k = 0 .. d_pe/2-1. Row 0 is [0,1,0,1,...] and every
// (sin,cos) pair has unit norm.
struct PositionalEncodingTable {
    int d_pe = 0;
    double base = 1000.0;
    Tensor table;               // [n, d_pe]
    std::vector<double> omega;  // d_pe/2 frequencies

    int length() const { return table.dim(0); }
};

PositionalEncodingTable positional_encoding(int n, int d_pe, double base = 1000.0);

// Converts an attention-pooled absolute encoding o = sum_j a_j pe(j) into
// the relative encoding sum_j a_j pe(i-j) through the angle-difference
// identities:
//   R[2k]   = sin(i*w_k) * o[2k+1] - cos(i*w_k) * o[2k]
//   R[2k+1] = cos(i*w_k) * o[2k+1] + sin(i*w_k) * o[2k]
Tensor relative_shift(const Tensor& o, int i, const PositionalEncodingTable& pe);

// Axis attention over one row or column of features [D,n] -> [d_pe,n].
// Queries and keys share one learned projection per head, values are the
// positional encodings, and the per-position output is relative-shifted so
// position i receives sum_j a_j pe(i-j). Head outputs are averaged.
Tensor axis_attention(const Tensor& features_axis, const PositionalEncodingTable& pe, const Model& model,
                      Tape* tape = nullptr);

// Direct reference: explicit sum_j a_j pe(i-j) with pe evaluated at signed
// arguments, no shift trick. Rows capped at length 64.
Tensor afl_oracle(const Tensor& features_axis, const PositionalEncodingTable& pe, const Model& model);

// Runs axis_attention over every row (x-offset encodings) and every column
// (y-offset encodings) with one shared parameter set and returns
// [D + 2*d_pe, H, W] = [features; dx encodings; dy encodings].
Tensor localize_features(const Tensor& features, const Model& model, Tape* tape = nullptr);

// MAC counter behind the axis-restricted complexity assertion.
std::uint64_t afl_op_count();
void afl_reset_op_count();

}  // namespace efraft
