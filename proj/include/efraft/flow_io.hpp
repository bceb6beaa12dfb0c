#pragma once

#include <string>

#include "efraft/tensor.hpp"

namespace efraft {

// Flow interchange file: byte magic "PIEH", little-endian i32 width and
// height, then width*height interleaved (u, v) float32 pairs in row-major
// order. Round-trips are bit-exact for finite float32 values.
Tensor read_flo(const std::string& path);                     // -> [2,H,W]
void write_flo(const std::string& path, const Tensor& flow);  // atomic (temp + rename)

// Binary PPM (P6, maxval 255). Images are [3,H,W] tensors with values in
// [0,1]; writing rounds to the nearest byte.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

// Color-wheel rendering of a flow field: hue follows atan2(v, u), saturation
// grows with magnitude normalized by the field maximum (or the given cap),
// zero flow renders white.
Tensor flow_to_color(const Tensor& flow, double cap = 0.0);

}  // namespace efraft
