#include "efraft/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace efraft {

Tensor conv2d_naive(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    Tensor out({cout, ho, wo});
    for (int oc = 0; oc < cout; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias.at(oc);
                for (int ic = 0; ic < cin; ++ic) {
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = oy * stride - padding + ky;
                            const int ix = ox * stride - padding + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += input.at(ic, iy, ix) * kernel.at(oc, ic, ky, kx);
                        }
                    }
                }
                out.at(oc, oy, ox) = acc;
            }
        }
    }
    return out;
}

Tensor avg_pool2d_naive(const Tensor& a, int k) {
    const int h = a.dim(a.ndim() - 2), w = a.dim(a.ndim() - 1);
    if (h % k != 0 || w % k != 0) throw std::invalid_argument("avg_pool2d_naive: extents not divisible by k");
    std::vector<int> out_shape = a.shape();
    out_shape[out_shape.size() - 2] = h / k;
    out_shape[out_shape.size() - 1] = w / k;
    std::size_t lead = 1;
    for (int i = 0; i + 2 < a.ndim(); ++i) lead *= static_cast<std::size_t>(a.dim(i));
    Tensor out(out_shape);
    for (std::size_t l = 0; l < lead; ++l) {
        const double* ip = a.data() + l * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
        double* op = out.data() + l * static_cast<std::size_t>(h / k) * static_cast<std::size_t>(w / k);
        for (int oy = 0; oy < h / k; ++oy) {
            for (int ox = 0; ox < w / k; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < k; ++dy)
                    for (int dx = 0; dx < k; ++dx)
                        acc += ip[static_cast<std::size_t>(oy * k + dy) * w + static_cast<std::size_t>(ox * k + dx)];
                op[static_cast<std::size_t>(oy) * (w / k) + static_cast<std::size_t>(ox)] =
                    acc / (static_cast<double>(k) * static_cast<double>(k));
            }
        }
    }
    return out;
}

Tensor global_max_min_pool_naive(const Tensor& a) {
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    Tensor out({2 * c});
    for (int ci = 0; ci < c; ++ci) {
        double mx = a.at(ci, 0, 0), mn = a.at(ci, 0, 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                mx = std::max(mx, a.at(ci, y, x));
                mn = std::min(mn, a.at(ci, y, x));
            }
        }
        out.at(ci) = mx;
        out.at(c + ci) = mn;
    }
    return out;
}

double bilinear_naive(const Tensor& field, int channel, double x, double y) {
    const int h = field.dim(1), w = field.dim(2);
    const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(xc)), w > 1 ? w - 2 : 0);
    const int y0 = std::min(static_cast<int>(std::floor(yc)), h > 1 ? h - 2 : 0);
    const int x1 = w > 1 ? x0 + 1 : 0;
    const int y1 = h > 1 ? y0 + 1 : 0;
    const double fx = w > 1 ? xc - x0 : 0.0;
    const double fy = h > 1 ? yc - y0 : 0.0;
    return field.at(channel, y0, x0) * (1.0 - fy) * (1.0 - fx) + field.at(channel, y0, x1) * (1.0 - fy) * fx +
           field.at(channel, y1, x0) * fy * (1.0 - fx) + field.at(channel, y1, x1) * fy * fx;
}

}  // namespace efraft
