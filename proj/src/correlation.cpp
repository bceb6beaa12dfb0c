#include "efraft/correlation.hpp"

#include <cmath>
#include <stdexcept>

#include "efraft/ops.hpp"

namespace efraft {

std::size_t CorrelationPyramid::total_elements() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += l.size();
    return n;
}

CorrelationPyramid pyramid_from_level0(Tensor level0, int levels, Tape* tape) {
    if (level0.ndim() != 4) {
        throw std::invalid_argument("pyramid: level 0 must be 4-d, got " + shape_str(level0.shape()));
    }
    if (levels < 1) throw std::invalid_argument("pyramid: need at least one level");
    const int div = 1 << (levels - 1);
    if (level0.dim(2) % div != 0 || level0.dim(3) % div != 0) {
        throw std::invalid_argument("pyramid: slab extents " + std::to_string(level0.dim(2)) + "x" +
                                    std::to_string(level0.dim(3)) + " not divisible by 2^(levels-1)=" +
                                    std::to_string(div));
    }
    CorrelationPyramid pyr;
    pyr.levels.push_back(std::move(level0));
    for (int l = 1; l < levels; ++l) {
        pyr.levels.push_back(avg_pool2d(pyr.levels.back(), 2, tape));
    }
    return pyr;
}

CorrelationPyramid build_correlation_pyramid(const Tensor& f1, const Tensor& f2, int levels, bool scale, Tape* tape) {
    if (f1.ndim() != 3 || f2.ndim() != 3) {
        throw std::invalid_argument("correlation: feature maps must be [D,H,W]");
    }
    if (f1.dim(0) != f2.dim(0)) {
        throw std::invalid_argument("correlation: feature dimensions disagree, " + std::to_string(f1.dim(0)) +
                                    " vs " + std::to_string(f2.dim(0)));
    }
    if (f1.shape() != f2.shape()) {
        throw std::invalid_argument("correlation: feature maps must share a shape, got " + shape_str(f1.shape()) +
                                    " vs " + shape_str(f2.shape()));
    }
    const int d = f1.dim(0), h = f1.dim(1), w = f1.dim(2);
    const int hw = h * w;
    Tensor a = transpose2(reshape(f1, {d, hw}, tape), tape);  // [HW, D]
    Tensor b = reshape(f2, {d, hw}, tape);                    // [D, HW]
    Tensor m = matmul(a, b, tape);                            // [HW, HW]
    if (scale) m = efraft::scale(m, 1.0 / std::sqrt(static_cast<double>(d)), tape);
    return pyramid_from_level0(reshape(m, {h, w, h, w}, tape), levels, tape);
}

CorrelationPyramid correlation_oracle(const Tensor& f1, const Tensor& f2, int levels, bool scale) {
    if (f1.shape() != f2.shape() || f1.ndim() != 3) {
        throw std::invalid_argument("correlation_oracle: feature maps must be [D,H,W] with matching shapes");
    }
    const int d = f1.dim(0), h = f1.dim(1), w = f1.dim(2);
    if (h > 16 || w > 16) {
        throw std::invalid_argument("correlation_oracle: extents capped at 16, got " + std::to_string(h) + "x" +
                                    std::to_string(w));
    }
    const double s = scale ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    Tensor level0({h, w, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0;
                    for (int c = 0; c < d; ++c) acc += f1.at(c, i, j) * f2.at(c, y, x);
                    level0.at(i, j, y, x) = acc * s;
                }

    CorrelationPyramid pyr;
    pyr.levels.push_back(std::move(level0));
    for (int l = 1; l < levels; ++l) {
        const Tensor& prev = pyr.levels.back();
        const int sh = prev.dim(2), sw = prev.dim(3);
        if (sh % 2 != 0 || sw % 2 != 0) {
            throw std::invalid_argument("correlation_oracle: slab extents not divisible for level " +
                                        std::to_string(l));
        }
        Tensor next({h, w, sh / 2, sw / 2});
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int y = 0; y < sh / 2; ++y)
                    for (int x = 0; x < sw / 2; ++x) {
                        double acc = prev.at(i, j, 2 * y, 2 * x) + prev.at(i, j, 2 * y, 2 * x + 1) +
                                     prev.at(i, j, 2 * y + 1, 2 * x) + prev.at(i, j, 2 * y + 1, 2 * x + 1);
                        next.at(i, j, y, x) = acc / 4.0;
                    }
        pyr.levels.push_back(std::move(next));
    }
    return pyr;
}

}  // namespace efraft
