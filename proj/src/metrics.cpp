#include "efraft/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace efraft {

namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const char* op) {
    if (pred.ndim() != 3 || pred.dim(0) != 2) {
        throw std::invalid_argument(std::string(op) + ": expected [2,H,W] flows, got " + shape_str(pred.shape()));
    }
    if (pred.shape() != gt.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                                    shape_str(gt.shape()));
    }
}

}  // namespace

double compute_epe(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt, "epe");
    const int h = pred.dim(1), w = pred.dim(2);
    double acc = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            acc += std::hypot(pred.at(0, y, x) - gt.at(0, y, x), pred.at(1, y, x) - gt.at(1, y, x));
        }
    }
    return acc / (static_cast<double>(h) * static_cast<double>(w));
}

double compute_f1_all(const Tensor& pred, const Tensor& gt, OutlierRule rule) {
    check_pair(pred, gt, "f1_all");
    const int h = pred.dim(1), w = pred.dim(2);
    std::size_t outliers = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double err = std::hypot(pred.at(0, y, x) - gt.at(0, y, x), pred.at(1, y, x) - gt.at(1, y, x));
            const double mag = std::hypot(gt.at(0, y, x), gt.at(1, y, x));
            const bool over_abs = err > 3.0;
            const bool over_rel = err > 0.05 * mag;
            const bool outlier = rule == OutlierRule::paper_or ? (over_abs || over_rel) : (over_abs && over_rel);
            if (outlier) ++outliers;
        }
    }
    return 100.0 * static_cast<double>(outliers) / (static_cast<double>(h) * static_cast<double>(w));
}

}  // namespace efraft
