#include "efraft/encoders.hpp"

#include <stdexcept>

#include "efraft/ops.hpp"

namespace efraft {

namespace {

void check_image(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("encoder: expected a [3,H,W] image, got " + shape_str(image.shape()));
    }
    if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
        throw std::invalid_argument("encoder: extents " + std::to_string(image.dim(1)) + "x" +
                                    std::to_string(image.dim(2)) +
                                    " are not multiples of 8; pad the input before encoding");
    }
    for (std::size_t i = 0; i < image.size(); ++i) {
        if (!(image[i] >= 0.0 && image[i] <= 1.0)) {
            throw std::invalid_argument("encoder: pixel values must lie in [0,1]");
        }
    }
}

Tensor conv_named(const Tensor& x, const ModelWeights& w, const std::string& name, int stride, int pad, Tape* tape) {
    return conv2d(x, w.get(name + ".w"), w.get(name + ".b"), stride, pad, tape);
}

Tensor residual_unit(const Tensor& x, const ModelWeights& w, const std::string& name, Tape* tape) {
    Tensor y = relu(conv_named(x, w, name + ".conv1", 1, 1, tape), tape);
    y = conv_named(y, w, name + ".conv2", 1, 1, tape);
    return relu(add(x, y, tape), tape);
}

// Three downsampling stages with two residual units each, then a 1x1
// projection; 1/8 resolution overall.
Tensor trunk(const Tensor& image, const ModelWeights& w, const std::string& p, Tape* tape) {
    Tensor x = add_scalar(image, -0.5, tape);
    x = relu(conv_named(x, w, p + ".stem", 2, 3, tape), tape);
    x = residual_unit(x, w, p + ".res1a", tape);
    x = residual_unit(x, w, p + ".res1b", tape);
    x = relu(conv_named(x, w, p + ".down2", 2, 1, tape), tape);
    x = residual_unit(x, w, p + ".res2a", tape);
    x = residual_unit(x, w, p + ".res2b", tape);
    x = relu(conv_named(x, w, p + ".down3", 2, 1, tape), tape);
    x = residual_unit(x, w, p + ".res3a", tape);
    x = residual_unit(x, w, p + ".res3b", tape);
    return conv_named(x, w, p + ".proj", 1, 0, tape);
}

}  // namespace

Tensor encode_features(const Tensor& image, const Model& model, Tape* tape) {
    check_image(image);
    return trunk(image, model.weights, "fnet", tape);
}

ContextState encode_context(const Tensor& image, const Model& model, Tape* tape) {
    check_image(image);
    Tensor both = trunk(image, model.weights, "cnet", tape);
    const int dh = model.config.hidden_dim;
    ContextState out;
    out.hidden0 = tanh(slice_axis0(both, 0, dh, tape), tape);
    out.context = relu(slice_axis0(both, dh, dh + model.config.context_dim, tape), tape);
    return out;
}

}  // namespace efraft
