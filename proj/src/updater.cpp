#include "efraft/updater.hpp"

#include <cmath>
#include <stdexcept>

#include "efraft/encoders.hpp"
#include "efraft/afl.hpp"
#include "efraft/ops.hpp"

namespace efraft {

Tensor gru_step(const Tensor& hidden, const Tensor& x, const Model& model, Tape* tape) {
    if (hidden.ndim() != 3 || x.ndim() != 3 || hidden.dim(1) != x.dim(1) || hidden.dim(2) != x.dim(2)) {
        throw std::invalid_argument("gru_step: hidden " + shape_str(hidden.shape()) + " and input " +
                                    shape_str(x.shape()) + " are not spatially aligned");
    }
    const auto& w = model.weights;
    Tensor hx = concat({&hidden, &x}, tape);
    Tensor z = sigmoid(conv2d(hx, w.get("gru.z.w"), w.get("gru.z.b"), 1, 1, tape), tape);
    Tensor r = sigmoid(conv2d(hx, w.get("gru.r.w"), w.get("gru.r.b"), 1, 1, tape), tape);
    Tensor rh = mul(r, hidden, tape);
    Tensor rhx = concat({&rh, &x}, tape);
    Tensor q = tanh(conv2d(rhx, w.get("gru.q.w"), w.get("gru.q.b"), 1, 1, tape), tape);
    // h' = (1 - z) * h + z * q
    return add(sub(hidden, mul(z, hidden, tape), tape), mul(z, q, tape), tape);
}

Tensor assemble_motion_features(const Tensor& corr, const Tensor& flow, const Tensor& context,
                                const Tensor& packed_scalars, const Model& model, Tape* tape) {
    if (corr.ndim() != 3 || flow.ndim() != 3 || context.ndim() != 3 || corr.dim(1) != flow.dim(1) ||
        corr.dim(2) != flow.dim(2) || corr.dim(1) != context.dim(1) || corr.dim(2) != context.dim(2)) {
        throw std::invalid_argument("motion features: correlation " + shape_str(corr.shape()) + ", flow " +
                                    shape_str(flow.shape()) + " and context " + shape_str(context.shape()) +
                                    " are not spatially aligned");
    }
    const auto& w = model.weights;
    Tensor c = relu(conv2d(corr, w.get("menc.corr1.w"), w.get("menc.corr1.b"), 1, 0, tape), tape);
    c = relu(conv2d(c, w.get("menc.corr2.w"), w.get("menc.corr2.b"), 1, 1, tape), tape);
    Tensor f = relu(conv2d(flow, w.get("menc.flow.w"), w.get("menc.flow.b"), 1, 1, tape), tape);
    Tensor s = broadcast_spatial(packed_scalars, corr.dim(1), corr.dim(2), tape);
    return concat({&c, &f, &context, &s}, tape);
}

Tensor flow_head(const Tensor& hidden, const Model& model, Tape* tape) {
    const auto& w = model.weights;
    Tensor y = relu(conv2d(hidden, w.get("head.conv1.w"), w.get("head.conv1.b"), 1, 1, tape), tape);
    return conv2d(y, w.get("head.conv2.w"), w.get("head.conv2.b"), 1, 1, tape);
}

Tensor upsample_flow(const Tensor& flow_eighth, Tape* tape) {
    if (flow_eighth.ndim() != 3 || flow_eighth.dim(0) != 2) {
        throw std::invalid_argument("upsample_flow: expected [2,h,w], got " + shape_str(flow_eighth.shape()));
    }
    return scale(upsample_bilinear(flow_eighth, 8, tape), 8.0, tape);
}

RefinementTrace refine(const Tensor& frame1, const Tensor& frame2, const Model& model, const RefineOptions& opts,
                       Tape* tape) {
    if (frame1.shape() != frame2.shape()) {
        throw std::invalid_argument("refine: frames must share a shape, got " + shape_str(frame1.shape()) + " vs " +
                                    shape_str(frame2.shape()));
    }
    const ModelConfig& cfg = model.config;
    const int iters = opts.iters >= 0 ? opts.iters : cfg.iters;
    const bool alo_on = opts.alo >= 0 ? opts.alo != 0 : cfg.alo;
    const bool afl_on = opts.afl >= 0 ? opts.afl != 0 : cfg.afl;
    if (iters < 1) throw std::invalid_argument("refine: need at least one iteration");

    Tensor f1 = encode_features(frame1, model, tape);
    Tensor f2 = encode_features(frame2, model, tape);
    if (afl_on) {
        f1 = localize_features(f1, model, tape);
        f2 = localize_features(f2, model, tape);
    }
    CorrelationPyramid pyr = build_correlation_pyramid(f1, f2, cfg.levels, cfg.corr_scale, tape);
    ContextState ctx = encode_context(frame1, model, tape);

    Tensor hidden = ctx.hidden0;
    Tensor flow({2, pyr.query_h(), pyr.query_w()});  // a_0 = 0
    const Tensor identity = pack_identity_scalars(cfg.levels);

    RefinementTrace trace;
    trace.flows_eighth.reserve(static_cast<std::size_t>(iters));
    trace.flows_full.reserve(static_cast<std::size_t>(iters));
    for (int it = 0; it < iters; ++it) {
        Tensor packed = identity;
        if (alo_on) packed = alo_scalar_head(hidden, ctx.context, model, tape).packed;
        Tensor corr = lookup_correlation_scaled(pyr, flow, cfg.radius, cfg.grid_norm, packed, tape);
        Tensor x = assemble_motion_features(corr, flow, ctx.context, packed, model, tape);
        hidden = gru_step(hidden, x, model, tape);
        Tensor delta = flow_head(hidden, model, tape);
        flow = add(flow, delta, tape);
        trace.flows_eighth.push_back(flow);
        trace.flows_full.push_back(upsample_flow(flow, tape));
        trace.scalars.push_back(AloScalars::from_packed(packed));
    }
    return trace;
}

Tensor sequence_loss(const std::vector<Tensor>& flows_full, const Tensor& gt_flow, double gamma, Tape* tape) {
    if (flows_full.empty()) throw std::invalid_argument("sequence_loss: no iterates");
    if (!(gamma > 0.0) || gamma > 1.0) {
        throw std::invalid_argument("sequence_loss: gamma must be in (0,1]");
    }
    const int n = static_cast<int>(flows_full.size());
    Tensor total;
    for (int i = 0; i < n; ++i) {
        const Tensor& fl = flows_full[static_cast<std::size_t>(i)];
        if (fl.shape() != gt_flow.shape()) {
            throw std::invalid_argument("sequence_loss: iterate " + std::to_string(i) + " has shape " +
                                        shape_str(fl.shape()) + ", ground truth is " + shape_str(gt_flow.shape()));
        }
        const double px = static_cast<double>(fl.dim(1)) * static_cast<double>(fl.dim(2));
        const double weight = std::pow(gamma, static_cast<double>(n - 1 - i));
        Tensor term = scale(sum(abs(sub(fl, gt_flow, tape), tape), tape), weight / px, tape);
        total = i == 0 ? term : add(total, term, tape);
    }
    return total;
}

}  // namespace efraft
