#include "efraft/selftest.hpp"

#include <cmath>
#include <sstream>

#include "efraft/afl.hpp"
#include "efraft/correlation.hpp"
#include "efraft/encoders.hpp"
#include "efraft/lookup.hpp"
#include "efraft/oracles.hpp"
#include "efraft/ops.hpp"
#include "efraft/rng.hpp"
#include "efraft/synthetic.hpp"
#include "efraft/updater.hpp"

namespace efraft {

namespace {

Tensor random_tensor(SplitMix64& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

bool expect(bool cond, const std::string& msg, std::string& detail) {
    if (!cond && detail.empty()) detail = msg;
    return cond;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.feature_dim = 16;
    cfg.hidden_dim = 16;
    cfg.context_dim = 16;
    cfg.pe_dim = 8;
    cfg.head_dim = 8;
    cfg.radius = 2;
    cfg.levels = 2;
    cfg.alo_head_dim = 16;
    cfg.corr_enc_hidden = 16;
    cfg.corr_enc_out = 16;
    cfg.flow_enc_out = 8;
    cfg.flow_head_hidden = 16;
    cfg.seed = 7;
    return cfg;
}

bool run_conv_suite(std::string& detail) {
    bool ok = true;
    // 1x1 scaling kernel
    Tensor in({1, 2, 2}, {1, 2, 3, 4});
    Tensor k({1, 1, 1, 1}, {2});
    Tensor b({1}, {0});
    Tensor out = conv2d(in, k, b, 1, 0);
    ok &= expect(out[0] == 2 && out[1] == 4 && out[2] == 6 && out[3] == 8, "1x1 kernel scaling", detail);
    // all-ones 3x3 on a constant-1 field, pad 1
    Tensor ones = Tensor::full({1, 3, 3}, 1.0);
    Tensor k9 = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor c = conv2d(ones, k9, b, 1, 1);
    ok &= expect(c.at(0, 1, 1) == 9.0 && c.at(0, 0, 0) == 4.0, "3x3 box sums", detail);
    // random vs naive
    SplitMix64 rng(101);
    for (int rep = 0; rep < 5 && ok; ++rep) {
        Tensor x = random_tensor(rng, {4, 8, 8});
        Tensor kk = random_tensor(rng, {8, 4, 3, 3});
        Tensor bb = random_tensor(rng, {8});
        const double d = max_abs_diff(conv2d(x, kk, bb, 1, 1), conv2d_naive(x, kk, bb, 1, 1));
        ok &= expect(d <= 1e-12, "conv2d differs from the loop oracle by " + std::to_string(d), detail);
    }
    return ok;
}

bool run_pool_suite(std::string& detail) {
    bool ok = true;
    Tensor t({1, 2, 2}, {1, 2, 3, 4});
    ok &= expect(avg_pool2d(t, 2)[0] == 2.5, "2x2 block mean", detail);
    SplitMix64 rng(102);
    Tensor vol = random_tensor(rng, {2, 2, 4, 4});
    ok &= expect(max_abs_diff(avg_pool2d(vol, 2), avg_pool2d_naive(vol, 2)) <= 1e-12, "4D volume block means", detail);
    Tensor wide = random_tensor(rng, {1, 8, 8});
    ok &= expect(max_abs_diff(avg_pool2d(avg_pool2d(wide, 2), 2), avg_pool2d(wide, 4)) <= 1e-12,
                 "pool(2) twice equals pool(4)", detail);
    Tensor c = Tensor::full({3, 4, 4}, 0.37);
    Tensor pc = avg_pool2d(c, 2);
    for (std::size_t i = 0; i < pc.size(); ++i) ok &= expect(pc[i] == 0.37, "constant field mean", detail);
    return ok;
}

bool run_bilinear_suite(std::string& detail) {
    bool ok = true;
    Tensor f({1, 2, 2}, {1, 2, 3, 4});
    ok &= expect(bilinear_sample(f, {{0.5, 0.5}})[0] == 2.5, "center of a 2x2 cell", detail);
    ok &= expect(bilinear_sample(f, {{1.0, 0.0}})[0] == 2.0, "lattice exactness", detail);
    ok &= expect(bilinear_sample(f, {{-10.0, -10.0}})[0] == 1.0, "clamp to the corner", detail);
    SplitMix64 rng(103);
    Tensor g = random_tensor(rng, {3, 6, 7});
    for (int rep = 0; rep < 20 && ok; ++rep) {
        const double x = rng.uniform(-1.0, 7.0), y = rng.uniform(-1.0, 6.0);
        Tensor s = bilinear_sample(g, {{x, y}});
        for (int c = 0; c < 3; ++c) {
            const double d = std::fabs(s.at(c, 0) - bilinear_naive(g, c, x, y));
            ok &= expect(d <= 1e-12, "bilinear sample differs from the oracle", detail);
        }
        Tensor s2 = bilinear_sample(g, {{x + 1e-9, y}});
        ok &= expect(std::fabs(s2[0] - s[0]) <= 1e-6 * 2.0, "continuity under 1e-9 nudges", detail);
    }
    return ok;
}

bool run_softmax_suite(std::string& detail) {
    bool ok = true;
    Tensor eq = Tensor::full({4}, 1.7);
    Tensor se = softmax_lastdim(eq);
    for (int i = 0; i < 4; ++i) ok &= expect(std::fabs(se[static_cast<std::size_t>(i)] - 0.25) <= 1e-15, "uniform logits", detail);
    Tensor two({2}, {0.0, std::log(2.0)});
    Tensor st = softmax_lastdim(two);
    ok &= expect(std::fabs(st[0] - 1.0 / 3.0) <= 1e-12 && std::fabs(st[1] - 2.0 / 3.0) <= 1e-12, "[0, ln2] case", detail);
    SplitMix64 rng(104);
    for (int rep = 0; rep < 10 && ok; ++rep) {
        Tensor x = random_tensor(rng, {3, 9}, -5.0, 5.0);
        Tensor y = softmax_lastdim(x);
        for (int r = 0; r < 3; ++r) {
            double s = 0.0;
            for (int i = 0; i < 9; ++i) s += y.at(r, i);
            ok &= expect(std::fabs(s - 1.0) <= 1e-12, "rows sum to one", detail);
        }
        Tensor shifted = softmax_lastdim(add_scalar(x, 13.25));
        ok &= expect(max_abs_diff(y, shifted) <= 1e-12, "shift invariance", detail);
    }
    return ok;
}

bool run_maxmin_suite(std::string& detail) {
    bool ok = true;
    Tensor t({1, 2, 2}, {1, 5, -2, 0});
    Tensor p = global_max_min_pool(t);
    ok &= expect(p[0] == 5.0 && p[1] == -2.0, "hand max/min", detail);
    SplitMix64 rng(105);
    Tensor x = random_tensor(rng, {6, 5, 4});
    ok &= expect(max_abs_diff(global_max_min_pool(x), global_max_min_pool_naive(x)) == 0.0, "matches the loop oracle",
                 detail);
    ok &= expect(global_max_min_pool(x).size() == 12, "output length 2C", detail);
    Tensor c = Tensor::full({2, 3, 3}, 0.4);
    Tensor pc = global_max_min_pool(c);
    ok &= expect(pc[0] == 0.4 && pc[2] == 0.4, "constant channel max == min", detail);
    return ok;
}

bool run_gradcheck_suite(std::string& detail) {
    bool ok = true;
    SplitMix64 rng(106);
    {
        Tensor x = random_tensor(rng, {2, 5, 5});
        Tensor k = random_tensor(rng, {3, 2, 3, 3});
        Tensor b = random_tensor(rng, {3});
        const double err = gradient_check(
            [](std::vector<Tensor>& p, Tape* tape) {
                return sum(conv2d(p[0], p[1], p[2], 1, 1, tape), tape);
            },
            {x, k, b}, 1e-5);
        ok &= expect(err <= 1e-6, "conv2d gradient error " + std::to_string(err), detail);
    }
    {
        Tensor f = random_tensor(rng, {2, 4, 4});
        Tensor coords({3, 2}, {0.4, 1.3, 2.2, 0.7, 1.6, 2.45});
        const double err = gradient_check(
            [](std::vector<Tensor>& p, Tape* tape) {
                return sum(tanh(bilinear_sample(p[0], p[1], tape), tape), tape);
            },
            {f, coords}, 1e-5);
        ok &= expect(err <= 1e-4, "bilinear gradient error " + std::to_string(err), detail);
    }
    {
        Tensor z = random_tensor(rng, {3, 6});
        const double err = gradient_check(
            [](std::vector<Tensor>& p, Tape* tape) {
                return sum(mul(softmax_lastdim(p[0], tape), sigmoid(p[0], tape), tape), tape);
            },
            {z}, 1e-5);
        ok &= expect(err <= 1e-4, "softmax composite gradient error " + std::to_string(err), detail);
    }
    {
        Tensor x0 = Tensor::full({1, 2, 2}, 0.5);
        const double err = gradient_check(
            [](std::vector<Tensor>& p, Tape*) {
                (void)p;
                return Tensor::scalar(3.0);  // constant function
            },
            {x0}, 1e-5);
        ok &= expect(err == 0.0, "constant function should give zero error", detail);
    }
    return ok;
}

bool run_correlation_suite(std::string& detail) {
    bool ok = true;
    SplitMix64 rng(107);
    for (int rep = 0; rep < 3 && ok; ++rep) {
        Tensor f1 = random_tensor(rng, {8, 8, 8});
        Tensor f2 = random_tensor(rng, {8, 8, 8});
        CorrelationPyramid a = build_correlation_pyramid(f1, f2, 4);
        CorrelationPyramid b = correlation_oracle(f1, f2, 4);
        for (int l = 0; l < 4; ++l) {
            const double d = max_abs_diff(a.levels[static_cast<std::size_t>(l)], b.levels[static_cast<std::size_t>(l)]);
            ok &= expect(d <= 1e-12, "pyramid level " + std::to_string(l) + " differs by " + std::to_string(d), detail);
        }
        CorrelationPyramid sym = build_correlation_pyramid(f2, f1, 1);
        ok &= expect(std::fabs(a.levels[0].at(1, 2, 3, 4) - sym.levels[0].at(3, 4, 1, 2)) <= 1e-12, "symmetry", detail);
    }
    // unit-norm self correlation peaks on the diagonal
    Tensor f = random_tensor(rng, {6, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double n = 0.0;
            for (int c = 0; c < 6; ++c) n += f.at(c, y, x) * f.at(c, y, x);
            n = std::sqrt(n);
            for (int c = 0; c < 6; ++c) f.at(c, y, x) /= n;
        }
    CorrelationPyramid self = build_correlation_pyramid(f, f, 1);
    for (int y = 0; y < 4 && ok; ++y)
        for (int x = 0; x < 4; ++x) {
            ok &= expect(std::fabs(self.levels[0].at(y, x, y, x) - 1.0) <= 1e-12, "unit self-similarity", detail);
            for (int y2 = 0; y2 < 4; ++y2)
                for (int x2 = 0; x2 < 4; ++x2) {
                    ok &= expect(self.levels[0].at(y, x, y2, x2) <= 1.0 + 1e-12, "diagonal dominance", detail);
                }
        }
    return ok;
}

bool run_lookup_suite(std::string& detail) {
    bool ok = true;
    SplitMix64 rng(108);
    Tensor f1 = random_tensor(rng, {8, 8, 8});
    Tensor f2 = random_tensor(rng, {8, 8, 8});
    CorrelationPyramid pyr = build_correlation_pyramid(f1, f2, 4);

    // Lattice-target flow: every level sees integer coordinates, so the
    // bilinear lookup must agree with a direct gather.
    Tensor flow({2, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            flow.at(0, y, x) = static_cast<double>(8 * static_cast<int>(rng.below(2))) - x;
            flow.at(1, y, x) = static_cast<double>(8 * static_cast<int>(rng.below(2))) - y;
        }
    std::vector<LookupGrid> grids(4, make_vanilla_grid(2));
    Tensor looked = lookup_correlation(pyr, flow, grids);
    for (int y = 0; y < 8 && ok; ++y) {
        for (int x = 0; x < 8; ++x) {
            int ch = 0;
            for (int l = 0; l < 4; ++l) {
                const Tensor& level = pyr.levels[static_cast<std::size_t>(l)];
                const int sh = level.dim(2), sw = level.dim(3);
                const double qx = (x + flow.at(0, y, x)) / (1 << l);
                const double qy = (y + flow.at(1, y, x)) / (1 << l);
                for (const auto& [dx, dy] : grids[static_cast<std::size_t>(l)].offsets) {
                    const int gx = std::min(std::max(static_cast<int>(std::lround(qx + dx)), 0), sw - 1);
                    const int gy = std::min(std::max(static_cast<int>(std::lround(qy + dy)), 0), sh - 1);
                    const double want = level.at(y, x, gy, gx);
                    ok &= expect(std::fabs(looked.at(ch, y, x) - want) <= 1e-12, "gather oracle mismatch", detail);
                    ++ch;
                }
            }
        }
    }

    // Identity scalars reproduce the vanilla path bit for bit.
    Tensor rand_flow = random_tensor(rng, {2, 8, 8}, -3.0, 3.0);
    Tensor vanilla = lookup_correlation(pyr, rand_flow, grids);
    Tensor ident = lookup_correlation_scaled(pyr, rand_flow, 2, GridNorm::linf, pack_identity_scalars(4));
    ok &= expect(vanilla.values() == ident.values(), "identity scalars are not bit-identical to vanilla", detail);

    // Transformed grids stay closed under negation.
    const LookupGrid base = make_vanilla_grid(3);
    for (int rep = 0; rep < 50 && ok; ++rep) {
        LookupGrid g = alo_transform_grid(base, rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.0), rng.uniform(0.0, 2.0),
                                          rng.uniform(0.0, 2.0));
        for (const auto& [ox, oy] : g.offsets) {
            bool found = false;
            for (const auto& [px, py] : g.offsets) {
                if (px == -ox && py == -oy) {
                    found = true;
                    break;
                }
            }
            ok &= expect(found, "transformed grid lost its negation symmetry", detail);
        }
    }
    return ok;
}

bool run_afl_suite(std::string& detail) {
    bool ok = true;
    Model model = build_model(tiny_config());
    SplitMix64 rng(109);
    for (int rep = 0; rep < 5 && ok; ++rep) {
        const int n = 1 + static_cast<int>(rng.below(16));
        PositionalEncodingTable pe = positional_encoding(n, model.config.pe_dim, model.config.pe_base);
        Tensor row = random_tensor(rng, {model.config.feature_dim, n});
        const double d = max_abs_diff(axis_attention(row, pe, model), afl_oracle(row, pe, model));
        ok &= expect(d <= 1e-10, "axis attention differs from the oracle by " + std::to_string(d), detail);
    }
    PositionalEncodingTable pe1 = positional_encoding(1, model.config.pe_dim, model.config.pe_base);
    Tensor one = random_tensor(rng, {model.config.feature_dim, 1});
    Tensor enc = axis_attention(one, pe1, model);
    for (int k = 0; k < model.config.pe_dim / 2; ++k) {
        ok &= expect(enc.at(2 * k, 0) == 0.0 && enc.at(2 * k + 1, 0) == 1.0, "n=1 must return pe(0)", detail);
    }
    return ok;
}

bool run_relative_shift_suite(std::string& detail) {
    bool ok = true;
    SplitMix64 rng(110);
    const int d_pe = 8, n = 16;
    PositionalEncodingTable pe = positional_encoding(n, d_pe, 1000.0);
    for (int rep = 0; rep < 10 && ok; ++rep) {
        std::vector<double> a(n);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            a[static_cast<std::size_t>(j)] = rng.uniform(0.0, 1.0);
            z += a[static_cast<std::size_t>(j)];
        }
        for (auto& v : a) v /= z;
        Tensor o({d_pe});
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < d_pe; ++k) o.at(k) += a[static_cast<std::size_t>(j)] * pe.table.at(j, k);
        const int i = static_cast<int>(rng.below(n));
        Tensor shifted = relative_shift(o, i, pe);
        Tensor direct({d_pe});
        for (int j = 0; j < n; ++j) {
            for (int k = 0; k < d_pe / 2; ++k) {
                const double arg = static_cast<double>(i - j) * pe.omega[static_cast<std::size_t>(k)];
                direct.at(2 * k) += a[static_cast<std::size_t>(j)] * std::sin(arg);
                direct.at(2 * k + 1) += a[static_cast<std::size_t>(j)] * std::cos(arg);
            }
        }
        ok &= expect(max_abs_diff(shifted, direct) <= 1e-12, "shift identity violated", detail);
    }
    return ok;
}

bool run_warp_suite(std::string& detail) {
    bool ok = true;
    SyntheticScene scene = gen_translation_pair(42, 32, 32, 3.25, -1.5);
    Tensor warped = warp_backward(scene.frame1, scene.gt_flow);
    ok &= expect(max_abs_diff(warped, scene.frame2) <= 1e-6, "warp consistency violated", detail);
    SyntheticScene still = gen_translation_pair(42, 16, 16, 0.0, 0.0);
    ok &= expect(still.frame1.values() == still.frame2.values(), "zero shift must be bitwise identical", detail);
    SyntheticScene flat = gen_flat_region_scene(43, 32, 32, 8, 10, 9, 7, 2.0, 1.0);
    ok &= expect(max_abs_diff(warp_backward(flat.frame1, flat.gt_flow), flat.frame2) <= 1e-6,
                 "flat-region warp consistency violated", detail);
    return ok;
}

bool run_updater_suite(std::string& detail) {
    bool ok = true;
    // Worked sequence-loss example: per-iterate mean L1 errors 1.0 then 0.5
    // at gamma 0.8 (u-channel errors only).
    Tensor gt({2, 1, 2});
    Tensor it1({2, 1, 2}, {1.0, 1.0, 0.0, 0.0});
    Tensor it2({2, 1, 2}, {0.5, 0.5, 0.0, 0.0});
    Tensor loss = sequence_loss({it1, it2}, gt, 0.8);
    ok &= expect(loss[0] == 1.3, "worked loss example is not 1.3, got " + std::to_string(loss[0]), detail);

    Model model = build_model(tiny_config());
    for (const char* name : {"head.conv1.w", "head.conv1.b", "head.conv2.w", "head.conv2.b"}) {
        Tensor& t = model.weights.get(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    }
    SyntheticScene scene = gen_translation_pair(44, 16, 16, 1.0, 0.5);
    RefinementTrace trace = refine(scene.frame1, scene.frame2, model, RefineOptions{3, -1, -1});
    for (const Tensor& fl : trace.flows_full) {
        for (std::size_t i = 0; i < fl.size(); ++i) ok &= expect(fl[i] == 0.0, "zero flow head must freeze the flow", detail);
    }
    return ok;
}

}  // namespace

const std::vector<SelftestSuite>& selftest_registry() {
    static const std::vector<SelftestSuite> suites = {
        {"tensor.conv2d_vs_naive", run_conv_suite},
        {"tensor.avg_pool_vs_naive", run_pool_suite},
        {"tensor.bilinear_properties", run_bilinear_suite},
        {"tensor.softmax_properties", run_softmax_suite},
        {"tensor.max_min_pool_vs_naive", run_maxmin_suite},
        {"autodiff.finite_difference", run_gradcheck_suite},
        {"correlation.pyramid_vs_oracle", run_correlation_suite},
        {"lookup.gather_and_identity", run_lookup_suite},
        {"afl.attention_vs_oracle", run_afl_suite},
        {"afl.relative_shift_identity", run_relative_shift_suite},
        {"synthetic.warp_consistency", run_warp_suite},
        {"updater.loss_and_flow_head", run_updater_suite},
    };
    return suites;
}

}  // namespace efraft
