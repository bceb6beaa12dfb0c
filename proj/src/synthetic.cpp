#include "efraft/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "efraft/lookup.hpp"
#include "efraft/ops.hpp"
#include "efraft/rng.hpp"
#include "efraft/updater.hpp"

namespace efraft {

namespace {

constexpr int kWaves = 8;

// Band-limited texture: per channel, 8 sinusoids with wavelengths between
// 8 and 32 pixels and amplitudes summing to 0.45, centered at 0.5 so values
// stay inside [0.05, 0.95].
Tensor make_texture(SplitMix64& rng, int h, int w) {
    Tensor img({3, h, w});
    for (int c = 0; c < 3; ++c) {
        double kx[kWaves], ky[kWaves], phase[kWaves], amp[kWaves];
        double amp_sum = 0.0;
        for (int m = 0; m < kWaves; ++m) {
            const double angle = rng.uniform(0.0, 2.0 * M_PI);
            const double mag = rng.uniform(2.0 * M_PI / 32.0, 2.0 * M_PI / 8.0);
            kx[m] = mag * std::cos(angle);
            ky[m] = mag * std::sin(angle);
            phase[m] = rng.uniform(0.0, 2.0 * M_PI);
            amp[m] = rng.uniform(0.5, 1.0);
            amp_sum += amp[m];
        }
        for (int m = 0; m < kWaves; ++m) amp[m] *= 0.45 / amp_sum;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double v = 0.5;
                for (int m = 0; m < kWaves; ++m) {
                    v += amp[m] * std::sin(kx[m] * static_cast<double>(x) + ky[m] * static_cast<double>(y) + phase[m]);
                }
                img.at(c, y, x) = v;
            }
        }
    }
    return img;
}

Tensor shift_bilinear(const Tensor& frame, double tx, double ty) {
    const int h = frame.dim(1), w = frame.dim(2);
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c) {
        const double* plane = frame.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = bilinear_tap(plane, h, w, static_cast<double>(x) - tx, static_cast<double>(y) - ty).value;
            }
        }
    }
    return out;
}

Tensor constant_flow(int h, int w, double tx, double ty) {
    Tensor flow({2, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            flow.at(0, y, x) = tx;
            flow.at(1, y, x) = ty;
        }
    }
    return flow;
}

void check_translation(int h, int w, double tx, double ty) {
    const double lim = static_cast<double>(std::min(h, w)) / 4.0;
    if (std::fabs(tx) >= lim || std::fabs(ty) >= lim) {
        throw std::invalid_argument("scene: translation (" + std::to_string(tx) + ", " + std::to_string(ty) +
                                    ") exceeds a quarter of the frame");
    }
}

}  // namespace

Tensor warp_backward(const Tensor& frame, const Tensor& flow) {
    const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
    Tensor out(frame.shape());
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = frame.data() + static_cast<std::size_t>(ci) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(ci, y, x) = bilinear_tap(plane, h, w, static_cast<double>(x) - flow.at(0, y, x),
                                                static_cast<double>(y) - flow.at(1, y, x))
                                       .value;
            }
        }
    }
    return out;
}

SyntheticScene gen_translation_pair(std::uint64_t texture_seed, int h, int w, double tx, double ty) {
    check_translation(h, w, tx, ty);
    SplitMix64 rng(texture_seed);
    SyntheticScene scene;
    scene.kind = "translation";
    scene.frame1 = make_texture(rng, h, w);
    scene.frame2 = shift_bilinear(scene.frame1, tx, ty);
    scene.gt_flow = constant_flow(h, w, tx, ty);
    return scene;
}

SyntheticScene gen_flat_region_scene(std::uint64_t texture_seed, int h, int w, int rect_x, int rect_y, int rect_w,
                                     int rect_h, double tx, double ty) {
    check_translation(h, w, tx, ty);
    if (rect_x < 0 || rect_y < 0 || rect_w < 1 || rect_h < 1 || rect_x + rect_w > w || rect_y + rect_h > h) {
        throw std::invalid_argument("scene: rectangle (" + std::to_string(rect_x) + "," + std::to_string(rect_y) +
                                    "," + std::to_string(rect_w) + "," + std::to_string(rect_h) +
                                    ") does not fit in " + std::to_string(w) + "x" + std::to_string(h));
    }
    SplitMix64 rng(texture_seed);
    SyntheticScene scene;
    scene.kind = "flat_region";
    scene.frame1 = make_texture(rng, h, w);
    for (int c = 0; c < 3; ++c) {
        const double fill = rng.uniform(0.3, 0.7);
        for (int y = rect_y; y < rect_y + rect_h; ++y) {
            for (int x = rect_x; x < rect_x + rect_w; ++x) scene.frame1.at(c, y, x) = fill;
        }
    }
    scene.frame2 = shift_bilinear(scene.frame1, tx, ty);
    scene.gt_flow = constant_flow(h, w, tx, ty);
    return scene;
}

std::vector<SyntheticScene> default_toy_scenes(std::uint64_t seed, int count, int size) {
    SplitMix64 rng(seed);
    std::vector<SyntheticScene> scenes;
    scenes.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double tx = rng.uniform(-6.0, 6.0);
        const double ty = rng.uniform(-4.0, 4.0);
        scenes.push_back(gen_translation_pair(seed + 1000 + static_cast<std::uint64_t>(i), size, size, tx, ty));
    }
    return scenes;
}

std::vector<double> toy_train(Model& model, const std::vector<SyntheticScene>& scenes, int steps, double lr,
                              int iters) {
    if (scenes.empty()) throw std::invalid_argument("toy_train: no scenes");
    for (const auto& s : scenes) {
        if (s.frame1.dim(1) > 64 || s.frame1.dim(2) > 64) {
            throw std::invalid_argument("toy_train: frames capped at 64 px, got " + shape_str(s.frame1.shape()));
        }
    }
    if (iters > 4 || iters < 1) throw std::invalid_argument("toy_train: iters must be in [1,4], got " + std::to_string(iters));
    if (steps < 0 || steps > 500) throw std::invalid_argument("toy_train: steps capped at 500, got " + std::to_string(steps));

    const double inv_scenes = 1.0 / static_cast<double>(scenes.size());
    auto eval_total = [&](Tape* tape) {
        Tensor total;
        bool first = true;
        for (const auto& scene : scenes) {
            RefinementTrace trace = refine(scene.frame1, scene.frame2, model, RefineOptions{iters, -1, -1}, tape);
            Tensor loss = sequence_loss(trace.flows_full, scene.gt_flow, model.config.gamma, tape);
            total = first ? loss : add(total, loss, tape);
            first = false;
        }
        return scale(total, inv_scenes, tape);
    };

    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(steps) + 1);
    for (int step = 0; step < steps; ++step) {
        Tape tape;
        model.weights.watch_all(tape);
        Tensor total = eval_total(&tape);
        if (!std::isfinite(total[0])) {
            throw std::runtime_error("toy_train: loss diverged at step " + std::to_string(step));
        }
        losses.push_back(total[0]);
        tape.backward(total);
        for (const auto& name : model.weights.names()) {
            Tensor& p = model.weights.get(name);
            const std::vector<double> g = tape.grad(p);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double clipped = std::min(1.0, std::max(-1.0, g[i]));
                p[i] -= lr * clipped;
            }
            p.node = -1;  // detach from the finished tape
            p.tape_id = 0;
        }
    }
    Tensor final_loss = eval_total(nullptr);
    if (!std::isfinite(final_loss[0])) {
        throw std::runtime_error("toy_train: loss diverged at step " + std::to_string(steps));
    }
    losses.push_back(final_loss[0]);
    return losses;
}

namespace {

double estimate_memory_mb(const ModelConfig& cfg, int h, int w) {
    const double h8 = h / 8.0, w8 = w / 8.0;
    double doubles = 0.0;
    for (int l = 0; l < cfg.levels; ++l) {
        doubles += h8 * w8 * (h8 / (1 << l)) * (w8 / (1 << l));  // pyramid level
    }
    doubles += 2.0 * cfg.corr_feature_dim() * h8 * w8;                      // feature maps
    doubles += (cfg.hidden_dim + cfg.context_dim) * h8 * w8;                // context state
    doubles += cfg.corr_channels() * h8 * w8;                               // lookup output
    doubles += (cfg.hidden_dim + cfg.motion_channels()) * h8 * w8;          // GRU input
    doubles += static_cast<double>(analytic_parameter_count(cfg));          // weights
    return doubles * 8.0 / (1024.0 * 1024.0);
}

}  // namespace

std::string BenchReport::to_tsv() const {
    std::ostringstream os;
    os << "name\tframe\titers\talo\tafl\tms_per_iter\tparams\treach_px\test_mem_mb\n";
    for (const auto& r : rows) {
        os << r.name << "\t" << r.w << "x" << r.h << "\t" << r.iters << "\t" << (r.alo ? 1 : 0) << "\t"
           << (r.afl ? 1 : 0) << "\t" << r.ms_per_iter << "\t" << r.params_consumed << "\t" << r.reach_px << "\t"
           << r.est_mem_mb << "\n";
    }
    return os.str();
}

std::string BenchReport::to_records() const {
    std::ostringstream os;
    for (const auto& r : rows) {
        os << "config: " << r.name << "\n"
           << "frame: " << r.w << "x" << r.h << "\n"
           << "iters: " << r.iters << "\n"
           << "alo: " << (r.alo ? "on" : "off") << "\n"
           << "afl: " << (r.afl ? "on" : "off") << "\n"
           << "ms_per_iter: " << r.ms_per_iter << "\n"
           << "params: " << r.params_consumed << "\n"
           << "reach_px: " << r.reach_px << "\n"
           << "est_mem_mb: " << r.est_mem_mb << "\n\n";
    }
    return os.str();
}

BenchReport bench_lookup(const ModelConfig& base_cfg, int h, int w, int iters, int repeats) {
    Model model = build_model(base_cfg);
    SyntheticScene scene = gen_translation_pair(base_cfg.seed + 17, h, w, 3.0, -2.0);

    struct Mode {
        const char* name;
        bool alo, afl;
    };
    const Mode modes[] = {{"baseline", false, false}, {"alo", true, false}, {"afl", false, true}, {"alo+afl", true, true}};

    BenchReport report;
    for (const Mode& m : modes) {
        const RefineOptions opts{iters, m.alo ? 1 : 0, m.afl ? 1 : 0};
        refine(scene.frame1, scene.frame2, model, opts);  // warm-up
        double best_ms = 1e300;
        for (int rep = 0; rep < std::max(1, repeats); ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            refine(scene.frame1, scene.frame2, model, opts);
            const auto t1 = std::chrono::steady_clock::now();
            best_ms = std::min(best_ms, std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        model.weights.start_tracking();
        refine(scene.frame1, scene.frame2, model, opts);
        std::uint64_t params = 0;
        for (const auto& name : model.weights.consumed()) params += model.weights.get(name).size();
        model.weights.stop_tracking();

        BenchRow row;
        row.name = m.name;
        row.h = h;
        row.w = w;
        row.iters = iters;
        row.alo = m.alo;
        row.afl = m.afl;
        row.ms_per_iter = best_ms / static_cast<double>(iters);
        row.params_consumed = params;
        row.reach_px = m.alo ? lookup_reach_px(base_cfg.radius, base_cfg.levels, 3.0, 2.0)
                             : lookup_reach_px(base_cfg.radius, base_cfg.levels, 1.0, 0.0);
        row.est_mem_mb = estimate_memory_mb(base_cfg, h, w);
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace efraft
