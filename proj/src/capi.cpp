#include "efraft.h"

#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "efraft/config.hpp"
#include "efraft/flow_io.hpp"
#include "efraft/metrics.hpp"
#include "efraft/ops.hpp"
#include "efraft/selftest.hpp"
#include "efraft/synthetic.hpp"
#include "efraft/updater.hpp"
#include "efraft/weights.hpp"

struct efraft_config {
    efraft::ModelConfig cfg;
};

struct efraft_model {
    efraft::Model model;
};

struct efraft_image {
    efraft::Tensor t;  // [3,H,W]
};

struct efraft_flow {
    efraft::Tensor t;  // [2,H,W]
};

namespace {

thread_local std::string g_last_error;

efraft_status classify(const std::string& msg) {
    if (msg.find("cannot open") != std::string::npos || msg.find("cannot rename") != std::string::npos ||
        msg.find("short write") != std::string::npos) {
        return EFRAFT_ERR_IO;
    }
    if (msg.find("magic") != std::string::npos || msg.find("truncated") != std::string::npos ||
        msg.find("hash") != std::string::npos || msg.find("is not a") != std::string::npos ||
        msg.find("is not an") != std::string::npos || msg.find("maxval") != std::string::npos) {
        return EFRAFT_ERR_FORMAT;
    }
    return EFRAFT_ERR_RUNTIME;
}

template <typename F>
efraft_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return EFRAFT_OK;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return EFRAFT_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return classify(g_last_error);
    } catch (...) {
        g_last_error = "unknown error";
        return EFRAFT_ERR_RUNTIME;
    }
}

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

efraft_status copy_out(const std::string& s, char* buf, size_t buf_len) {
    require(buf != nullptr, "output buffer is null");
    if (s.size() + 1 > buf_len) {
        throw std::invalid_argument("buffer of " + std::to_string(buf_len) + " bytes too small for " +
                                    std::to_string(s.size() + 1));
    }
    std::memcpy(buf, s.c_str(), s.size() + 1);
    return EFRAFT_OK;
}

// Replicate-edge padding up to multiples of 8; the core encoders require
// exact multiples.
efraft::Tensor pad_to_multiple8(const efraft::Tensor& img) {
    const int h = img.dim(1), w = img.dim(2);
    const int hp = (h + 7) / 8 * 8, wp = (w + 7) / 8 * 8;
    if (hp == h && wp == w) return img;
    efraft::Tensor out({3, hp, wp});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < hp; ++y) {
            const int sy = y < h ? y : h - 1;
            for (int x = 0; x < wp; ++x) {
                const int sx = x < w ? x : w - 1;
                out.at(c, y, x) = img.at(c, sy, sx);
            }
        }
    }
    return out;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

extern "C" {

const char* efraft_last_error(void) { return g_last_error.c_str(); }

efraft_config* efraft_config_create(void) { return new (std::nothrow) efraft_config(); }

void efraft_config_destroy(efraft_config* cfg) { delete cfg; }

efraft_status efraft_config_set(efraft_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        require(cfg != nullptr && key != nullptr && value != nullptr, "config/key/value must be non-null");
        cfg->cfg.set(key, value);
    });
}

efraft_status efraft_config_get(const efraft_config* cfg, const char* key, char* buf, size_t buf_len) {
    return guarded([&] {
        require(cfg != nullptr && key != nullptr, "config/key must be non-null");
        copy_out(cfg->cfg.get(key), buf, buf_len);
    });
}

efraft_status efraft_config_load_file(efraft_config* cfg, const char* path) {
    return guarded([&] {
        require(cfg != nullptr && path != nullptr, "config/path must be non-null");
        cfg->cfg = efraft::load_config_file(path);
    });
}

efraft_status efraft_config_validate(const efraft_config* cfg) {
    return guarded([&] {
        require(cfg != nullptr, "config must be non-null");
        cfg->cfg.validate();
    });
}

efraft_status efraft_model_init(const efraft_config* cfg, efraft_model** out) {
    return guarded([&] {
        require(cfg != nullptr && out != nullptr, "config/out must be non-null");
        auto* m = new efraft_model{efraft::build_model(cfg->cfg)};
        *out = m;
    });
}

efraft_status efraft_model_load(const char* path, efraft_model** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "path/out must be non-null");
        auto* m = new efraft_model{efraft::load_model(path)};
        *out = m;
    });
}

efraft_status efraft_model_save(const efraft_model* model, const char* path) {
    return guarded([&] {
        require(model != nullptr && path != nullptr, "model/path must be non-null");
        efraft::save_model(model->model, path);
    });
}

uint64_t efraft_model_parameter_count(const efraft_model* model) {
    return model == nullptr ? 0 : model->model.weights.parameter_count();
}

efraft_status efraft_model_config_get(const efraft_model* model, const char* key, char* buf, size_t buf_len) {
    return guarded([&] {
        require(model != nullptr && key != nullptr, "model/key must be non-null");
        copy_out(model->model.config.get(key), buf, buf_len);
    });
}

void efraft_model_destroy(efraft_model* model) { delete model; }

efraft_status efraft_image_read_ppm(const char* path, efraft_image** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "path/out must be non-null");
        *out = new efraft_image{efraft::read_ppm(path)};
    });
}

efraft_status efraft_image_write_ppm(const efraft_image* image, const char* path) {
    return guarded([&] {
        require(image != nullptr && path != nullptr, "image/path must be non-null");
        efraft::write_ppm(path, image->t);
    });
}

efraft_status efraft_image_create(int width, int height, const unsigned char* rgb, efraft_image** out) {
    return guarded([&] {
        require(rgb != nullptr && out != nullptr, "rgb/out must be non-null");
        require(width > 0 && height > 0, "extents must be positive");
        efraft::Tensor t({3, height, width});
        std::size_t pos = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<double>(rgb[pos++]) / 255.0;
        *out = new efraft_image{std::move(t)};
    });
}

int efraft_image_width(const efraft_image* image) { return image == nullptr ? 0 : image->t.dim(2); }
int efraft_image_height(const efraft_image* image) { return image == nullptr ? 0 : image->t.dim(1); }
void efraft_image_destroy(efraft_image* image) { delete image; }

efraft_status efraft_flow_read(const char* path, efraft_flow** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "path/out must be non-null");
        *out = new efraft_flow{efraft::read_flo(path)};
    });
}

efraft_status efraft_flow_write(const efraft_flow* flow, const char* path) {
    return guarded([&] {
        require(flow != nullptr && path != nullptr, "flow/path must be non-null");
        efraft::write_flo(path, flow->t);
    });
}

efraft_status efraft_flow_create(int width, int height, const float* uv, efraft_flow** out) {
    return guarded([&] {
        require(uv != nullptr && out != nullptr, "uv/out must be non-null");
        require(width > 0 && height > 0, "extents must be positive");
        efraft::Tensor t({2, height, width});
        std::size_t pos = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                t.at(0, y, x) = static_cast<double>(uv[pos]);
                t.at(1, y, x) = static_cast<double>(uv[pos + 1]);
                pos += 2;
            }
        *out = new efraft_flow{std::move(t)};
    });
}

int efraft_flow_width(const efraft_flow* flow) { return flow == nullptr ? 0 : flow->t.dim(2); }
int efraft_flow_height(const efraft_flow* flow) { return flow == nullptr ? 0 : flow->t.dim(1); }

efraft_status efraft_flow_at(const efraft_flow* flow, int x, int y, double* u, double* v) {
    return guarded([&] {
        require(flow != nullptr && u != nullptr && v != nullptr, "flow/u/v must be non-null");
        require(x >= 0 && x < flow->t.dim(2) && y >= 0 && y < flow->t.dim(1), "coordinates out of range");
        *u = flow->t.at(0, y, x);
        *v = flow->t.at(1, y, x);
    });
}

void efraft_flow_destroy(efraft_flow* flow) { delete flow; }

efraft_status efraft_estimate(const efraft_model* model, const efraft_image* frame1, const efraft_image* frame2,
                              const efraft_estimate_opts* opts, efraft_flow** out) {
    return guarded([&] {
        require(model != nullptr && frame1 != nullptr && frame2 != nullptr && out != nullptr,
                "model/frames/out must be non-null");
        require(frame1->t.shape() == frame2->t.shape(), "frames must share extents");
        const int h = frame1->t.dim(1), w = frame1->t.dim(2);
        efraft::RefineOptions ropts;
        if (opts != nullptr) {
            ropts.iters = opts->iters > 0 ? opts->iters : -1;
            ropts.alo = opts->alo;
            ropts.afl = opts->afl;
        }
        const efraft::Tensor p1 = pad_to_multiple8(frame1->t);
        const efraft::Tensor p2 = pad_to_multiple8(frame2->t);
        efraft::RefinementTrace trace = efraft::refine(p1, p2, model->model, ropts);
        const efraft::Tensor& full = trace.flows_full.back();
        efraft::Tensor cropped({2, h, w});
        for (int c = 0; c < 2; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) cropped.at(c, y, x) = full.at(c, y, x);
        *out = new efraft_flow{std::move(cropped)};
    });
}

efraft_status efraft_flow_epe(const efraft_flow* pred, const efraft_flow* gt, double* epe) {
    return guarded([&] {
        require(pred != nullptr && gt != nullptr && epe != nullptr, "pred/gt/epe must be non-null");
        *epe = efraft::compute_epe(pred->t, gt->t);
    });
}

efraft_status efraft_flow_f1_all(const efraft_flow* pred, const efraft_flow* gt, const char* rule, double* f1) {
    return guarded([&] {
        require(pred != nullptr && gt != nullptr && rule != nullptr && f1 != nullptr,
                "pred/gt/rule/f1 must be non-null");
        efraft::OutlierRule r;
        if (std::strcmp(rule, "paper_or") == 0) r = efraft::OutlierRule::paper_or;
        else if (std::strcmp(rule, "kitti_and") == 0) r = efraft::OutlierRule::kitti_and;
        else throw std::invalid_argument("rule must be 'paper_or' or 'kitti_and'");
        *f1 = efraft::compute_f1_all(pred->t, gt->t, r);
    });
}

efraft_status efraft_flow_render(const efraft_flow* flow, double max_magnitude, efraft_image** out) {
    return guarded([&] {
        require(flow != nullptr && out != nullptr, "flow/out must be non-null");
        *out = new efraft_image{efraft::flow_to_color(flow->t, max_magnitude)};
    });
}

efraft_status efraft_selftest_run(efraft_selftest_report_fn report, void* user, int* failures) {
    return guarded([&] {
        int failed = 0;
        for (const auto& suite : efraft::selftest_registry()) {
            std::string detail;
            bool ok = false;
            try {
                ok = suite.run(detail);
            } catch (const std::exception& e) {
                detail = e.what();
            }
            if (!ok) ++failed;
            if (report != nullptr) report(suite.name.c_str(), ok ? 1 : 0, detail.c_str(), user);
        }
        if (failures != nullptr) *failures = failed;
    });
}

efraft_status efraft_train_toy(const efraft_config* cfg, int scene_count, int scene_size, int steps, double lr,
                               int iters, double* losses, efraft_model** out_model) {
    return guarded([&] {
        require(cfg != nullptr && losses != nullptr, "config/losses must be non-null");
        require(scene_count > 0, "need at least one scene");
        efraft::Model model = efraft::build_model(cfg->cfg);
        auto scenes = efraft::default_toy_scenes(cfg->cfg.seed, scene_count, scene_size);
        auto curve = efraft::toy_train(model, scenes, steps, lr, iters);
        for (std::size_t i = 0; i < curve.size(); ++i) losses[i] = curve[i];
        if (out_model != nullptr) *out_model = new efraft_model{std::move(model)};
    });
}

efraft_status efraft_bench(const efraft_config* cfg, int frame_h, int frame_w, int iters, int repeats, char** tsv,
                           char** records) {
    return guarded([&] {
        require(cfg != nullptr, "config must be non-null");
        efraft::BenchReport report = efraft::bench_lookup(cfg->cfg, frame_h, frame_w, iters, repeats);
        if (tsv != nullptr) *tsv = dup_string(report.to_tsv());
        if (records != nullptr) *records = dup_string(report.to_records());
    });
}

void efraft_string_free(char* s) { std::free(s); }

}  // extern "C"
