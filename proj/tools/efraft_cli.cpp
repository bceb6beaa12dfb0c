// Command-line front end. Everything goes through the public C API in
// efraft.h; this translation unit never touches the C++ core directly.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "efraft.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

[[noreturn]] void fail(efraft_status status) {
    std::cerr << "error: " << efraft_last_error() << "\n";
    std::exit(status == EFRAFT_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime);
}

void check(efraft_status status) {
    if (status != EFRAFT_OK) fail(status);
}

struct ConfigHandle {
    efraft_config* cfg = efraft_config_create();
    ~ConfigHandle() { efraft_config_destroy(cfg); }
};

// Shared --config/--set handling: file first, then overrides (flags win).
void apply_config_args(efraft_config* cfg, const std::string& config_path, const std::vector<std::string>& sets) {
    if (!config_path.empty()) check(efraft_config_load_file(cfg, config_path.c_str()));
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
            std::exit(kExitUsage);
        }
        check(efraft_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    check(efraft_config_validate(cfg));
}

int tri_state(const std::string& v) {
    if (v.empty()) return -1;
    if (v == "on" || v == "1" || v == "true") return 1;
    if (v == "off" || v == "0" || v == "false") return 0;
    std::cerr << "error: expected on/off, got '" << v << "'\n";
    std::exit(kExitUsage);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        std::cerr << "error: cannot open '" << path << "' for writing\n";
        std::exit(kExitRuntime);
    }
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"efraft: recurrent all-pairs optical flow with adaptive lookup and axis attention"};
    app.require_subcommand(1);

    // estimate
    auto* estimate = app.add_subcommand("estimate", "Estimate flow between two PPM frames");
    std::string est_frame1, est_frame2, est_weights, est_out, est_viz, est_alo, est_afl;
    int est_iters = 0;
    estimate->add_option("--frame1", est_frame1, "first frame (PPM P6)")->required();
    estimate->add_option("--frame2", est_frame2, "second frame (PPM P6)")->required();
    estimate->add_option("--weights", est_weights, "weights file (.efw)")->required();
    estimate->add_option("--out", est_out, "output flow file (.flo)")->required();
    estimate->add_option("--viz", est_viz, "optional color rendering (PPM)");
    estimate->add_option("--iters", est_iters, "refinement iterations (default: from weights)");
    estimate->add_option("--alo", est_alo, "adaptive lookup on/off (default: from weights)");
    estimate->add_option("--afl", est_afl, "feature localizer on/off (default: from weights)");

    // eval
    auto* eval = app.add_subcommand("eval", "Compare a flow against ground truth");
    std::string eval_pred, eval_gt;
    eval->add_option("--pred", eval_pred, "predicted flow (.flo)")->required();
    eval->add_option("--gt", eval_gt, "ground-truth flow (.flo)")->required();

    // selftest
    auto* selftest = app.add_subcommand("selftest", "Run the oracle and invariant suites");

    // bench
    auto* bench = app.add_subcommand("bench", "Time the refinement loop across feature configurations");
    std::string bench_config, bench_tsv, bench_records;
    std::vector<std::string> bench_sets;
    int bench_w = 128, bench_h = 128, bench_iters = 12, bench_repeats = 3;
    bench->add_option("--config", bench_config, "config file (key=value lines)");
    bench->add_option("--set", bench_sets, "config override key=value (repeatable)");
    bench->add_option("--width", bench_w, "frame width (default 128)");
    bench->add_option("--height", bench_h, "frame height (default 128)");
    bench->add_option("--iters", bench_iters, "refinement iterations (default 12)");
    bench->add_option("--repeats", bench_repeats, "timing repeats, best kept (default 3)");
    bench->add_option("--tsv", bench_tsv, "also write the TSV table to a file");
    bench->add_option("--records", bench_records, "also write one-record-per-config text to a file");

    // train-toy
    auto* train = app.add_subcommand("train-toy", "Gradient-descend on generated translation scenes");
    std::string train_config, train_out, train_curve;
    std::vector<std::string> train_sets;
    int train_scenes = 4, train_size = 64, train_steps = 200, train_iters = 2;
    double train_lr = 1e-3;
    train->add_option("--config", train_config, "config file");
    train->add_option("--set", train_sets, "config override key=value (repeatable)");
    train->add_option("--scenes", train_scenes, "number of translation scenes (default 4)");
    train->add_option("--size", train_size, "scene size in pixels (default 64)");
    train->add_option("--steps", train_steps, "descent steps (default 200)");
    train->add_option("--lr", train_lr, "learning rate (default 1e-3)");
    train->add_option("--iters", train_iters, "refinement iterations during training (default 2)");
    train->add_option("--out", train_out, "save the trained weights here (.efw)");
    train->add_option("--curve", train_curve, "write the loss curve to a text file");

    // init-weights
    auto* init = app.add_subcommand("init-weights", "Create a deterministic weights file");
    std::string init_config, init_out;
    std::vector<std::string> init_sets;
    std::string init_seed;
    init->add_option("--config", init_config, "config file");
    init->add_option("--set", init_sets, "config override key=value (repeatable)");
    init->add_option("--seed", init_seed, "initialization seed (overrides config)");
    init->add_option("--out", init_out, "output weights file (.efw)")->required();

    // viz
    auto* viz = app.add_subcommand("viz", "Render a flow file as a color PPM");
    std::string viz_flow, viz_out;
    double viz_cap = 0.0;
    viz->add_option("--flow", viz_flow, "flow file (.flo)")->required();
    viz->add_option("--out", viz_out, "output image (PPM)")->required();
    viz->add_option("--cap", viz_cap, "magnitude mapped to full saturation (default: field max)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (estimate->parsed()) {
        efraft_model* model = nullptr;
        check(efraft_model_load(est_weights.c_str(), &model));
        efraft_image *f1 = nullptr, *f2 = nullptr;
        check(efraft_image_read_ppm(est_frame1.c_str(), &f1));
        check(efraft_image_read_ppm(est_frame2.c_str(), &f2));
        efraft_estimate_opts opts{est_iters > 0 ? est_iters : 0, tri_state(est_alo), tri_state(est_afl)};
        efraft_flow* flow = nullptr;
        check(efraft_estimate(model, f1, f2, &opts, &flow));
        check(efraft_flow_write(flow, est_out.c_str()));
        if (!est_viz.empty()) {
            efraft_image* img = nullptr;
            check(efraft_flow_render(flow, 0.0, &img));
            check(efraft_image_write_ppm(img, est_viz.c_str()));
            efraft_image_destroy(img);
        }
        std::cout << "wrote " << est_out << " (" << efraft_flow_width(flow) << "x" << efraft_flow_height(flow)
                  << ")\n";
        efraft_flow_destroy(flow);
        efraft_image_destroy(f1);
        efraft_image_destroy(f2);
        efraft_model_destroy(model);
        return 0;
    }

    if (eval->parsed()) {
        efraft_flow *pred = nullptr, *gt = nullptr;
        check(efraft_flow_read(eval_pred.c_str(), &pred));
        check(efraft_flow_read(eval_gt.c_str(), &gt));
        double epe = 0.0, f1_or = 0.0, f1_and = 0.0;
        check(efraft_flow_epe(pred, gt, &epe));
        check(efraft_flow_f1_all(pred, gt, "paper_or", &f1_or));
        check(efraft_flow_f1_all(pred, gt, "kitti_and", &f1_and));
        std::printf("epe: %.6f\n", epe);
        std::printf("f1_all[paper_or]: %.4f%%\n", f1_or);
        std::printf("f1_all[kitti_and]: %.4f%%\n", f1_and);
        efraft_flow_destroy(pred);
        efraft_flow_destroy(gt);
        return 0;
    }

    if (selftest->parsed()) {
        int failures = 0;
        auto report = [](const char* suite, int passed, const char* detail, void*) {
            std::printf("%-34s %s%s%s\n", suite, passed ? "PASS" : "FAIL", passed || detail[0] == '\0' ? "" : "  -- ",
                        passed ? "" : detail);
        };
        check(efraft_selftest_run(report, nullptr, &failures));
        if (failures > 0) {
            std::printf("%d suite(s) failed\n", failures);
            return kExitRuntime;
        }
        std::printf("all suites passed\n");
        return 0;
    }

    if (bench->parsed()) {
        ConfigHandle cfg;
        apply_config_args(cfg.cfg, bench_config, bench_sets);
        char *tsv = nullptr, *records = nullptr;
        check(efraft_bench(cfg.cfg, bench_h, bench_w, bench_iters, bench_repeats, &tsv, &records));
        std::fputs(tsv, stdout);
        if (!bench_tsv.empty()) write_text_file(bench_tsv, tsv);
        if (!bench_records.empty()) write_text_file(bench_records, records);
        efraft_string_free(tsv);
        efraft_string_free(records);
        return 0;
    }

    if (train->parsed()) {
        ConfigHandle cfg;
        apply_config_args(cfg.cfg, train_config, train_sets);
        std::vector<double> losses(static_cast<std::size_t>(train_steps) + 1, 0.0);
        efraft_model* model = nullptr;
        check(efraft_train_toy(cfg.cfg, train_scenes, train_size, train_steps, train_lr, train_iters, losses.data(),
                               train_out.empty() ? nullptr : &model));
        std::printf("loss: %.6f -> %.6f over %d steps\n", losses.front(), losses.back(), train_steps);
        if (!train_curve.empty()) {
            std::string text;
            for (double v : losses) text += std::to_string(v) + "\n";
            write_text_file(train_curve, text);
        }
        if (model != nullptr) {
            check(efraft_model_save(model, train_out.c_str()));
            std::printf("wrote %s\n", train_out.c_str());
            efraft_model_destroy(model);
        }
        return 0;
    }

    if (init->parsed()) {
        ConfigHandle cfg;
        apply_config_args(cfg.cfg, init_config, init_sets);
        if (!init_seed.empty()) check(efraft_config_set(cfg.cfg, "seed", init_seed.c_str()));
        efraft_model* model = nullptr;
        check(efraft_model_init(cfg.cfg, &model));
        check(efraft_model_save(model, init_out.c_str()));
        std::printf("wrote %s (%llu parameters)\n", init_out.c_str(),
                    static_cast<unsigned long long>(efraft_model_parameter_count(model)));
        efraft_model_destroy(model);
        return 0;
    }

    if (viz->parsed()) {
        efraft_flow* flow = nullptr;
        check(efraft_flow_read(viz_flow.c_str(), &flow));
        efraft_image* img = nullptr;
        check(efraft_flow_render(flow, viz_cap, &img));
        check(efraft_image_write_ppm(img, viz_out.c_str()));
        std::printf("wrote %s\n", viz_out.c_str());
        efraft_image_destroy(img);
        efraft_flow_destroy(flow);
        return 0;
    }

    return kExitUsage;
}
