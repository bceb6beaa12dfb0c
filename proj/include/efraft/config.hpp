#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace efraft {

enum class OutlierRule { paper_or, kitti_and };
enum class GridNorm { linf, l1 };

// Model hyperparameters and feature flags. A config is validated before any
// compute and is embedded in every weights file, so a weights file fully
// describes the network that consumes it.
struct ModelConfig {
    int feature_dim = 64;   // encoder output channels D
    int hidden_dim = 64;    // GRU hidden channels
    int context_dim = 64;   // context channels
    int pe_dim = 16;        // positional-encoding dims per axis (even)
    double pe_base = 1000.0;
    int head_count = 4;
    int head_dim = 16;
    int radius = 4;         // lookup grid radius r
    int levels = 4;         // correlation pyramid levels L
    int iters = 12;         // refinement iterations N
    double gamma = 0.8;     // sequence-loss decay
    bool alo = true;        // adaptive (amorphous) lookup grids
    bool afl = true;        // axis-attention feature localizer
    GridNorm grid_norm = GridNorm::linf;
    bool corr_scale = false;  // scale correlation by 1/sqrt(D)
    bool afl_scale = false;   // learned positive per-axis encoding scale
    OutlierRule outlier_rule = OutlierRule::paper_or;
    int alo_head_dim = 64;
    int corr_enc_hidden = 96;
    int corr_enc_out = 64;
    int flow_enc_out = 32;
    int flow_head_hidden = 64;
    std::uint64_t seed = 42;

    // Encoder trunk widths, derived from feature_dim.
    int trunk_w1() const { return feature_dim / 2 < 8 ? 8 : feature_dim / 2; }
    int trunk_w2() const { return feature_dim * 3 / 4 < 8 ? 8 : feature_dim * 3 / 4; }
    int trunk_w3() const { return feature_dim; }

    int grid_offsets() const;                 // offsets per level for the configured grid shape
    int corr_channels() const { return levels * grid_offsets(); }
    int corr_feature_dim() const { return afl ? feature_dim + 2 * pe_dim : feature_dim; }
    int motion_channels() const { return corr_enc_out + flow_enc_out + context_dim + 4 * levels; }

    void validate() const;  // throws std::invalid_argument on any out-of-range field

    std::string to_text() const;  // key=value lines, fixed key order
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static const std::vector<std::string>& keys();
};

// Parses a key=value UTF-8 file onto defaults. Lines starting with '#' and
// blank lines are skipped. Unknown keys are errors.
ModelConfig load_config_file(const std::string& path);
void apply_config_line(ModelConfig& cfg, const std::string& line);  // "key=value"

std::string outlier_rule_name(OutlierRule rule);

}  // namespace efraft
