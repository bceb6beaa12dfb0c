#include "efraft/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace efraft {

namespace {

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        std::uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return x;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void check_range(const char* key, long v, long lo, long hi) {
    if (v < lo || v > hi) {
        throw std::invalid_argument(std::string("config: ") + key + "=" + std::to_string(v) + " outside [" +
                                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
}

}  // namespace

int ModelConfig::grid_offsets() const {
    if (grid_norm == GridNorm::linf) return (2 * radius + 1) * (2 * radius + 1);
    return 2 * radius * radius + 2 * radius + 1;
}

void ModelConfig::validate() const {
    check_range("feature_dim", feature_dim, 4, 512);
    check_range("hidden_dim", hidden_dim, 4, 512);
    check_range("context_dim", context_dim, 4, 512);
    check_range("pe_dim", pe_dim, 2, 128);
    if (pe_dim % 2 != 0) throw std::invalid_argument("config: pe_dim must be even, got " + std::to_string(pe_dim));
    if (!(pe_base > 1.0) || !std::isfinite(pe_base)) {
        throw std::invalid_argument("config: pe_base must be a finite value > 1");
    }
    check_range("head_count", head_count, 1, 16);
    check_range("head_dim", head_dim, 2, 128);
    check_range("radius", radius, 0, 16);
    check_range("levels", levels, 1, 8);
    check_range("iters", iters, 1, 128);
    if (!(gamma > 0.0) || gamma > 1.0) {
        throw std::invalid_argument("config: gamma must be in (0, 1], got " + fmt_double(gamma));
    }
    check_range("alo_head_dim", alo_head_dim, 4, 512);
    check_range("corr_enc_hidden", corr_enc_hidden, 2, 512);
    check_range("corr_enc_out", corr_enc_out, 2, 512);
    check_range("flow_enc_out", flow_enc_out, 2, 512);
    check_range("flow_head_hidden", flow_head_hidden, 2, 512);
}

const std::vector<std::string>& ModelConfig::keys() {
    static const std::vector<std::string> k = {
        "feature_dim", "hidden_dim",     "context_dim",  "pe_dim",       "pe_base",         "head_count",
        "head_dim",    "radius",         "levels",       "iters",        "gamma",           "alo",
        "afl",         "grid_norm",      "corr_scale",   "afl_scale",    "outlier_rule",    "alo_head_dim",
        "corr_enc_hidden", "corr_enc_out", "flow_enc_out", "flow_head_hidden", "seed"};
    return k;
}

void ModelConfig::set(const std::string& key, const std::string& v) {
    if (key == "feature_dim") feature_dim = parse_int(key, v);
    else if (key == "hidden_dim") hidden_dim = parse_int(key, v);
    else if (key == "context_dim") context_dim = parse_int(key, v);
    else if (key == "pe_dim") pe_dim = parse_int(key, v);
    else if (key == "pe_base") pe_base = parse_double(key, v);
    else if (key == "head_count") head_count = parse_int(key, v);
    else if (key == "head_dim") head_dim = parse_int(key, v);
    else if (key == "radius") radius = parse_int(key, v);
    else if (key == "levels") levels = parse_int(key, v);
    else if (key == "iters") iters = parse_int(key, v);
    else if (key == "gamma") gamma = parse_double(key, v);
    else if (key == "alo") alo = parse_bool(key, v);
    else if (key == "afl") afl = parse_bool(key, v);
    else if (key == "grid_norm") {
        if (v == "linf") grid_norm = GridNorm::linf;
        else if (v == "l1") grid_norm = GridNorm::l1;
        else throw std::invalid_argument("config: grid_norm must be 'linf' or 'l1', got '" + v + "'");
    } else if (key == "corr_scale") corr_scale = parse_bool(key, v);
    else if (key == "afl_scale") afl_scale = parse_bool(key, v);
    else if (key == "outlier_rule") {
        if (v == "paper_or") outlier_rule = OutlierRule::paper_or;
        else if (v == "kitti_and") outlier_rule = OutlierRule::kitti_and;
        else throw std::invalid_argument("config: outlier_rule must be 'paper_or' or 'kitti_and', got '" + v + "'");
    } else if (key == "alo_head_dim") alo_head_dim = parse_int(key, v);
    else if (key == "corr_enc_hidden") corr_enc_hidden = parse_int(key, v);
    else if (key == "corr_enc_out") corr_enc_out = parse_int(key, v);
    else if (key == "flow_enc_out") flow_enc_out = parse_int(key, v);
    else if (key == "flow_head_hidden") flow_head_hidden = parse_int(key, v);
    else if (key == "seed") seed = parse_u64(key, v);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string ModelConfig::get(const std::string& key) const {
    if (key == "feature_dim") return std::to_string(feature_dim);
    if (key == "hidden_dim") return std::to_string(hidden_dim);
    if (key == "context_dim") return std::to_string(context_dim);
    if (key == "pe_dim") return std::to_string(pe_dim);
    if (key == "pe_base") return fmt_double(pe_base);
    if (key == "head_count") return std::to_string(head_count);
    if (key == "head_dim") return std::to_string(head_dim);
    if (key == "radius") return std::to_string(radius);
    if (key == "levels") return std::to_string(levels);
    if (key == "iters") return std::to_string(iters);
    if (key == "gamma") return fmt_double(gamma);
    if (key == "alo") return alo ? "1" : "0";
    if (key == "afl") return afl ? "1" : "0";
    if (key == "grid_norm") return grid_norm == GridNorm::linf ? "linf" : "l1";
    if (key == "corr_scale") return corr_scale ? "1" : "0";
    if (key == "afl_scale") return afl_scale ? "1" : "0";
    if (key == "outlier_rule") return outlier_rule_name(outlier_rule);
    if (key == "alo_head_dim") return std::to_string(alo_head_dim);
    if (key == "corr_enc_hidden") return std::to_string(corr_enc_hidden);
    if (key == "corr_enc_out") return std::to_string(corr_enc_out);
    if (key == "flow_enc_out") return std::to_string(flow_enc_out);
    if (key == "flow_head_hidden") return std::to_string(flow_head_hidden);
    if (key == "seed") return std::to_string(seed);
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k << "=" << get(k) << "\n";
    return os.str();
}

void apply_config_line(ModelConfig& cfg, const std::string& line) {
    auto eq = line.find('=');
    if (eq == std::string::npos) {
        throw std::invalid_argument("config: expected key=value, got '" + line + "'");
    }
    auto strip = [](std::string s) {
        const char* ws = " \t\r\n";
        auto b = s.find_first_not_of(ws);
        auto e = s.find_last_not_of(ws);
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
}

ModelConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    ModelConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos || line[b] == '#') continue;
        apply_config_line(cfg, line);
    }
    cfg.validate();
    return cfg;
}

std::string outlier_rule_name(OutlierRule rule) { return rule == OutlierRule::paper_or ? "paper_or" : "kitti_and"; }

}  // namespace efraft
