#include "efraft/weights.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace efraft {

Tensor& ModelWeights::create(const std::string& name, std::vector<int> shape, int fan_in, SplitMix64& rng) {
    if (has(name)) throw std::invalid_argument("weights: duplicate parameter '" + name + "'");
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    index_[name] = order_.size();
    order_.push_back(name);
    tensors_.push_back(std::move(t));
    return tensors_.back();
}

Tensor& ModelWeights::create_raw(const std::string& name, Tensor value) {
    if (has(name)) throw std::invalid_argument("weights: duplicate parameter '" + name + "'");
    index_[name] = order_.size();
    order_.push_back(name);
    tensors_.push_back(std::move(value));
    return tensors_.back();
}

Tensor& ModelWeights::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("weights: unknown parameter '" + name + "'");
    if (tracking_) consumed_.insert(name);
    return tensors_[it->second];
}

const Tensor& ModelWeights::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("weights: unknown parameter '" + name + "'");
    if (tracking_) consumed_.insert(name);
    return tensors_[it->second];
}

std::uint64_t ModelWeights::parameter_count() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

void ModelWeights::watch_all(Tape& tape) {
    for (auto& t : tensors_) tape.watch(t);
}

void ModelWeights::start_tracking() const {
    tracking_ = true;
    consumed_.clear();
}

void ModelWeights::stop_tracking() const { tracking_ = false; }

namespace {

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    int fan_in;
};

void add_conv(std::vector<ParamSpec>& out, const std::string& name, int co, int ci, int k) {
    out.push_back({name + ".w", {co, ci, k, k}, ci * k * k});
    out.push_back({name + ".b", {co}, ci * k * k});
}

void add_linear(std::vector<ParamSpec>& out, const std::string& name, int co, int ci) {
    out.push_back({name + ".w", {co, ci}, ci});
    out.push_back({name + ".b", {co}, ci});
}

void add_trunk(std::vector<ParamSpec>& out, const std::string& prefix, const ModelConfig& cfg, int out_dim) {
    const int w1 = cfg.trunk_w1(), w2 = cfg.trunk_w2(), w3 = cfg.trunk_w3();
    add_conv(out, prefix + ".stem", w1, 3, 7);
    for (const char* u : {"a", "b"}) {
        add_conv(out, prefix + ".res1" + std::string(u) + ".conv1", w1, w1, 3);
        add_conv(out, prefix + ".res1" + std::string(u) + ".conv2", w1, w1, 3);
    }
    add_conv(out, prefix + ".down2", w2, w1, 3);
    for (const char* u : {"a", "b"}) {
        add_conv(out, prefix + ".res2" + std::string(u) + ".conv1", w2, w2, 3);
        add_conv(out, prefix + ".res2" + std::string(u) + ".conv2", w2, w2, 3);
    }
    add_conv(out, prefix + ".down3", w3, w2, 3);
    for (const char* u : {"a", "b"}) {
        add_conv(out, prefix + ".res3" + std::string(u) + ".conv1", w3, w3, 3);
        add_conv(out, prefix + ".res3" + std::string(u) + ".conv2", w3, w3, 3);
    }
    add_conv(out, prefix + ".proj", out_dim, w3, 1);
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
    std::vector<ParamSpec> specs;
    add_trunk(specs, "fnet", cfg, cfg.feature_dim);
    add_trunk(specs, "cnet", cfg, cfg.hidden_dim + cfg.context_dim);
    for (int h = 0; h < cfg.head_count; ++h) {
        specs.push_back({"afl.head" + std::to_string(h) + ".proj", {cfg.head_dim, cfg.feature_dim}, cfg.feature_dim});
    }
    if (cfg.afl_scale) specs.push_back({"afl.logscale", {2}, 1});
    add_conv(specs, "alo.mix", cfg.alo_head_dim, cfg.hidden_dim + cfg.context_dim, 1);
    add_linear(specs, "alo.fc_s", 2 * cfg.levels, 2 * cfg.alo_head_dim);
    add_linear(specs, "alo.fc_d", 2 * cfg.levels, 2 * cfg.alo_head_dim);
    add_conv(specs, "menc.corr1", cfg.corr_enc_hidden, cfg.corr_channels(), 1);
    add_conv(specs, "menc.corr2", cfg.corr_enc_out, cfg.corr_enc_hidden, 3);
    add_conv(specs, "menc.flow", cfg.flow_enc_out, 2, 3);
    const int gru_in = cfg.hidden_dim + cfg.motion_channels();
    add_conv(specs, "gru.z", cfg.hidden_dim, gru_in, 3);
    add_conv(specs, "gru.r", cfg.hidden_dim, gru_in, 3);
    add_conv(specs, "gru.q", cfg.hidden_dim, gru_in, 3);
    add_conv(specs, "head.conv1", cfg.flow_head_hidden, cfg.hidden_dim, 3);
    add_conv(specs, "head.conv2", 2, cfg.flow_head_hidden, 3);
    return specs;
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
    cfg.validate();
    Model model;
    model.config = cfg;
    SplitMix64 rng(cfg.seed);
    for (const auto& spec : parameter_specs(cfg)) {
        model.weights.create(spec.name, spec.shape, spec.fan_in, rng);
    }
    return model;
}

std::uint64_t analytic_parameter_count(const ModelConfig& cfg) {
    // Written out as plain arithmetic so it stays an independent check on the
    // parameters the builder actually creates.
    auto conv = [](std::uint64_t co, std::uint64_t ci, std::uint64_t k) { return co * ci * k * k + co; };
    auto lin = [](std::uint64_t co, std::uint64_t ci) { return co * ci + co; };
    const std::uint64_t w1 = static_cast<std::uint64_t>(cfg.trunk_w1());
    const std::uint64_t w2 = static_cast<std::uint64_t>(cfg.trunk_w2());
    const std::uint64_t w3 = static_cast<std::uint64_t>(cfg.trunk_w3());
    const std::uint64_t D = static_cast<std::uint64_t>(cfg.feature_dim);
    const std::uint64_t Dh = static_cast<std::uint64_t>(cfg.hidden_dim);
    const std::uint64_t Dc = static_cast<std::uint64_t>(cfg.context_dim);
    const std::uint64_t L = static_cast<std::uint64_t>(cfg.levels);
    auto trunk = [&](std::uint64_t out_dim) {
        return conv(w1, 3, 7) + 4 * conv(w1, w1, 3) + conv(w2, w1, 3) + 4 * conv(w2, w2, 3) + conv(w3, w2, 3) +
               4 * conv(w3, w3, 3) + conv(out_dim, w3, 1);
    };
    std::uint64_t n = trunk(D) + trunk(Dh + Dc);
    n += static_cast<std::uint64_t>(cfg.head_count) * static_cast<std::uint64_t>(cfg.head_dim) * D;
    if (cfg.afl_scale) n += 2;
    n += conv(static_cast<std::uint64_t>(cfg.alo_head_dim), Dh + Dc, 1);
    n += 2 * lin(2 * L, 2 * static_cast<std::uint64_t>(cfg.alo_head_dim));
    n += conv(static_cast<std::uint64_t>(cfg.corr_enc_hidden), static_cast<std::uint64_t>(cfg.corr_channels()), 1);
    n += conv(static_cast<std::uint64_t>(cfg.corr_enc_out), static_cast<std::uint64_t>(cfg.corr_enc_hidden), 3);
    n += conv(static_cast<std::uint64_t>(cfg.flow_enc_out), 2, 3);
    n += 3 * conv(Dh, Dh + static_cast<std::uint64_t>(cfg.motion_channels()), 3);
    n += conv(static_cast<std::uint64_t>(cfg.flow_head_hidden), Dh, 3);
    n += conv(2, static_cast<std::uint64_t>(cfg.flow_head_hidden), 3);
    return n;
}

namespace {

// --- binary helpers (little endian on the wire) ---

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw std::runtime_error(std::string("weights: truncated file while reading ") + what);
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) | (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + static_cast<std::size_t>(i)])) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::uint64_t fnv1a64(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<std::uint8_t>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

void append_entry(std::string& buf, const std::string& name, const std::vector<int>& shape,
                  const std::vector<float>& data) {
    if (name.size() > 0xFFFF) throw std::invalid_argument("weights: parameter name too long");
    put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(shape.size()));
    for (int d : shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : data) put_f32(buf, v);
}

// Fixed-point-free encodings of the config as f32 payloads. The 64-bit seed
// travels as four 16-bit chunks because f32 cannot carry 32-bit integers
// exactly.
std::vector<std::pair<std::string, std::vector<float>>> config_entries(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, std::vector<float>>> out;
    for (const auto& key : ModelConfig::keys()) {
        std::vector<float> payload;
        if (key == "seed") {
            for (int i = 0; i < 4; ++i) payload.push_back(static_cast<float>((cfg.seed >> (16 * i)) & 0xFFFF));
        } else if (key == "gamma") {
            payload.push_back(static_cast<float>(cfg.gamma));
        } else if (key == "pe_base") {
            payload.push_back(static_cast<float>(cfg.pe_base));
        } else if (key == "grid_norm") {
            payload.push_back(cfg.grid_norm == GridNorm::linf ? 0.0f : 1.0f);
        } else if (key == "outlier_rule") {
            payload.push_back(cfg.outlier_rule == OutlierRule::paper_or ? 0.0f : 1.0f);
        } else {
            payload.push_back(std::stof(cfg.get(key)));
        }
        out.emplace_back("config." + key, std::move(payload));
    }
    return out;
}

void apply_config_entry(ModelConfig& cfg, const std::string& key, const std::vector<float>& payload) {
    auto one = [&]() {
        if (payload.size() != 1) throw std::runtime_error("weights: malformed config entry '" + key + "'");
        return payload[0];
    };
    if (key == "seed") {
        if (payload.size() != 4) throw std::runtime_error("weights: malformed config entry 'seed'");
        std::uint64_t s = 0;
        for (int i = 0; i < 4; ++i) s |= (static_cast<std::uint64_t>(payload[static_cast<std::size_t>(i)]) & 0xFFFF) << (16 * i);
        cfg.seed = s;
    } else if (key == "gamma") {
        cfg.gamma = static_cast<double>(one());
    } else if (key == "pe_base") {
        cfg.pe_base = static_cast<double>(one());
    } else if (key == "grid_norm") {
        cfg.grid_norm = one() == 0.0f ? GridNorm::linf : GridNorm::l1;
    } else if (key == "outlier_rule") {
        cfg.outlier_rule = one() == 0.0f ? OutlierRule::paper_or : OutlierRule::kitti_and;
    } else {
        cfg.set(key, std::to_string(static_cast<long long>(one())));
    }
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    std::string buf;
    buf.append("EFRW");
    put_u32(buf, 1);
    const auto cfg_entries = config_entries(model.config);
    put_u32(buf, static_cast<std::uint32_t>(cfg_entries.size() + model.weights.entry_count()));

    const std::size_t cfg_begin = buf.size();
    for (const auto& [name, payload] : cfg_entries) {
        append_entry(buf, name, {static_cast<int>(payload.size())}, payload);
    }
    const std::uint64_t cfg_hash = fnv1a64(buf.data() + cfg_begin, buf.size() - cfg_begin);

    for (const auto& name : model.weights.names()) {
        const Tensor& t = model.weights.get(name);
        std::vector<float> data(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<float>(t[i]);
        append_entry(buf, name, t.shape(), data);
    }
    put_u64(buf, cfg_hash);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("weights: cannot open '" + tmp + "' for writing");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw std::runtime_error("weights: short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("weights: cannot rename '" + tmp + "' to '" + path + "'");
    }
}

Model load_model(const std::string& path) {
    std::string buf;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("weights: cannot open '" + path + "'");
        buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    Reader r{buf};
    if (r.bytes(4, "magic") != "EFRW") throw std::runtime_error("weights: '" + path + "' is not an EFRW file (bad magic)");
    const std::uint32_t version = r.u32("version");
    if (version != 1) throw std::runtime_error("weights: unsupported EFRW version " + std::to_string(version));
    const std::uint32_t count = r.u32("entry count");

    Model model;
    std::size_t cfg_begin = r.pos, cfg_end = r.pos;
    bool in_config_block = true;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = r.u16("entry name length");
        const std::string name = r.bytes(name_len, "entry name");
        const std::uint8_t ndim = r.u8("entry rank");
        std::vector<int> shape;
        std::size_t n = 1;
        for (int d = 0; d < ndim; ++d) {
            const std::uint32_t ext = r.u32("entry extent");
            if (ext == 0 || ext > (1u << 24)) throw std::runtime_error("weights: invalid extent in entry '" + name + "'");
            shape.push_back(static_cast<int>(ext));
            n *= ext;
        }
        std::vector<float> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = r.f32("entry payload");

        if (name.rfind("config.", 0) == 0) {
            if (!in_config_block) throw std::runtime_error("weights: config entry '" + name + "' after parameters");
            apply_config_entry(model.config, name.substr(7), data);
            cfg_end = r.pos;
        } else {
            in_config_block = false;
            Tensor t(shape);
            for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<double>(data[i]);
            model.weights.create_raw(name, std::move(t));
        }
    }
    const std::uint64_t stored_hash = r.u64("config hash");
    if (r.pos != buf.size()) throw std::runtime_error("weights: trailing bytes after footer");
    const std::uint64_t actual_hash = fnv1a64(buf.data() + cfg_begin, cfg_end - cfg_begin);
    if (stored_hash != actual_hash) throw std::runtime_error("weights: config hash mismatch (corrupt or tampered file)");

    model.config.validate();
    const auto specs = parameter_specs(model.config);
    if (specs.size() != model.weights.entry_count()) {
        throw std::runtime_error("weights: file holds " + std::to_string(model.weights.entry_count()) +
                                 " parameters but its config describes " + std::to_string(specs.size()));
    }
    for (const auto& spec : specs) {
        if (!model.weights.has(spec.name)) throw std::runtime_error("weights: missing parameter '" + spec.name + "'");
        if (model.weights.get(spec.name).shape() != spec.shape) {
            throw std::runtime_error("weights: parameter '" + spec.name + "' has shape " +
                                     shape_str(model.weights.get(spec.name).shape()) + ", config expects " +
                                     shape_str(spec.shape));
        }
    }
    return model;
}

}  // namespace efraft
