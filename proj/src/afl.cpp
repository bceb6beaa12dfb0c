#include "efraft/afl.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "efraft/ops.hpp"

namespace efraft {

namespace {

std::atomic<std::uint64_t> g_afl_macs{0};

// Per-row relative shift: row i of o is shifted by its own index i.
Tensor relative_shift_rows(const Tensor& o, const std::vector<double>& omega, Tape* tape) {
    const int n = o.dim(0), d_pe = o.dim(1);
    const int pairs = d_pe / 2;
    Tensor out({n, d_pe});
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < pairs; ++k) {
            const double si = std::sin(static_cast<double>(i) * omega[static_cast<std::size_t>(k)]);
            const double ci = std::cos(static_cast<double>(i) * omega[static_cast<std::size_t>(k)]);
            const double os = o.at(i, 2 * k), oc = o.at(i, 2 * k + 1);
            out.at(i, 2 * k) = si * oc - ci * os;
            out.at(i, 2 * k + 1) = ci * oc + si * os;
        }
    }
    int an = node_on(o, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, omega, n, d_pe](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            const int pairs2 = d_pe / 2;
            for (int i = 0; i < n; ++i) {
                for (int k = 0; k < pairs2; ++k) {
                    const double si = std::sin(static_cast<double>(i) * omega[static_cast<std::size_t>(k)]);
                    const double ci = std::cos(static_cast<double>(i) * omega[static_cast<std::size_t>(k)]);
                    const double gs = g[static_cast<std::size_t>(i) * d_pe + 2 * k];
                    const double gc = g[static_cast<std::size_t>(i) * d_pe + 2 * k + 1];
                    ga[static_cast<std::size_t>(i) * d_pe + 2 * k] += -ci * gs + si * gc;
                    ga[static_cast<std::size_t>(i) * d_pe + 2 * k + 1] += si * gs + ci * gc;
                }
            }
        });
    }
    return out;
}

void count_attention_macs(int n, int d, int dh, int d_pe, int heads) {
    const std::uint64_t per_head = static_cast<std::uint64_t>(dh) * static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(n) +
                                   static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(dh) +
                                   static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(d_pe);
    g_afl_macs.fetch_add(per_head * static_cast<std::uint64_t>(heads), std::memory_order_relaxed);
}

}  // namespace

std::uint64_t afl_op_count() { return g_afl_macs.load(std::memory_order_relaxed); }
void afl_reset_op_count() { g_afl_macs.store(0, std::memory_order_relaxed); }

PositionalEncodingTable positional_encoding(int n, int d_pe, double base) {
    if (n < 1) throw std::invalid_argument("positional_encoding: n must be >= 1");
    if (d_pe < 2 || d_pe % 2 != 0) {
        throw std::invalid_argument("positional_encoding: d_pe must be even and >= 2, got " + std::to_string(d_pe));
    }
    PositionalEncodingTable pe;
    pe.d_pe = d_pe;
    pe.base = base;
    pe.omega.resize(static_cast<std::size_t>(d_pe / 2));
    for (int k = 0; k < d_pe / 2; ++k) {
        pe.omega[static_cast<std::size_t>(k)] = std::pow(base, -static_cast<double>(k) / static_cast<double>(d_pe));
    }
    pe.table = Tensor({n, d_pe});
    for (int t = 0; t < n; ++t) {
        for (int k = 0; k < d_pe / 2; ++k) {
            const double arg = static_cast<double>(t) * pe.omega[static_cast<std::size_t>(k)];
            pe.table.at(t, 2 * k) = std::sin(arg);
            pe.table.at(t, 2 * k + 1) = std::cos(arg);
        }
    }
    return pe;
}

Tensor relative_shift(const Tensor& o, int i, const PositionalEncodingTable& pe) {
    if (o.ndim() != 1 || o.dim(0) != pe.d_pe) {
        throw std::invalid_argument("relative_shift: expected a [d_pe] vector, got " + shape_str(o.shape()));
    }
    Tensor out({pe.d_pe});
    for (int k = 0; k < pe.d_pe / 2; ++k) {
        const double si = std::sin(static_cast<double>(i) * pe.omega[static_cast<std::size_t>(k)]);
        const double ci = std::cos(static_cast<double>(i) * pe.omega[static_cast<std::size_t>(k)]);
        out.at(2 * k) = si * o.at(2 * k + 1) - ci * o.at(2 * k);
        out.at(2 * k + 1) = ci * o.at(2 * k + 1) + si * o.at(2 * k);
    }
    return out;
}

Tensor axis_attention(const Tensor& features_axis, const PositionalEncodingTable& pe, const Model& model, Tape* tape) {
    if (features_axis.ndim() != 2) {
        throw std::invalid_argument("axis_attention: expected [D,n] features, got " + shape_str(features_axis.shape()));
    }
    const int n = features_axis.dim(1);
    if (pe.length() != n) {
        throw std::invalid_argument("axis_attention: encoding table length " + std::to_string(pe.length()) +
                                    " does not match row length " + std::to_string(n));
    }
    const int heads = model.config.head_count;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(model.config.head_dim));
    count_attention_macs(n, features_axis.dim(0), model.config.head_dim, pe.d_pe, heads);

    Tensor acc;
    for (int hd = 0; hd < heads; ++hd) {
        const Tensor& proj = model.weights.get("afl.head" + std::to_string(hd) + ".proj");
        Tensor q = matmul(proj, features_axis, tape);                       // [dh, n]; keys == queries
        Tensor scores = scale(matmul(transpose2(q, tape), q, tape), inv_sqrt, tape);  // [n, n]
        Tensor attn = softmax_lastdim(scores, tape);
        Tensor pooled = matmul(attn, pe.table, tape);                       // [n, d_pe], absolute encodings
        Tensor rel = relative_shift_rows(pooled, pe.omega, tape);
        acc = hd == 0 ? rel : add(acc, rel, tape);
    }
    return transpose2(scale(acc, 1.0 / static_cast<double>(heads), tape), tape);  // [d_pe, n]
}

Tensor afl_oracle(const Tensor& features_axis, const PositionalEncodingTable& pe, const Model& model) {
    const int d = features_axis.dim(0), n = features_axis.dim(1);
    if (n > 64) throw std::invalid_argument("afl_oracle: row length capped at 64, got " + std::to_string(n));
    const int heads = model.config.head_count;
    const int dh = model.config.head_dim;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out({pe.d_pe, n});
    std::vector<double> q(static_cast<std::size_t>(dh) * static_cast<std::size_t>(n));
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int hd = 0; hd < heads; ++hd) {
        const Tensor& proj = model.weights.get("afl.head" + std::to_string(hd) + ".proj");
        for (int r = 0; r < dh; ++r) {
            for (int i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) acc += proj.at(r, c) * features_axis.at(c, i);
                q[static_cast<std::size_t>(r) * n + i] = acc;
            }
        }
        for (int i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int r = 0; r < dh; ++r)
                    s += q[static_cast<std::size_t>(r) * n + i] * q[static_cast<std::size_t>(r) * n + j];
                scores[static_cast<std::size_t>(j)] = s * inv_sqrt;
                mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
            }
            double z = 0.0;
            for (int j = 0; j < n; ++j) {
                scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - mx);
                z += scores[static_cast<std::size_t>(j)];
            }
            for (int k = 0; k < pe.d_pe / 2; ++k) {
                double acc_sin = 0.0, acc_cos = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double a = scores[static_cast<std::size_t>(j)] / z;
                    const double arg = static_cast<double>(i - j) * pe.omega[static_cast<std::size_t>(k)];
                    acc_sin += a * std::sin(arg);
                    acc_cos += a * std::cos(arg);
                }
                out.at(2 * k, i) += acc_sin;
                out.at(2 * k + 1, i) += acc_cos;
            }
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= static_cast<double>(heads);
    return out;
}

Tensor localize_features(const Tensor& features, const Model& model, Tape* tape) {
    if (features.ndim() != 3) {
        throw std::invalid_argument("localize_features: expected [D,H,W], got " + shape_str(features.shape()));
    }
    const int h = features.dim(1), w = features.dim(2);
    const PositionalEncodingTable pe_row = positional_encoding(w, model.config.pe_dim, model.config.pe_base);
    const PositionalEncodingTable pe_col = positional_encoding(h, model.config.pe_dim, model.config.pe_base);

    std::vector<Tensor> row_encs;
    row_encs.reserve(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) {
        row_encs.push_back(axis_attention(extract_row(features, y, tape), pe_row, model, tape));
    }
    Tensor dx_enc = stack_rows(row_encs, tape);

    std::vector<Tensor> col_encs;
    col_encs.reserve(static_cast<std::size_t>(w));
    for (int x = 0; x < w; ++x) {
        col_encs.push_back(axis_attention(extract_col(features, x, tape), pe_col, model, tape));
    }
    Tensor dy_enc = stack_cols(col_encs, tape);

    if (model.config.afl_scale) {
        const Tensor& ls = model.weights.get("afl.logscale");
        Tensor sx = exp(slice_axis0(ls, 0, 1, tape), tape);
        Tensor sy = exp(slice_axis0(ls, 1, 2, tape), tape);
        dx_enc = scale_by(dx_enc, sx, tape);
        dy_enc = scale_by(dy_enc, sy, tape);
    }
    return concat({&features, &dx_enc, &dy_enc}, tape);
}

}  // namespace efraft
