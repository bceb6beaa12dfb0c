#include "efraft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "efraft/parallel.hpp"

namespace efraft {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

void accumulate(std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

[[noreturn]] void probe_kink(const char* what) {
    throw std::runtime_error(std::string("gradient probe hit ") + what + "; re-randomize the probe point");
}

Tensor unary_elementwise(const Tensor& a, Tape* tape, double (*fwd)(double), double (*dfdx)(double)) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = fwd(a[i]);
    int an = node_on(a, tape);
    if (an >= 0) {
        std::vector<double> x = a.values();
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, x = std::move(x), dfdx](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i]);
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    int an = node_on(a, tape), bn = node_on(b, tape);
    if (an >= 0 || bn >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, bn](const std::vector<double>& g, Tape& t) {
            if (an >= 0) accumulate(t.grad_buffer(an), g);
            if (bn >= 0) accumulate(t.grad_buffer(bn), g);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    int an = node_on(a, tape), bn = node_on(b, tape);
    if (an >= 0 || bn >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, bn](const std::vector<double>& g, Tape& t) {
            if (an >= 0) accumulate(t.grad_buffer(an), g);
            if (bn >= 0) {
                auto& gb = t.grad_buffer(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    int an = node_on(a, tape), bn = node_on(b, tape);
    if (an >= 0 || bn >= 0) {
        std::vector<double> av = a.values(), bv = b.values();
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, bn, av = std::move(av), bv = std::move(bv)](
                                                const std::vector<double>& g, Tape& t) {
            if (an >= 0) {
                auto& ga = t.grad_buffer(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (bn >= 0) {
                auto& gb = t.grad_buffer(bn);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, c](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double c, Tape* tape) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + c;
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an](const std::vector<double>& g, Tape& t) {
            accumulate(t.grad_buffer(an), g);
        });
    }
    return out;
}

Tensor tanh(const Tensor& a, Tape* tape) {
    return unary_elementwise(
        a, tape, [](double x) { return std::tanh(x); },
        [](double x) {
            double y = std::tanh(x);
            return 1.0 - y * y;
        });
}

Tensor sigmoid(const Tensor& a, Tape* tape) {
    return unary_elementwise(
        a, tape, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double x) {
            double y = 1.0 / (1.0 + std::exp(-x));
            return y * (1.0 - y);
        });
}

Tensor relu(const Tensor& a, Tape* tape) {
    if (ProbeGuard::active()) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (std::fabs(a[i]) < 1e-8 && a[i] != 0.0) probe_kink("a relu kink");
        }
    }
    return unary_elementwise(
        a, tape, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sin(const Tensor& a, Tape* tape) {
    return unary_elementwise(
        a, tape, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Tensor cos(const Tensor& a, Tape* tape) {
    return unary_elementwise(
        a, tape, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Tensor abs(const Tensor& a, Tape* tape) {
    if (ProbeGuard::active()) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (std::fabs(a[i]) < 1e-10 && a[i] != 0.0) probe_kink("an abs kink");
        }
    }
    return unary_elementwise(
        a, tape, [](double x) { return std::fabs(x); },
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a, Tape* tape) {
    return unary_elementwise(
        a, tape, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor concat(const std::vector<const Tensor*>& parts, Tape* tape) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const auto& first = parts[0]->shape();
    if (first.empty()) throw std::invalid_argument("concat: inputs must have at least one dimension");
    int axis0 = 0;
    for (const Tensor* p : parts) {
        const auto& s = p->shape();
        if (s.size() != first.size() ||
            !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
            throw std::invalid_argument("concat: trailing dimensions differ, " + shape_str(first) + " vs " +
                                        shape_str(s));
        }
        axis0 += s[0];
    }
    std::vector<int> out_shape = first;
    out_shape[0] = axis0;
    Tensor out(out_shape);
    std::size_t off = 0;
    for (const Tensor* p : parts) {
        std::copy(p->data(), p->data() + p->size(), out.data() + off);
        off += p->size();
    }
    bool tracked = false;
    std::vector<int> nodes;
    std::vector<std::size_t> sizes;
    for (const Tensor* p : parts) {
        int n = node_on(*p, tape);
        nodes.push_back(n);
        sizes.push_back(p->size());
        tracked = tracked || n >= 0;
    }
    if (tracked) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [nodes = std::move(nodes), sizes = std::move(sizes)](
                                                const std::vector<double>& g, Tape& t) {
            std::size_t off2 = 0;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (nodes[i] >= 0) {
                    auto& gi = t.grad_buffer(nodes[i]);
                    for (std::size_t j = 0; j < sizes[i]; ++j) gi[j] += g[off2 + j];
                }
                off2 += sizes[i];
            }
        });
    }
    return out;
}

Tensor slice_axis0(const Tensor& a, int begin, int end, Tape* tape) {
    if (a.ndim() < 1) throw std::invalid_argument("slice_axis0: need at least 1 dimension");
    const int c = a.dim(0);
    if (begin < 0 || end > c || begin >= end) {
        throw std::invalid_argument("slice_axis0: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") invalid for extent " + std::to_string(c));
    }
    const std::size_t inner = a.size() / static_cast<std::size_t>(c);
    std::vector<int> out_shape = a.shape();
    out_shape[0] = end - begin;
    Tensor out(out_shape);
    std::copy(a.data() + static_cast<std::size_t>(begin) * inner, a.data() + static_cast<std::size_t>(end) * inner,
              out.data());
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, begin, inner](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            const std::size_t off = static_cast<std::size_t>(begin) * inner;
            for (std::size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
        });
    }
    return out;
}

Tensor scale_by(const Tensor& a, const Tensor& s, Tape* tape) {
    if (s.size() != 1) throw std::invalid_argument("scale_by: scale must hold exactly one element");
    const double c = s[0];
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    int an = node_on(a, tape), sn = node_on(s, tape);
    if (an >= 0 || sn >= 0) {
        std::vector<double> av = a.values();
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, sn, c, av = std::move(av)](const std::vector<double>& g, Tape& t) {
            if (an >= 0) {
                auto& ga = t.grad_buffer(an);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
            }
            if (sn >= 0) {
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                t.grad_buffer(sn)[0] += acc;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape, Tape* tape) {
    if (shape_size(shape) != a.size()) {
        throw std::invalid_argument("reshape: size of " + shape_str(shape) + " does not match " +
                                    shape_str(a.shape()));
    }
    Tensor out(std::move(shape), a.values());
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an](const std::vector<double>& g, Tape& t) {
            accumulate(t.grad_buffer(an), g);
        });
    }
    return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    Tensor out = Tensor::scalar(s);
    int an = node_on(a, tape);
    if (an >= 0) {
        std::size_t n = a.size();
        out.tape_id = tape->id();
        out.node = tape->record(1, [an, n](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw std::invalid_argument("matmul: expected 2-d operands, got " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " + std::to_string(k) + " vs " +
                                    std::to_string(k2));
    }
    Tensor out({m, n});
    const double* A = a.data();
    const double* B = b.data();
    double* O = out.data();
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t r0, std::size_t r1) {
        for (std::size_t r = r0; r < r1; ++r) {
            const double* arow = A + r * static_cast<std::size_t>(k);
            double* orow = O + r * static_cast<std::size_t>(n);
            for (int j = 0; j < n; ++j) orow[j] = 0.0;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = B + static_cast<std::size_t>(kk) * static_cast<std::size_t>(n);
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    });
    int an = node_on(a, tape), bn = node_on(b, tape);
    if (an >= 0 || bn >= 0) {
        std::vector<double> av = a.values(), bv = b.values();
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, bn, av = std::move(av), bv = std::move(bv), m, k, n](
                                                const std::vector<double>& g, Tape& t) {
            if (an >= 0) {
                auto& ga = t.grad_buffer(an);  // [m,k] += g [m,n] * B^T
                for (int r = 0; r < m; ++r) {
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = g.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(n);
                        const double* brow = bv.data() + static_cast<std::size_t>(kk) * static_cast<std::size_t>(n);
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[static_cast<std::size_t>(r) * static_cast<std::size_t>(k) + static_cast<std::size_t>(kk)] +=
                            acc;
                    }
                }
            }
            if (bn >= 0) {
                auto& gb = t.grad_buffer(bn);  // [k,n] += A^T * g
                for (int r = 0; r < m; ++r) {
                    const double* arow = av.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(k);
                    const double* grow = g.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(n);
                    for (int kk = 0; kk < k; ++kk) {
                        const double aval = arow[kk];
                        double* gbrow = gb.data() + static_cast<std::size_t>(kk) * static_cast<std::size_t>(n);
                        for (int j = 0; j < n; ++j) gbrow[j] += aval * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose2(const Tensor& a, Tape* tape) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose2: expected 2-d operand, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, m, n](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)] +=
                        g[static_cast<std::size_t>(j) * static_cast<std::size_t>(m) + static_cast<std::size_t>(i)];
        });
    }
    return out;
}

Tensor extract_row(const Tensor& a, int y, Tape* tape) {
    if (a.ndim() != 3) throw std::invalid_argument("extract_row: expected [C,H,W], got " + shape_str(a.shape()));
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (y < 0 || y >= h) throw std::invalid_argument("extract_row: row " + std::to_string(y) + " out of range");
    Tensor out({c, w});
    for (int ci = 0; ci < c; ++ci)
        for (int x = 0; x < w; ++x) out.at(ci, x) = a.at(ci, y, x);
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, c, h, w, y](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (int ci = 0; ci < c; ++ci)
                for (int x = 0; x < w; ++x)
                    ga[(static_cast<std::size_t>(ci) * h + y) * w + x] += g[static_cast<std::size_t>(ci) * w + x];
        });
    }
    return out;
}

Tensor extract_col(const Tensor& a, int x, Tape* tape) {
    if (a.ndim() != 3) throw std::invalid_argument("extract_col: expected [C,H,W], got " + shape_str(a.shape()));
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    if (x < 0 || x >= w) throw std::invalid_argument("extract_col: column " + std::to_string(x) + " out of range");
    Tensor out({c, h});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) out.at(ci, y) = a.at(ci, y, x);
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, c, h, w, x](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    ga[(static_cast<std::size_t>(ci) * h + y) * w + x] += g[static_cast<std::size_t>(ci) * h + y];
        });
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows, Tape* tape) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
    const int c = rows[0].dim(0), w = rows[0].dim(1);
    const int h = static_cast<int>(rows.size());
    Tensor out({c, h, w});
    std::vector<int> nodes;
    bool tracked = false;
    for (int y = 0; y < h; ++y) {
        if (rows[static_cast<std::size_t>(y)].ndim() != 2 || rows[static_cast<std::size_t>(y)].dim(0) != c ||
            rows[static_cast<std::size_t>(y)].dim(1) != w) {
            throw std::invalid_argument("stack_rows: inconsistent row shapes");
        }
        for (int ci = 0; ci < c; ++ci)
            for (int x = 0; x < w; ++x) out.at(ci, y, x) = rows[static_cast<std::size_t>(y)].at(ci, x);
        int n = node_on(rows[static_cast<std::size_t>(y)], tape);
        nodes.push_back(n);
        tracked = tracked || n >= 0;
    }
    if (tracked) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [nodes = std::move(nodes), c, h, w](const std::vector<double>& g,
                                                                                Tape& t) {
            for (int y = 0; y < h; ++y) {
                if (nodes[static_cast<std::size_t>(y)] < 0) continue;
                auto& gr = t.grad_buffer(nodes[static_cast<std::size_t>(y)]);
                for (int ci = 0; ci < c; ++ci)
                    for (int x = 0; x < w; ++x)
                        gr[static_cast<std::size_t>(ci) * w + x] += g[(static_cast<std::size_t>(ci) * h + y) * w + x];
            }
        });
    }
    return out;
}

Tensor stack_cols(const std::vector<Tensor>& cols, Tape* tape) {
    if (cols.empty()) throw std::invalid_argument("stack_cols: no inputs");
    const int c = cols[0].dim(0), h = cols[0].dim(1);
    const int w = static_cast<int>(cols.size());
    Tensor out({c, h, w});
    std::vector<int> nodes;
    bool tracked = false;
    for (int x = 0; x < w; ++x) {
        if (cols[static_cast<std::size_t>(x)].ndim() != 2 || cols[static_cast<std::size_t>(x)].dim(0) != c ||
            cols[static_cast<std::size_t>(x)].dim(1) != h) {
            throw std::invalid_argument("stack_cols: inconsistent column shapes");
        }
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y) out.at(ci, y, x) = cols[static_cast<std::size_t>(x)].at(ci, y);
        int n = node_on(cols[static_cast<std::size_t>(x)], tape);
        nodes.push_back(n);
        tracked = tracked || n >= 0;
    }
    if (tracked) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [nodes = std::move(nodes), c, h, w](const std::vector<double>& g,
                                                                                Tape& t) {
            for (int x = 0; x < w; ++x) {
                if (nodes[static_cast<std::size_t>(x)] < 0) continue;
                auto& gc = t.grad_buffer(nodes[static_cast<std::size_t>(x)]);
                for (int ci = 0; ci < c; ++ci)
                    for (int y = 0; y < h; ++y)
                        gc[static_cast<std::size_t>(ci) * h + y] += g[(static_cast<std::size_t>(ci) * h + y) * w + x];
            }
        });
    }
    return out;
}

Tensor broadcast_spatial(const Tensor& a, int h, int w, Tape* tape) {
    if (a.ndim() != 1) throw std::invalid_argument("broadcast_spatial: expected 1-d input, got " + shape_str(a.shape()));
    const int c = a.dim(0);
    Tensor out({c, h, w});
    for (int ci = 0; ci < c; ++ci) {
        double v = a.at(ci);
        double* p = out.data() + static_cast<std::size_t>(ci) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
        for (int i = 0; i < h * w; ++i) p[i] = v;
    }
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, c, h, w](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (int ci = 0; ci < c; ++ci) {
                double acc = 0.0;
                const double* p = g.data() + static_cast<std::size_t>(ci) * static_cast<std::size_t>(h) *
                                                 static_cast<std::size_t>(w);
                for (int i = 0; i < h * w; ++i) acc += p[i];
                ga[static_cast<std::size_t>(ci)] += acc;
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding, Tape* tape) {
    if (input.ndim() != 3) throw std::invalid_argument("conv2d: input must be [C,H,W], got " + shape_str(input.shape()));
    if (kernel.ndim() != 4) {
        throw std::invalid_argument("conv2d: kernel must be [C_out,C_in,kH,kW], got " + shape_str(kernel.shape()));
    }
    if (bias.ndim() != 1) throw std::invalid_argument("conv2d: bias must be 1-d, got " + shape_str(bias.shape()));
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = kernel.dim(0), kcin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kcin != cin) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(cin) + " channels but kernel expects " +
                                    std::to_string(kcin));
    }
    if (bias.dim(0) != cout) {
        throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.dim(0)) + " does not match " +
                                    std::to_string(cout) + " output channels");
    }
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw) {
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                                    std::to_string(w + 2 * padding));
    }

    Tensor out({cout, ho, wo});
    const double* in = input.data();
    const double* kp = kernel.data();
    const double* bp = bias.data();
    double* op = out.data();
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    const std::size_t oplane = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
    const std::size_t ksz = static_cast<std::size_t>(kh) * static_cast<std::size_t>(kw);

    parallel_for(static_cast<std::size_t>(cout) * static_cast<std::size_t>(ho), [&](std::size_t b0, std::size_t b1) {
        for (std::size_t idx = b0; idx < b1; ++idx) {
            const int oc = static_cast<int>(idx / static_cast<std::size_t>(ho));
            const int oy = static_cast<int>(idx % static_cast<std::size_t>(ho));
            double* orow = op + static_cast<std::size_t>(oc) * oplane + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) orow[ox] = bp[oc];
            const int iy0 = oy * stride - padding;
            for (int ic = 0; ic < cin; ++ic) {
                const double* iplane = in + static_cast<std::size_t>(ic) * plane;
                const double* kbase = kp + (static_cast<std::size_t>(oc) * cin + static_cast<std::size_t>(ic)) * ksz;
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = iy0 + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* irow = iplane + static_cast<std::size_t>(iy) * w;
                    const double* krow = kbase + static_cast<std::size_t>(ky) * kw;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix0 = ox * stride - padding;
                        double acc = 0.0;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += irow[ix] * krow[kx];
                        }
                        orow[ox] += acc;
                    }
                }
            }
        }
    });

    int in_n = node_on(input, tape), k_n = node_on(kernel, tape), b_n = node_on(bias, tape);
    if (in_n >= 0 || k_n >= 0 || b_n >= 0) {
        std::vector<double> iv = input.values(), kv = kernel.values();
        out.tape_id = tape->id();
        out.node = tape->record(
            out.size(), [in_n, k_n, b_n, iv = std::move(iv), kv = std::move(kv), cin, h, w, cout, kh, kw, ho, wo,
                         stride, padding](const std::vector<double>& g, Tape& t) {
                const std::size_t plane2 = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
                const std::size_t oplane2 = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
                const std::size_t ksz2 = static_cast<std::size_t>(kh) * static_cast<std::size_t>(kw);
                if (b_n >= 0) {
                    auto& gb = t.grad_buffer(b_n);
                    for (int oc = 0; oc < cout; ++oc) {
                        double acc = 0.0;
                        const double* gp = g.data() + static_cast<std::size_t>(oc) * oplane2;
                        for (std::size_t i = 0; i < oplane2; ++i) acc += gp[i];
                        gb[static_cast<std::size_t>(oc)] += acc;
                    }
                }
                if (k_n >= 0) {
                    auto& gk = t.grad_buffer(k_n);
                    parallel_for(static_cast<std::size_t>(cout), [&](std::size_t c0, std::size_t c1) {
                        for (std::size_t occ = c0; occ < c1; ++occ) {
                            const int oc = static_cast<int>(occ);
                            const double* gp = g.data() + static_cast<std::size_t>(oc) * oplane2;
                            for (int ic = 0; ic < cin; ++ic) {
                                const double* iplane = iv.data() + static_cast<std::size_t>(ic) * plane2;
                                double* gkbase =
                                    gk.data() + (static_cast<std::size_t>(oc) * cin + static_cast<std::size_t>(ic)) * ksz2;
                                for (int ky = 0; ky < kh; ++ky) {
                                    for (int kx = 0; kx < kw; ++kx) {
                                        double acc = 0.0;
                                        for (int oy = 0; oy < ho; ++oy) {
                                            const int iy = oy * stride - padding + ky;
                                            if (iy < 0 || iy >= h) continue;
                                            const double* irow = iplane + static_cast<std::size_t>(iy) * w;
                                            const double* grow = gp + static_cast<std::size_t>(oy) * wo;
                                            for (int ox = 0; ox < wo; ++ox) {
                                                const int ix = ox * stride - padding + kx;
                                                if (ix < 0 || ix >= w) continue;
                                                acc += grow[ox] * irow[ix];
                                            }
                                        }
                                        gkbase[static_cast<std::size_t>(ky) * kw + kx] += acc;
                                    }
                                }
                            }
                        }
                    });
                }
                if (in_n >= 0) {
                    auto& gi = t.grad_buffer(in_n);
                    parallel_for(static_cast<std::size_t>(cin), [&](std::size_t c0, std::size_t c1) {
                        for (std::size_t icc = c0; icc < c1; ++icc) {
                            const int ic = static_cast<int>(icc);
                            double* giplane = gi.data() + static_cast<std::size_t>(ic) * plane2;
                            for (int oc = 0; oc < cout; ++oc) {
                                const double* gp = g.data() + static_cast<std::size_t>(oc) * oplane2;
                                const double* kbase =
                                    kv.data() + (static_cast<std::size_t>(oc) * cin + static_cast<std::size_t>(ic)) * ksz2;
                                for (int oy = 0; oy < ho; ++oy) {
                                    const double* grow = gp + static_cast<std::size_t>(oy) * wo;
                                    for (int ky = 0; ky < kh; ++ky) {
                                        const int iy = oy * stride - padding + ky;
                                        if (iy < 0 || iy >= h) continue;
                                        double* girow = giplane + static_cast<std::size_t>(iy) * w;
                                        const double* krow = kbase + static_cast<std::size_t>(ky) * kw;
                                        for (int ox = 0; ox < wo; ++ox) {
                                            const double gv = grow[ox];
                                            if (gv == 0.0) continue;
                                            const int ix0 = ox * stride - padding;
                                            for (int kx = 0; kx < kw; ++kx) {
                                                const int ix = ix0 + kx;
                                                if (ix < 0 || ix >= w) continue;
                                                girow[ix] += gv * krow[kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    });
                }
            });
    }
    return out;
}

Tensor avg_pool2d(const Tensor& a, int k, Tape* tape) {
    if (a.ndim() < 2) throw std::invalid_argument("avg_pool2d: need at least 2 dimensions, got " + shape_str(a.shape()));
    if (k < 1) throw std::invalid_argument("avg_pool2d: k must be >= 1");
    const int h = a.dim(a.ndim() - 2), w = a.dim(a.ndim() - 1);
    if (h % k != 0 || w % k != 0) {
        throw std::invalid_argument("avg_pool2d: extents " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by k=" + std::to_string(k));
    }
    std::vector<int> out_shape = a.shape();
    out_shape[out_shape.size() - 2] = h / k;
    out_shape[out_shape.size() - 1] = w / k;
    const int ho = h / k, wo = w / k;
    std::size_t lead = 1;
    for (int i = 0; i + 2 < a.ndim(); ++i) lead *= static_cast<std::size_t>(a.dim(i));
    Tensor out(out_shape);
    const double inv = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
    const double* in = a.data();
    double* op = out.data();
    const std::size_t iplane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    const std::size_t oplane = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
    parallel_for(lead, [&](std::size_t l0, std::size_t l1) {
        for (std::size_t l = l0; l < l1; ++l) {
            const double* ip = in + l * iplane;
            double* o = op + l * oplane;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int dy = 0; dy < k; ++dy) {
                        const double* row = ip + static_cast<std::size_t>(oy * k + dy) * w + static_cast<std::size_t>(ox * k);
                        for (int dx = 0; dx < k; ++dx) acc += row[dx];
                    }
                    o[static_cast<std::size_t>(oy) * wo + ox] = acc * inv;
                }
            }
        }
    });
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, lead, h, w, ho, wo, k, inv, iplane, oplane](
                                                const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (std::size_t l = 0; l < lead; ++l) {
                const double* gp = g.data() + l * oplane;
                double* gap = ga.data() + l * iplane;
                for (int oy = 0; oy < ho; ++oy) {
                    for (int ox = 0; ox < wo; ++ox) {
                        const double gv = gp[static_cast<std::size_t>(oy) * wo + ox] * inv;
                        for (int dy = 0; dy < k; ++dy) {
                            double* row = gap + static_cast<std::size_t>(oy * k + dy) * w + static_cast<std::size_t>(ox * k);
                            for (int dx = 0; dx < k; ++dx) row[dx] += gv;
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax_lastdim(const Tensor& a, Tape* tape) {
    if (a.ndim() < 1) throw std::invalid_argument("softmax: need at least 1 dimension");
    const int n = a.dim(a.ndim() - 1);
    const std::size_t rows = a.size() / static_cast<std::size_t>(n);
    Tensor out(a.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data() + r * static_cast<std::size_t>(n);
        double* y = out.data() + r * static_cast<std::size_t>(n);
        double m = x[0];
        for (int i = 1; i < n; ++i) m = std::max(m, x[i]);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - m);
            s += y[i];
        }
        const double inv = 1.0 / s;
        for (int i = 0; i < n; ++i) y[i] *= inv;
    }
    int an = node_on(a, tape);
    if (an >= 0) {
        std::vector<double> yv = out.values();
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, yv = std::move(yv), rows, n](const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = yv.data() + r * static_cast<std::size_t>(n);
                const double* gr = g.data() + r * static_cast<std::size_t>(n);
                double dot = 0.0;
                for (int i = 0; i < n; ++i) dot += gr[i] * y[i];
                double* gar = ga.data() + r * static_cast<std::size_t>(n);
                for (int i = 0; i < n; ++i) gar[i] += y[i] * (gr[i] - dot);
            }
        });
    }
    return out;
}

Tensor global_max_min_pool(const Tensor& a, Tape* tape) {
    if (a.ndim() != 3) {
        throw std::invalid_argument("global_max_min_pool: expected [C,H,W], got " + shape_str(a.shape()));
    }
    const int c = a.dim(0);
    const std::size_t plane = static_cast<std::size_t>(a.dim(1)) * static_cast<std::size_t>(a.dim(2));
    Tensor out({2 * c});
    std::vector<std::size_t> argmax(static_cast<std::size_t>(c)), argmin(static_cast<std::size_t>(c));
    for (int ci = 0; ci < c; ++ci) {
        const double* p = a.data() + static_cast<std::size_t>(ci) * plane;
        std::size_t imax = 0, imin = 0;
        for (std::size_t i = 1; i < plane; ++i) {
            if (p[i] > p[imax]) imax = i;
            if (p[i] < p[imin]) imin = i;
        }
        if (ProbeGuard::active() && plane > 1) {
            int near_max = 0, near_min = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                if (std::fabs(p[i] - p[imax]) < 1e-12) ++near_max;
                if (std::fabs(p[i] - p[imin]) < 1e-12) ++near_min;
            }
            if (near_max > 1 || near_min > 1) probe_kink("a max/min pooling tie");
        }
        out.at(ci) = p[imax];
        out.at(c + ci) = p[imin];
        argmax[static_cast<std::size_t>(ci)] = imax;
        argmin[static_cast<std::size_t>(ci)] = imin;
    }
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, c, plane, argmax = std::move(argmax), argmin = std::move(argmin)](
                                                const std::vector<double>& g, Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (int ci = 0; ci < c; ++ci) {
                ga[static_cast<std::size_t>(ci) * plane + argmax[static_cast<std::size_t>(ci)]] +=
                    g[static_cast<std::size_t>(ci)];
                ga[static_cast<std::size_t>(ci) * plane + argmin[static_cast<std::size_t>(ci)]] +=
                    g[static_cast<std::size_t>(c + ci)];
            }
        });
    }
    return out;
}

BilinearTap bilinear_tap(const double* plane, int h, int w, double x, double y) {
    BilinearTap tap{};
    const double xc = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
    const double yc = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
    const bool x_clamped = (x != xc);
    const bool y_clamped = (y != yc);
    if (w == 1) {
        tap.x0 = tap.x1 = 0;
        tap.fx = 0.0;
    } else {
        int x0 = static_cast<int>(std::floor(xc));
        if (x0 > w - 2) x0 = w - 2;
        tap.x0 = x0;
        tap.x1 = x0 + 1;
        tap.fx = xc - static_cast<double>(x0);
    }
    if (h == 1) {
        tap.y0 = tap.y1 = 0;
        tap.fy = 0.0;
    } else {
        int y0 = static_cast<int>(std::floor(yc));
        if (y0 > h - 2) y0 = h - 2;
        tap.y0 = y0;
        tap.y1 = y0 + 1;
        tap.fy = yc - static_cast<double>(y0);
    }
    const double v00 = plane[static_cast<std::size_t>(tap.y0) * w + tap.x0];
    const double v01 = plane[static_cast<std::size_t>(tap.y0) * w + tap.x1];
    const double v10 = plane[static_cast<std::size_t>(tap.y1) * w + tap.x0];
    const double v11 = plane[static_cast<std::size_t>(tap.y1) * w + tap.x1];
    const double top = v00 + tap.fx * (v01 - v00);
    const double bot = v10 + tap.fx * (v11 - v10);
    tap.value = top + tap.fy * (bot - top);
    tap.dvalue_dx = x_clamped ? 0.0 : (1.0 - tap.fy) * (v01 - v00) + tap.fy * (v11 - v10);
    tap.dvalue_dy = y_clamped ? 0.0 : (bot - top);
    return tap;
}

Tensor bilinear_sample(const Tensor& field, const Tensor& coords, Tape* tape) {
    if (field.ndim() != 3) {
        throw std::invalid_argument("bilinear_sample: field must be [C,H,W], got " + shape_str(field.shape()));
    }
    if (coords.ndim() != 2 || coords.dim(1) != 2) {
        throw std::invalid_argument("bilinear_sample: coords must be [n,2], got " + shape_str(coords.shape()));
    }
    if (!coords.all_finite()) throw std::invalid_argument("bilinear_sample: coordinates must be finite");
    const int c = field.dim(0), h = field.dim(1), w = field.dim(2);
    const int n = coords.dim(0);
    const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    Tensor out({c, n});
    if (ProbeGuard::active()) {
        for (int m = 0; m < n; ++m) {
            const double fx = coords.at(m, 0) - std::floor(coords.at(m, 0));
            const double fy = coords.at(m, 1) - std::floor(coords.at(m, 1));
            if ((w > 1 && (fx < 1e-8 || fx > 1.0 - 1e-8)) || (h > 1 && (fy < 1e-8 || fy > 1.0 - 1e-8))) {
                probe_kink("a bilinear cell boundary");
            }
        }
    }
    std::vector<BilinearTap> taps(static_cast<std::size_t>(c) * static_cast<std::size_t>(n));
    for (int ci = 0; ci < c; ++ci) {
        const double* p = field.data() + static_cast<std::size_t>(ci) * plane;
        for (int m = 0; m < n; ++m) {
            BilinearTap tap = bilinear_tap(p, h, w, coords.at(m, 0), coords.at(m, 1));
            out.at(ci, m) = tap.value;
            taps[static_cast<std::size_t>(ci) * n + m] = tap;
        }
    }
    int fn = node_on(field, tape), cn = node_on(coords, tape);
    if (fn >= 0 || cn >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [fn, cn, taps = std::move(taps), c, n, w, plane](
                                                const std::vector<double>& g, Tape& t) {
            if (fn >= 0) {
                auto& gf = t.grad_buffer(fn);
                for (int ci = 0; ci < c; ++ci) {
                    double* gp = gf.data() + static_cast<std::size_t>(ci) * plane;
                    for (int m = 0; m < n; ++m) {
                        const BilinearTap& tap = taps[static_cast<std::size_t>(ci) * n + m];
                        const double gv = g[static_cast<std::size_t>(ci) * n + m];
                        gp[static_cast<std::size_t>(tap.y0) * w + tap.x0] += gv * (1.0 - tap.fy) * (1.0 - tap.fx);
                        gp[static_cast<std::size_t>(tap.y0) * w + tap.x1] += gv * (1.0 - tap.fy) * tap.fx;
                        gp[static_cast<std::size_t>(tap.y1) * w + tap.x0] += gv * tap.fy * (1.0 - tap.fx);
                        gp[static_cast<std::size_t>(tap.y1) * w + tap.x1] += gv * tap.fy * tap.fx;
                    }
                }
            }
            if (cn >= 0) {
                auto& gc = t.grad_buffer(cn);
                for (int m = 0; m < n; ++m) {
                    double gx = 0.0, gy = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        const BilinearTap& tap = taps[static_cast<std::size_t>(ci) * n + m];
                        const double gv = g[static_cast<std::size_t>(ci) * n + m];
                        gx += gv * tap.dvalue_dx;
                        gy += gv * tap.dvalue_dy;
                    }
                    gc[static_cast<std::size_t>(m) * 2] += gx;
                    gc[static_cast<std::size_t>(m) * 2 + 1] += gy;
                }
            }
        });
    }
    return out;
}

Tensor bilinear_sample(const Tensor& field, const std::vector<std::pair<double, double>>& coords, Tape* tape) {
    Tensor ct({static_cast<int>(coords.size()), 2});
    for (std::size_t i = 0; i < coords.size(); ++i) {
        ct.at(static_cast<int>(i), 0) = coords[i].first;
        ct.at(static_cast<int>(i), 1) = coords[i].second;
    }
    return bilinear_sample(field, ct, tape);
}

Tensor upsample_bilinear(const Tensor& a, int factor, Tape* tape) {
    if (a.ndim() != 3) throw std::invalid_argument("upsample_bilinear: expected [C,h,w], got " + shape_str(a.shape()));
    if (factor < 1) throw std::invalid_argument("upsample_bilinear: factor must be >= 1");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    const int ho = h * factor, wo = w * factor;
    Tensor out({c, ho, wo});

    // Half-pixel-center source coordinates, clamped to the field.
    struct Axis {
        int i0, i1;
        double f;
    };
    auto build_axis = [factor](int n_in, int n_out) {
        std::vector<Axis> ax(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            double s = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
            s = std::min(std::max(s, 0.0), static_cast<double>(n_in - 1));
            int i0 = static_cast<int>(std::floor(s));
            if (i0 > n_in - 2) i0 = n_in > 1 ? n_in - 2 : 0;
            const int i1 = n_in > 1 ? i0 + 1 : 0;
            ax[static_cast<std::size_t>(o)] = Axis{i0, i1, n_in > 1 ? s - static_cast<double>(i0) : 0.0};
        }
        return ax;
    };
    const auto xs = build_axis(w, wo);
    const auto ys = build_axis(h, ho);
    const std::size_t iplane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    const std::size_t oplane = static_cast<std::size_t>(ho) * static_cast<std::size_t>(wo);
    for (int ci = 0; ci < c; ++ci) {
        const double* ip = a.data() + static_cast<std::size_t>(ci) * iplane;
        double* op = out.data() + static_cast<std::size_t>(ci) * oplane;
        for (int oy = 0; oy < ho; ++oy) {
            const Axis& ay = ys[static_cast<std::size_t>(oy)];
            const double* r0 = ip + static_cast<std::size_t>(ay.i0) * w;
            const double* r1 = ip + static_cast<std::size_t>(ay.i1) * w;
            double* orow = op + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
                const Axis& axx = xs[static_cast<std::size_t>(ox)];
                const double top = r0[axx.i0] + axx.f * (r0[axx.i1] - r0[axx.i0]);
                const double bot = r1[axx.i0] + axx.f * (r1[axx.i1] - r1[axx.i0]);
                orow[ox] = top + ay.f * (bot - top);
            }
        }
    }
    int an = node_on(a, tape);
    if (an >= 0) {
        out.tape_id = tape->id();
        out.node = tape->record(out.size(), [an, xs, ys, c, w, ho, wo, iplane, oplane](const std::vector<double>& g,
                                                                                       Tape& t) {
            auto& ga = t.grad_buffer(an);
            for (int ci = 0; ci < c; ++ci) {
                const double* gp = g.data() + static_cast<std::size_t>(ci) * oplane;
                double* gap = ga.data() + static_cast<std::size_t>(ci) * iplane;
                for (int oy = 0; oy < ho; ++oy) {
                    const Axis& ay = ys[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < wo; ++ox) {
                        const Axis& axx = xs[static_cast<std::size_t>(ox)];
                        const double gv = gp[static_cast<std::size_t>(oy) * wo + ox];
                        gap[static_cast<std::size_t>(ay.i0) * w + axx.i0] += gv * (1.0 - ay.f) * (1.0 - axx.f);
                        gap[static_cast<std::size_t>(ay.i0) * w + axx.i1] += gv * (1.0 - ay.f) * axx.f;
                        gap[static_cast<std::size_t>(ay.i1) * w + axx.i0] += gv * ay.f * (1.0 - axx.f);
                        gap[static_cast<std::size_t>(ay.i1) * w + axx.i1] += gv * ay.f * axx.f;
                    }
                }
            }
        });
    }
    return out;
}

double gradient_check(const std::function<Tensor(std::vector<Tensor>&, Tape*)>& f, std::vector<Tensor> point,
                      double eps) {
    ProbeGuard guard;
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        std::vector<Tensor> pt = point;
        for (auto& t : pt) tape.watch(t);
        Tensor y = f(pt, &tape);
        if (y.size() != 1) throw std::invalid_argument("gradient_check: f must be scalar-valued");
        tape.backward(y);
        analytic.reserve(pt.size());
        for (auto& t : pt) analytic.push_back(tape.grad(t));
    }
    double max_rel = 0.0;
    for (std::size_t ti = 0; ti < point.size(); ++ti) {
        for (std::size_t j = 0; j < point[ti].size(); ++j) {
            std::vector<Tensor> pp = point;
            pp[ti][j] += eps;
            const double yp = f(pp, nullptr)[0];
            std::vector<Tensor> pm = point;
            pm[ti][j] -= eps;
            const double ym = f(pm, nullptr)[0];
            const double fd = (yp - ym) / (2.0 * eps);
            const double an = analytic[ti][j];
            const double rel = std::fabs(an - fd) / std::max(1.0, std::fabs(an));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace efraft
