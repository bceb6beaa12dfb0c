#include "efraft/lookup.hpp"

#include <cmath>
#include <stdexcept>

#include "efraft/ops.hpp"
#include "efraft/parallel.hpp"

namespace efraft {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// One sample site: the offsets actually used plus the integer base offsets
// they were derived from (for scalar-parameter adjoints).
struct Site {
    double ox, oy;
    double bx, by;
};

Tensor lookup_impl(const CorrelationPyramid& pyr, const Tensor& flow,
                   const std::vector<std::vector<Site>>& sites_per_level, const Tensor* packed_scalars, Tape* tape) {
    const int levels = static_cast<int>(pyr.levels.size());
    if (static_cast<int>(sites_per_level.size()) != levels) {
        throw std::invalid_argument("lookup: got " + std::to_string(sites_per_level.size()) + " grids for " +
                                    std::to_string(levels) + " pyramid levels");
    }
    const int h = pyr.query_h(), w = pyr.query_w();
    if (flow.ndim() != 3 || flow.dim(0) != 2 || flow.dim(1) != h || flow.dim(2) != w) {
        throw std::invalid_argument("lookup: flow must be [2," + std::to_string(h) + "," + std::to_string(w) +
                                    "], got " + shape_str(flow.shape()));
    }
    int channels = 0;
    for (const auto& s : sites_per_level) channels += static_cast<int>(s.size());

    Tensor out({channels, h, w});
    std::vector<BilinearTap> taps(static_cast<std::size_t>(channels) * static_cast<std::size_t>(h) *
                                  static_cast<std::size_t>(w));
    const std::size_t px_count = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);

    parallel_for(px_count, [&](std::size_t p0, std::size_t p1) {
        for (std::size_t p = p0; p < p1; ++p) {
            const int y1 = static_cast<int>(p) / w;
            const int x1 = static_cast<int>(p) % w;
            const double qx = static_cast<double>(x1) + flow.at(0, y1, x1);
            const double qy = static_cast<double>(y1) + flow.at(1, y1, x1);
            int ch = 0;
            for (int l = 0; l < levels; ++l) {
                const Tensor& level = pyr.levels[static_cast<std::size_t>(l)];
                const int sh = level.dim(2), sw = level.dim(3);
                const double inv = 1.0 / static_cast<double>(1 << l);
                const double* slab = level.data() + p * static_cast<std::size_t>(sh) * static_cast<std::size_t>(sw);
                const double cx = qx * inv, cy = qy * inv;
                for (const Site& s : sites_per_level[static_cast<std::size_t>(l)]) {
                    BilinearTap tap = bilinear_tap(slab, sh, sw, cx + s.ox, cy + s.oy);
                    out.at(ch, y1, x1) = tap.value;
                    taps[(static_cast<std::size_t>(ch)) * px_count + p] = tap;
                    ++ch;
                }
            }
        }
    });

    std::vector<int> level_nodes(static_cast<std::size_t>(levels), -1);
    bool any_level = false;
    for (int l = 0; l < levels; ++l) {
        level_nodes[static_cast<std::size_t>(l)] = node_on(pyr.levels[static_cast<std::size_t>(l)], tape);
        any_level = any_level || level_nodes[static_cast<std::size_t>(l)] >= 0;
    }
    const int flow_node = node_on(flow, tape);
    const int scalars_node = packed_scalars != nullptr ? node_on(*packed_scalars, tape) : -1;
    if (!any_level && flow_node < 0 && scalars_node < 0) return out;

    std::vector<int> slab_h(static_cast<std::size_t>(levels)), slab_w(static_cast<std::size_t>(levels)),
        level_channels(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        slab_h[static_cast<std::size_t>(l)] = pyr.levels[static_cast<std::size_t>(l)].dim(2);
        slab_w[static_cast<std::size_t>(l)] = pyr.levels[static_cast<std::size_t>(l)].dim(3);
        level_channels[static_cast<std::size_t>(l)] = static_cast<int>(sites_per_level[static_cast<std::size_t>(l)].size());
    }

    out.tape_id = tape->id();
    out.node = tape->record(
        out.size(),
        [taps = std::move(taps), sites_per_level, level_nodes, flow_node, scalars_node, slab_h, slab_w,
         level_channels, levels, h, w, px_count](const std::vector<double>& g, Tape& t) {
            const int total_levels = levels;
            for (std::size_t p = 0; p < px_count; ++p) {
                const int y1 = static_cast<int>(p) / w;
                const int x1 = static_cast<int>(p) % w;
                (void)y1;
                (void)x1;
                int ch = 0;
                double gu = 0.0, gv = 0.0;
                for (int l = 0; l < total_levels; ++l) {
                    const double inv = 1.0 / static_cast<double>(1 << l);
                    const int sw = slab_w[static_cast<std::size_t>(l)];
                    const std::size_t slab_off = p * static_cast<std::size_t>(slab_h[static_cast<std::size_t>(l)]) *
                                                 static_cast<std::size_t>(sw);
                    std::vector<double>* glevel =
                        level_nodes[static_cast<std::size_t>(l)] >= 0
                            ? &t.grad_buffer(level_nodes[static_cast<std::size_t>(l)])
                            : nullptr;
                    std::vector<double>* gscal = scalars_node >= 0 ? &t.grad_buffer(scalars_node) : nullptr;
                    const auto& sites = sites_per_level[static_cast<std::size_t>(l)];
                    for (int k = 0; k < level_channels[static_cast<std::size_t>(l)]; ++k, ++ch) {
                        const double gv_out = g[static_cast<std::size_t>(ch) * px_count + p];
                        if (gv_out == 0.0) continue;
                        const BilinearTap& tap = taps[static_cast<std::size_t>(ch) * px_count + p];
                        if (glevel != nullptr) {
                            auto& gl = *glevel;
                            gl[slab_off + static_cast<std::size_t>(tap.y0) * sw + tap.x0] +=
                                gv_out * (1.0 - tap.fy) * (1.0 - tap.fx);
                            gl[slab_off + static_cast<std::size_t>(tap.y0) * sw + tap.x1] +=
                                gv_out * (1.0 - tap.fy) * tap.fx;
                            gl[slab_off + static_cast<std::size_t>(tap.y1) * sw + tap.x0] +=
                                gv_out * tap.fy * (1.0 - tap.fx);
                            gl[slab_off + static_cast<std::size_t>(tap.y1) * sw + tap.x1] += gv_out * tap.fy * tap.fx;
                        }
                        if (flow_node >= 0) {
                            gu += gv_out * tap.dvalue_dx * inv;
                            gv += gv_out * tap.dvalue_dy * inv;
                        }
                        if (gscal != nullptr) {
                            const Site& s = sites[static_cast<std::size_t>(k)];
                            auto& gs = *gscal;
                            const int two_l = 2 * total_levels;
                            gs[static_cast<std::size_t>(2 * l)] += gv_out * tap.dvalue_dx * s.bx;
                            gs[static_cast<std::size_t>(2 * l + 1)] += gv_out * tap.dvalue_dy * s.by;
                            gs[static_cast<std::size_t>(two_l + 2 * l)] += gv_out * tap.dvalue_dx * sign_of(s.bx);
                            gs[static_cast<std::size_t>(two_l + 2 * l + 1)] += gv_out * tap.dvalue_dy * sign_of(s.by);
                        }
                    }
                }
                if (flow_node >= 0) {
                    auto& gf = t.grad_buffer(flow_node);
                    gf[p] += gu;
                    gf[px_count + p] += gv;
                    gu = gv = 0.0;
                }
            }
        });
    return out;
}

std::vector<Site> sites_from_grid(const LookupGrid& grid, const LookupGrid& base) {
    std::vector<Site> sites(grid.offsets.size());
    for (std::size_t k = 0; k < grid.offsets.size(); ++k) {
        sites[k] = Site{grid.offsets[k].first, grid.offsets[k].second, base.offsets[k].first, base.offsets[k].second};
    }
    return sites;
}

}  // namespace

LookupGrid make_vanilla_grid(int radius, GridNorm norm) {
    if (radius < 0) throw std::invalid_argument("lookup: radius must be >= 0");
    LookupGrid g;
    g.radius = radius;
    for (int dy = -radius; dy <= radius; ++dy) {
        const int span = norm == GridNorm::linf ? radius : radius - std::abs(dy);
        for (int dx = -span; dx <= span; ++dx) {
            g.offsets.emplace_back(static_cast<double>(dx), static_cast<double>(dy));
        }
    }
    return g;
}

LookupGrid alo_transform_grid(const LookupGrid& grid, double sx, double sy, double dx, double dy) {
    LookupGrid out;
    out.radius = grid.radius;
    out.offsets.reserve(grid.offsets.size());
    for (const auto& [i, j] : grid.offsets) {
        out.offsets.emplace_back(sx * i + sign_of(i) * dx, sy * j + sign_of(j) * dy);
    }
    return out;
}

AloScalars AloScalars::identity(int levels) {
    AloScalars s;
    s.sx.assign(static_cast<std::size_t>(levels), 1.0);
    s.sy.assign(static_cast<std::size_t>(levels), 1.0);
    s.dx.assign(static_cast<std::size_t>(levels), 0.0);
    s.dy.assign(static_cast<std::size_t>(levels), 0.0);
    return s;
}

AloScalars AloScalars::from_packed(const Tensor& packed) {
    if (packed.ndim() != 1 || packed.dim(0) % 4 != 0) {
        throw std::invalid_argument("alo: packed scalars must be [4L], got " + shape_str(packed.shape()));
    }
    const int levels = packed.dim(0) / 4;
    AloScalars s;
    for (int l = 0; l < levels; ++l) {
        s.sx.push_back(packed.at(2 * l));
        s.sy.push_back(packed.at(2 * l + 1));
        s.dx.push_back(packed.at(2 * levels + 2 * l));
        s.dy.push_back(packed.at(2 * levels + 2 * l + 1));
    }
    return s;
}

Tensor pack_identity_scalars(int levels) {
    Tensor packed({4 * levels});
    for (int i = 0; i < 2 * levels; ++i) packed.at(i) = 1.0;
    return packed;
}

AloHeadResult alo_scalar_head(const Tensor& hidden, const Tensor& context, const Model& model, Tape* tape) {
    if (hidden.ndim() != 3 || context.ndim() != 3 || hidden.dim(1) != context.dim(1) ||
        hidden.dim(2) != context.dim(2)) {
        throw std::invalid_argument("alo: hidden " + shape_str(hidden.shape()) + " and context " +
                                    shape_str(context.shape()) + " are not spatially aligned");
    }
    const auto& w = model.weights;
    const int two_l = 2 * model.config.levels;
    Tensor cat = concat({&hidden, &context}, tape);
    Tensor mix = relu(conv2d(cat, w.get("alo.mix.w"), w.get("alo.mix.b"), 1, 0, tape), tape);
    Tensor desc = reshape(global_max_min_pool(mix, tape), {2 * model.config.alo_head_dim, 1}, tape);

    Tensor raw_s = add(matmul(w.get("alo.fc_s.w"), desc, tape), reshape(w.get("alo.fc_s.b"), {two_l, 1}, tape), tape);
    Tensor raw_d = add(matmul(w.get("alo.fc_d.w"), desc, tape), reshape(w.get("alo.fc_d.b"), {two_l, 1}, tape), tape);
    Tensor s = add_scalar(scale(sigmoid(raw_s, tape), 2.0, tape), 1.0, tape);
    Tensor d = scale(sigmoid(raw_d, tape), 2.0, tape);
    Tensor s_flat = reshape(s, {two_l}, tape);
    Tensor d_flat = reshape(d, {two_l}, tape);

    AloHeadResult out;
    out.packed = concat({&s_flat, &d_flat}, tape);
    out.scalars = AloScalars::from_packed(out.packed);
    return out;
}

Tensor lookup_correlation(const CorrelationPyramid& pyr, const Tensor& flow, const std::vector<LookupGrid>& grids,
                          Tape* tape) {
    std::vector<std::vector<Site>> sites;
    sites.reserve(grids.size());
    for (const auto& g : grids) sites.push_back(sites_from_grid(g, g));
    return lookup_impl(pyr, flow, sites, nullptr, tape);
}

Tensor lookup_correlation_scaled(const CorrelationPyramid& pyr, const Tensor& flow, int radius, GridNorm norm,
                                 const Tensor& packed_scalars, Tape* tape) {
    const int levels = static_cast<int>(pyr.levels.size());
    if (packed_scalars.ndim() != 1 || packed_scalars.dim(0) != 4 * levels) {
        throw std::invalid_argument("lookup: packed scalars must be [" + std::to_string(4 * levels) + "], got " +
                                    shape_str(packed_scalars.shape()));
    }
    const LookupGrid base = make_vanilla_grid(radius, norm);
    const AloScalars sc = AloScalars::from_packed(packed_scalars);
    std::vector<std::vector<Site>> sites;
    sites.reserve(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
        LookupGrid gl = alo_transform_grid(base, sc.sx[static_cast<std::size_t>(l)], sc.sy[static_cast<std::size_t>(l)],
                                           sc.dx[static_cast<std::size_t>(l)], sc.dy[static_cast<std::size_t>(l)]);
        sites.push_back(sites_from_grid(gl, base));
    }
    return lookup_impl(pyr, flow, sites, &packed_scalars, tape);
}

double lookup_reach_px(int radius, int levels, double s, double d) {
    return (s * static_cast<double>(radius) + d) * static_cast<double>(1 << (levels - 1)) * 8.0;
}

}  // namespace efraft
