#include "natlas/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "natlas/parallel.hpp"

namespace natlas {

void LossWeights::validate() const {
    for (double w : {def_norm, div, centrality, jac, intensity, tv}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
    }
}

LossBreakdown total_loss(LossBreakdown t, const LossWeights& w) {
    t.total = t.rec + (w.def_norm * t.def_norm + w.div * t.div + w.centrality * t.centrality) + w.jac * t.jac +
              w.intensity * t.intensity + w.tv * t.tv;
    return t;
}

CentralityState::CentralityState(int bins, double decay_rate) : bins_per_axis(bins), decay(decay_rate) {
    validate();
    mean.assign(bin_count(), Vec3{0, 0, 0});
}

void CentralityState::validate() const {
    if (bins_per_axis < 1) throw ConfigError("centrality bins must be >= 1");
    if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("centrality decay must be in (0,1)");
}

std::size_t CentralityState::bin_of(const Vec3& x) const {
    std::size_t idx = 0, stride = 1;
    for (int a = 0; a < 3; ++a) {
        const int b = std::clamp(int(std::clamp(x[a], 0.0, 1.0) * bins_per_axis), 0, bins_per_axis - 1);
        idx += std::size_t(b) * stride;
        stride *= std::size_t(bins_per_axis);
    }
    return idx;
}

void apply(CentralityState& state, const CentralityUpdate& update) {
    if (state.mean.size() != state.bin_count()) state.mean.assign(state.bin_count(), Vec3{0, 0, 0});
    for (std::size_t i = 0; i < update.bins.size(); ++i) state.mean[update.bins[i]] = update.values[i];
}

double rec_loss(std::span<const double> observed, std::span<const double> predicted) {
    if (observed.empty()) throw DataError("rec_loss: empty batch");
    if (observed.size() != predicted.size()) throw DataError("rec_loss: size mismatch");
    double s = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) s += std::abs(observed[i] - predicted[i]);
    return s / double(observed.size());
}

double def_norm_loss(std::span<const Vec3> u) {
    if (u.empty()) return 0.0;
    double s = 0;
    for (const auto& v : u) s += norm(v);
    return s / double(u.size());
}

double div_loss(std::span<const double> divergence) {
    if (divergence.empty()) return 0.0;
    double s = 0;
    for (double d : divergence) s += d * d;
    return s / double(divergence.size());
}

double jac_loss(std::span<const double> det_j) {
    if (det_j.empty()) return 0.0;
    double s = 0;
    for (double d : det_j) s += std::max(0.0, -d);
    return s / double(det_j.size());
}

double int_loss(std::span<const std::vector<double>> v_intensity) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& v : v_intensity) {
        for (double x : v) s += std::abs(x);
        n += v.size();
    }
    return n ? s / double(n) : 0.0;
}

double tv_loss(std::span<const std::vector<double>> at_point, std::span<const std::vector<std::vector<double>>> shifted) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < at_point.size(); ++i) {
        for (const auto& f : shifted[i]) {
            for (std::size_t c = 0; c < f.size(); ++c) s += std::abs(f[c] - at_point[i][c]);
            n += f.size();
        }
    }
    return n ? s / double(n) : 0.0;
}

namespace {

// Penalty and per-point gradient d(penalty)/du_i.
double centrality_impl(std::span<const Vec3> x, std::span<const Vec3> u, int temporal, const CentralityState& state,
                       CentralityUpdate* update, std::vector<Vec3>* grad) {
    struct Acc {
        Vec3 sum{0, 0, 0};
        int count = 0;
    };
    std::map<std::size_t, Acc> bins;
    const std::size_t m = std::size_t(temporal);
    for (std::size_t s = 0; s < x.size(); ++s) {
        Vec3 mean{0, 0, 0};
        for (std::size_t k = 0; k < m; ++k) mean += u[s * m + k];
        auto& acc = bins[state.bin_of(x[s])];
        acc.sum += (1.0 / double(m)) * mean;
        acc.count += 1;
    }
    if (bins.empty()) return 0.0;
    const double beta = state.decay;
    double penalty = 0;
    std::map<std::size_t, Vec3> blended;
    for (const auto& [b, acc] : bins) {
        const Vec3 old = state.mean.size() > b ? state.mean[b] : Vec3{0, 0, 0};
        const Vec3 v = beta * old + ((1.0 - beta) / acc.count) * acc.sum;
        blended[b] = v;
        penalty += dot(v, v);
    }
    const double nb = double(bins.size());
    if (update) {
        update->bins.clear();
        update->values.clear();
        for (const auto& [b, v] : blended) {
            update->bins.push_back(b);
            update->values.push_back(v);
        }
    }
    if (grad) {
        grad->assign(u.size(), Vec3{0, 0, 0});
        for (std::size_t s = 0; s < x.size(); ++s) {
            const std::size_t b = state.bin_of(x[s]);
            const double coef = 2.0 * (1.0 - beta) / (nb * bins[b].count * double(m));
            for (std::size_t k = 0; k < m; ++k) (*grad)[s * m + k] = coef * blended[b];
        }
    }
    return penalty / nb;
}

// Euler chain through the registration field with everything needed for the
// reverse pass.
struct Chain {
    std::vector<FieldTape> tapes;
    std::vector<std::array<bool, 3>> pass;
    Vec3 u{0, 0, 0};
};

void chain_forward(const FieldSet& fs, const Vec3& x0, double t, Chain& c) {
    const auto& cfg = fs.config();
    std::array<double, 4> p{x0[0], x0[1], x0[2], t};
    Vec3 v{};
    if (!cfg.use_svf) {
        c.tapes.resize(1);
        fs.registration.forward(p, c.tapes[0], v);
        c.u = v;
        return;
    }
    const int K = cfg.euler_steps;
    c.tapes.resize(std::size_t(K));
    c.pass.resize(std::size_t(K));
    Vec3 x = x0;
    for (int k = 0; k < K; ++k) {
        p = {x[0], x[1], x[2], t};
        fs.registration.forward(p, c.tapes[std::size_t(k)], v);
        for (int a = 0; a < 3; ++a) {
            const double y = x[a] + v[a] / K;
            c.pass[std::size_t(k)][std::size_t(a)] = y >= 0.0 && y <= 1.0;
            x[a] = std::clamp(y, 0.0, 1.0);
        }
    }
    c.u = x - x0;
}

void chain_backward(const FieldSet& fs, const Chain& c, const Vec3& du, FieldGradients& g) {
    const auto& cfg = fs.config();
    if (!cfg.use_svf) {
        fs.registration.backward(c.tapes[0], du, g[0], g[1], {});
        return;
    }
    const int K = cfg.euler_steps;
    Vec3 grad = du;
    std::array<double, 4> dp{};
    for (int k = K - 1; k >= 0; --k) {
        Vec3 gy{};
        for (int a = 0; a < 3; ++a) gy[a] = c.pass[std::size_t(k)][std::size_t(a)] ? grad[std::size_t(a)] : 0.0;
        if (gy[0] == 0.0 && gy[1] == 0.0 && gy[2] == 0.0) {
            grad = gy;
            continue;
        }
        const Vec3 dv = (1.0 / K) * gy;
        if (k > 0) {
            fs.registration.backward(c.tapes[std::size_t(k)], dv, g[0], g[1], dp);
            grad = gy + Vec3{dp[0], dp[1], dp[2]};
        } else {
            fs.registration.backward(c.tapes[std::size_t(k)], dv, g[0], g[1], {});
        }
    }
}

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

struct Workspace {
    Chain main;
    std::array<Chain, 6> stencil;
    FieldTape static_tape, intensity_tape;
    MlpTape decoder_tape;
    std::array<FieldTape, 3> tv_static;
    std::array<FieldTape, 4> tv_intensity;
    std::vector<double> vs, vi, z, dz, gvs, gvi;
    std::array<std::vector<double>, 3> tv_vs;
    std::array<std::vector<double>, 4> tv_vi;
    std::array<std::vector<double>, 4> gtv;
};

struct Sums {
    double rec = 0, def_norm = 0, div = 0, jac = 0, intensity = 0, tv_static = 0, tv_intensity = 0, prediction = 0;
};

struct Context {
    const FieldSet& fs;
    const Volume4D& volume;
    const Batch& batch;
    const LossWeights& w;
    std::size_t n_points;
    std::size_t n_reg;
    Vec3 h;
    double h_t;
    int tv_time_axes;
    const std::vector<Vec3>* centrality_grad;
};

void evaluate_point(const Context& ctx, std::size_t i, Workspace& ws, Sums& sums, FieldGradients* grads) {
    const FieldSet& fs = ctx.fs;
    const auto& cfg = fs.config();
    const std::size_t m = ctx.batch.frames.size();
    const Vec3 x = ctx.batch.points[i / m];
    const int frame = ctx.batch.frames[i % m];
    const double t = time_to_world(frame, ctx.volume.dims.t);
    const double observed = trilinear_sample(ctx.volume, frame, x);
    const std::size_t n = std::size_t(cfg.latent_dim);
    const bool reg = i < ctx.n_reg;
    const double inv_n = 1.0 / double(ctx.n_points);
    const double inv_r = ctx.n_reg ? 1.0 / double(ctx.n_reg) : 0.0;

    chain_forward(fs, x, t, ws.main);
    const Vec3 u = ws.main.u;
    const Vec3 phi = x + u;
    const std::array<double, 4> q{phi[0], phi[1], phi[2], t};

    ws.vs.resize(n);
    ws.vi.assign(n, 0.0);
    fs.static_field.forward(phi, ws.static_tape, ws.vs);
    if (cfg.use_intensity_field) fs.intensity_field.forward(q, ws.intensity_tape, ws.vi);
    ws.z.resize(n);
    for (std::size_t c = 0; c < n; ++c) ws.z[c] = ws.vs[c] + ws.vi[c];
    double logit = 0;
    fs.decoder.forward(ws.z, ws.decoder_tape, std::span(&logit, 1));
    const double pred = sigmoid(logit);

    sums.rec += std::abs(observed - pred);
    sums.def_norm += norm(u);
    sums.prediction += pred;
    for (double v : ws.vi) sums.intensity += std::abs(v);

    Mat3 J = identity3();
    std::array<double, 3> span{0, 0, 0};
    double det = 1, div = 0;
    if (reg) {
        for (int a = 0; a < 3; ++a) {
            Vec3 hi = x, lo = x;
            hi[a] = std::min(x[a] + ctx.h[a], 1.0);
            lo[a] = std::max(x[a] - ctx.h[a], 0.0);
            span[a] = hi[a] - lo[a];
            chain_forward(fs, hi, t, ws.stencil[2 * a]);
            chain_forward(fs, lo, t, ws.stencil[2 * a + 1]);
            if (!(span[a] > 0)) continue;
            const Vec3 d = ws.stencil[2 * a].u - ws.stencil[2 * a + 1].u;
            for (int r = 0; r < 3; ++r) J[r][a] += d[r] / span[a];
        }
        det = determinant(J);
        div = trace(J) - 3.0;
        sums.jac += std::max(0.0, -det);
        sums.div += div * div;

        for (int a = 0; a < 3; ++a) {
            Vec3 p = phi;
            p[a] += ctx.h[a];
            ws.tv_vs[a].resize(n);
            fs.static_field.forward(p, ws.tv_static[a], ws.tv_vs[a]);
            for (std::size_t c = 0; c < n; ++c) sums.tv_static += std::abs(ws.tv_vs[a][c] - ws.vs[c]);
        }
        for (int a = 0; a < ctx.tv_time_axes; ++a) {
            std::array<double, 4> p = q;
            p[std::size_t(a)] += a < 3 ? ctx.h[a] : ctx.h_t;
            ws.tv_vi[a].resize(n);
            fs.intensity_field.forward(p, ws.tv_intensity[a], ws.tv_vi[a]);
            for (std::size_t c = 0; c < n; ++c) sums.tv_intensity += std::abs(ws.tv_vi[a][c] - ws.vi[c]);
        }
    }

    if (!grads) return;
    FieldGradients& g = *grads;
    const auto& w = ctx.w;

    // Decoder: L = |I - sigmoid(logit)| / N
    const double dpred = -sign(observed - pred) * inv_n;
    const double dlogit = dpred * pred * (1.0 - pred);
    ws.dz.assign(n, 0.0);
    fs.decoder.backward(ws.decoder_tape, std::span(&dlogit, 1), g[6], ws.dz);
    ws.gvs = ws.dz;
    ws.gvi = ws.dz;
    const double int_coef = w.intensity * inv_n / double(n);
    for (std::size_t c = 0; c < n; ++c) ws.gvi[c] += int_coef * sign(ws.vi[c]);

    Vec3 gphi{0, 0, 0};
    std::array<double, 4> dp{};
    if (reg && w.tv > 0) {
        const double cs = w.tv * inv_r / (3.0 * double(n));
        for (int a = 0; a < 3; ++a) {
            auto& gt = ws.gtv[std::size_t(a)];
            gt.resize(n);
            for (std::size_t c = 0; c < n; ++c) {
                const double s = sign(ws.tv_vs[a][c] - ws.vs[c]) * cs;
                gt[c] = s;
                ws.gvs[c] -= s;
            }
            fs.static_field.backward(ws.tv_static[a], gt, g[2], g[3], std::span(dp.data(), 3));
            gphi += Vec3{dp[0], dp[1], dp[2]};
        }
        if (ctx.tv_time_axes > 0) {
            const double ci = w.tv * inv_r / (double(ctx.tv_time_axes) * double(n));
            for (int a = 0; a < ctx.tv_time_axes; ++a) {
                auto& gt = ws.gtv[std::size_t(a)];
                gt.resize(n);
                for (std::size_t c = 0; c < n; ++c) {
                    const double s = sign(ws.tv_vi[a][c] - ws.vi[c]) * ci;
                    gt[c] = s;
                    ws.gvi[c] -= s;
                }
                fs.intensity_field.backward(ws.tv_intensity[a], gt, g[4], g[5], dp);
                gphi += Vec3{dp[0], dp[1], dp[2]};
            }
        }
    }
    fs.static_field.backward(ws.static_tape, ws.gvs, g[2], g[3], std::span(dp.data(), 3));
    gphi += Vec3{dp[0], dp[1], dp[2]};
    if (cfg.use_intensity_field) {
        fs.intensity_field.backward(ws.intensity_tape, ws.gvi, g[4], g[5], dp);
        gphi += Vec3{dp[0], dp[1], dp[2]};
    }

    Vec3 gu = gphi;
    const double un = norm(u);
    if (un > 0 && w.def_norm > 0) gu += (w.def_norm * inv_n / un) * u;
    if (ctx.centrality_grad && w.centrality > 0) gu += w.centrality * (*ctx.centrality_grad)[i];
    chain_backward(fs, ws.main, gu, g);

    if (reg) {
        const double ddet = det < 0 ? -w.jac * inv_r : 0.0;
        const double ddiv = 2.0 * div * w.div * inv_r;
        if (ddet == 0.0 && ddiv == 0.0) return;
        const Mat3 C = cofactor(J);
        for (int a = 0; a < 3; ++a) {
            if (!(span[a] > 0)) continue;
            Vec3 d{};
            for (int r = 0; r < 3; ++r) d[r] = (ddet * C[r][a] + (r == a ? ddiv : 0.0)) / span[a];
            chain_backward(fs, ws.stencil[2 * a], d, g);
            chain_backward(fs, ws.stencil[2 * a + 1], -1.0 * d, g);
        }
    }
}

}  // namespace

double centrality_loss(std::span<const Vec3> x, std::span<const Vec3> u, int temporal, const CentralityState& state,
                       CentralityUpdate* update) {
    return centrality_impl(x, u, temporal, state, update, nullptr);
}

LossResult evaluate_loss(const FieldSet& fs, const Volume4D& volume, const Batch& batch, const LossWeights& weights,
                         const CentralityState& centrality, const LossOptions& options, FieldGradients* grads) {
    const std::size_t n_points = batch.size();
    if (n_points == 0) throw DataError("evaluate_loss: empty batch");
    for (int f : batch.frames) {
        if (f < 0 || f >= volume.dims.t) throw DataError("evaluate_loss: frame index out of range");
    }
    const auto& cfg = fs.config();
    const std::size_t m = batch.frames.size();
    const std::size_t n_reg = options.reg_points <= 0 ? n_points : std::min(n_points, std::size_t(options.reg_points));
    const int threads = std::max(1, options.threads);
    const std::size_t workers = std::min<std::size_t>(std::size_t(threads), n_points);

    // Pass 1: displacements for the centrality estimate.
    std::vector<Vec3> u(n_points);
    run_chunks(n_points, threads, [&](std::size_t b, std::size_t e, std::size_t) {
        Chain c;
        for (std::size_t i = b; i < e; ++i) {
            const double t = time_to_world(batch.frames[i % m], volume.dims.t);
            chain_forward(fs, batch.points[i / m], t, c);
            u[i] = c.u;
        }
    });
    LossResult result;
    std::vector<Vec3> cgrad;
    result.loss.centrality =
        centrality_impl(batch.points, u, int(m), centrality, &result.centrality, grads ? &cgrad : nullptr);

    const int tv_time_axes = cfg.use_intensity_field ? (volume.dims.t > 1 ? 4 : 3) : 0;
    const Context ctx{fs,      volume, batch, weights, n_points, n_reg, voxel_step(volume.dims),
                      voxel_size_world(volume.dims.t), tv_time_axes, grads ? &cgrad : nullptr};

    std::vector<Sums> sums(workers);
    std::vector<FieldGradients> local;
    if (grads && workers > 1) {
        local.resize(workers);
        for (auto& l : local) l = fs.make_gradients();
    }
    run_chunks(n_points, threads, [&](std::size_t b, std::size_t e, std::size_t wi) {
        Workspace ws;
        FieldGradients* g = grads ? (workers > 1 ? &local[wi] : grads) : nullptr;
        for (std::size_t i = b; i < e; ++i) evaluate_point(ctx, i, ws, sums[wi], g);
    });
    if (grads && workers > 1) {
        for (const auto& l : local) grads->add(l);
    }

    Sums total;
    for (const auto& s : sums) {
        total.rec += s.rec;
        total.def_norm += s.def_norm;
        total.div += s.div;
        total.jac += s.jac;
        total.intensity += s.intensity;
        total.tv_static += s.tv_static;
        total.tv_intensity += s.tv_intensity;
        total.prediction += s.prediction;
    }
    const double n = double(n_points);
    const double r = double(n_reg);
    const double latent = double(cfg.latent_dim);
    result.loss.rec = total.rec / n;
    result.loss.def_norm = total.def_norm / n;
    result.loss.intensity = total.intensity / (n * latent);
    result.loss.div = total.div / r;
    result.loss.jac = total.jac / r;
    result.loss.tv = total.tv_static / (r * 3.0 * latent) +
                     (tv_time_axes > 0 ? total.tv_intensity / (r * tv_time_axes * latent) : 0.0);
    result.mean_prediction = total.prediction / n;
    result.loss = total_loss(result.loss, weights);
    return result;
}

}  // namespace natlas
