// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failed criteria, or 77 when the only failures are ones listed
// with --unattainable.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <unistd.h>

#include "natlas/config.hpp"
#include "natlas/deformation.hpp"
#include "natlas/evaluate.hpp"
#include "natlas/fields.hpp"
#include "natlas/losses.hpp"
#include "natlas/phantom.hpp"
#include "natlas/trainer.hpp"
#include "natlas/volume_io.hpp"

using namespace natlas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int worker_threads() { return std::max(1, int(std::thread::hardware_concurrency())); }

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = fs::temp_directory_path() / ("natlas_accept_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

Volume4D random_volume(Dims4 d, Rng& rng) {
    Volume4D v(d);
    for (auto& x : v.data) x = float(rng.uniform());
    return v;
}

// Sum of low-frequency sinusoids; every component is bounded by `amplitude`.
VectorFn bandlimited_field(Rng& rng, double amplitude, int waves = 4) {
    struct Wave {
        Vec3 k, a;
        double phase;
    };
    std::vector<Wave> ws;
    for (int w = 0; w < waves; ++w) {
        Wave x;
        for (std::size_t i = 0; i < 3; ++i) {
            x.k[i] = 2 * std::numbers::pi * rng.uniform(0.2, 1.5);
            x.a[i] = rng.uniform(-1, 1) * amplitude / waves;
        }
        x.phase = rng.uniform(0, 2 * std::numbers::pi);
        ws.push_back(x);
    }
    return [ws](const Vec3& p) {
        Vec3 v{};
        for (const auto& w : ws) v += std::sin(dot(w.k, p) + w.phase) * w.a;
        return v;
    };
}

// Reduced model and batch sizes used for the phantom runs.
RunConfig phantom_run_config() {
    RunConfig c;
    c.model.hidden_width = 32;
    c.model.hidden_layers = 1;
    c.model.decoder_hidden_width = 32;
    c.model.velocity_grid.levels = 6;
    c.model.velocity_grid.table_size_log2 = 13;
    c.model.static_grid.levels = 8;
    c.model.static_grid.table_size_log2 = 14;
    c.model.intensity_grid.levels = 6;
    c.model.intensity_grid.table_size_log2 = 13;
    c.train.spatial_batch = 256;
    c.train.temporal_batch = 4;
    c.train.reg_points = 128;
    c.train.iterations = 3000;
    return c;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_integrity() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    const int cases = 120;
    int failed_cases = 0, entries = 0, kinks = 0;
    double worst = 0;
    for (int c = 0; c < cases; ++c) {
        ModelConfig cfg;
        for (auto* g : {&cfg.velocity_grid, &cfg.static_grid, &cfg.intensity_grid}) {
            g->levels = 2 + int(rng.below(3));
            g->table_size_log2 = 6 + int(rng.below(5));
            g->base_resolution = 2 + int(rng.below(4));
        }
        cfg.latent_dim = 4 + int(rng.below(5));
        cfg.hidden_width = 8 + int(rng.below(9));
        cfg.hidden_layers = 1 + int(rng.below(2));
        cfg.decoder_hidden_width = 8 + int(rng.below(9));
        cfg.use_svf = rng.below(4) != 0;
        cfg.use_intensity_field = rng.below(4) != 0;
        cfg.euler_steps = 2 + int(rng.below(5));

        FieldSet fs(cfg, rng.next());
        const double scale = rng.uniform(0.1, 0.5), vscale = rng.uniform(0.5, 3.0);
        for (std::size_t g = 0; g < kParameterGroups; ++g)
            for (double& p : fs.parameter_groups()[g]) p = rng.uniform(-scale, scale) * (g < 2 ? vscale : 1.0);

        const int frames = 2 + int(rng.below(3));
        const Volume4D volume = random_volume({8, 8, 8, frames}, rng);
        Batch batch;
        const int points = 2 + int(rng.below(4));
        for (int s = 0; s < points; ++s) batch.points.push_back({rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)});
        std::vector<int> all(static_cast<std::size_t>(frames));
        std::iota(all.begin(), all.end(), 0);
        for (std::size_t i = all.size() - 1; i > 0; --i) std::swap(all[i], all[rng.below(i + 1)]);
        batch.frames.assign(all.begin(), all.begin() + 1 + std::ptrdiff_t(rng.below(std::uint64_t(frames))));

        CentralityState centrality(4, 0.9);
        for (Vec3& m : centrality.mean) m = {rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01), rng.uniform(-0.01, 0.01)};
        LossOptions opt;
        opt.reg_points = points;
        const LossWeights w;

        FieldGradients grads = fs.make_gradients();
        evaluate_loss(fs, volume, batch, w, centrality, opt, &grads);
        auto total = [&] { return evaluate_loss(fs, volume, batch, w, centrality, opt, nullptr).loss.total; };

        bool ok = true;
        for (std::size_t g = 0; g < kParameterGroups; ++g) {
            const auto& gv = grads.groups[g];
            double gmax = 0;
            for (double x : gv) gmax = std::max(gmax, std::abs(x));
            if (gmax == 0) {
                // Everything downstream is clamped or dead; the loss must then be flat in this group too.
                for (int n = 0; n < 3 && !gv.empty(); ++n) {
                    double& p = fs.parameter_groups()[g][rng.below(gv.size())];
                    const double saved = p, h = 1e-6;
                    p = saved + h;
                    const double up = total();
                    p = saved - h;
                    const double dn = total();
                    p = saved;
                    ++entries;
                    if (up != dn) ok = false;
                }
                continue;
            }
            // Largest entries, every third, to stay away from abs/hinge/ReLU kinks.
            std::vector<std::size_t> idx(gv.size());
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(gv[a]) > std::abs(gv[b]); });
            for (std::size_t n = 0, checked = 0; n < idx.size() && checked < 3; n += 3, ++checked) {
                const std::size_t k = idx[n];
                if (std::abs(gv[k]) < 1e-6 * gmax) break;
                double& p = fs.parameter_groups()[g][k];
                const double saved = p, h = 1e-6;
                const double mid = total();
                p = saved + h;
                const double up = total();
                p = saved - h;
                const double dn = total();
                p = saved;
                // Rounding noise of the difference quotient.
                const double noise = 4 * std::numeric_limits<double>::epsilon() * std::max(std::abs(mid), 1.0) / h;
                const double fwd = (up - mid) / h, bwd = (mid - dn) / h;
                if (std::abs(fwd - bwd) > 1e-2 * std::max(std::abs(fwd), std::abs(bwd)) + 2 * noise) {
                    ++kinks;  // abs / hinge / ReLU / clamp switches inside [p - h, p + h]
                    continue;
                }
                const double fd = (up - dn) / (2 * h);
                const double err = std::abs(gv[k] - fd);
                const double rel = err / std::max({std::abs(gv[k]), std::abs(fd), 1e-300});
                ++entries;
                if (err > noise) worst = std::max(worst, rel);
                if (err > 1e-5 * std::max(std::abs(gv[k]), std::abs(fd)) + noise) ok = false;
            }
        }
        if (!ok) ++failed_cases;
    }
    const double secs = seconds_since(t0);
    return {failed_cases == 0 && kinks * 20 < entries && secs < 120,
            fmt("%d cases, %d entries (%d skipped at kinks), worst rel err %.2e (< 1e-5), %d failing cases, %.1f s (< 120 s)", cases,
                entries, kinks, worst, failed_cases, secs)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome diffeomorphism_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const Dims4 d{20, 20, 20, 1};
    const double voxel = voxel_size_world(d.x);
    Rng rng(202);
    const int fields = 50;
    double worst_fold = 0, worst_inverse = 0, worst_agree = 1;
    for (int f = 0; f < fields; ++f) {
        const VectorFn v = bandlimited_field(rng, rng.uniform(0.01, 0.05));
        const DenseDeformation fwd = integrate_grid(v, d, 6), inv = inverse_grid(v, d, 6);
        worst_fold = std::max(worst_fold, folding_ratio(fwd));
        const DenseDeformation round = compose(fwd, inv);
        for (const Vec3& u : round.disp) worst_inverse = std::max(worst_inverse, norm(u) / voxel);
        std::size_t good = 0, total = 0;
        for (int k = 1; k < d.z - 1; ++k)
            for (int j = 1; j < d.y - 1; ++j)
                for (int i = 1; i < d.x - 1; ++i) {
                    const Vec3 ref = integrate_pointwise(v, voxel_center(d, i, j, k), 64);
                    good += norm(fwd.at(i, j, k) - ref) < 0.25 * voxel;
                    ++total;
                }
        worst_agree = std::min(worst_agree, double(good) / double(total));
    }
    const double secs = seconds_since(t0);
    return {worst_fold == 0 && worst_inverse < 0.5 && worst_agree >= 0.99 && secs < 120,
            fmt("%d fields: max fold ratio %g (= 0), max |phi o phi^-1 - id| %.3f voxel (< 0.5), min agreement %.4f (>= 0.99), "
                "%.1f s (< 120 s)",
                fields, worst_fold, worst_inverse, worst_agree, secs)};
}

// ---- 3 ---------------------------------------------------------------------

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

Vec3 mat_vec(const Mat3& a, const Vec3& x) { return {dot(a[0], x), dot(a[1], x), dot(a[2], x)}; }

Mat3 expm(const Mat3& a) {
    Mat3 out = identity3(), term = identity3();
    for (int n = 1; n < 30; ++n) {
        term = mat_mul(term, a);
        for (auto& row : term)
            for (double& x : row) x /= n;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) out[i][j] += term[i][j];
    }
    return out;
}

Outcome integrator_order() {
    Rng rng(303);
    const Vec3 c{0.5, 0.5, 0.5};
    double lo = 1e9, hi = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Mat3 A{};
        for (auto& row : A)
            for (double& x : row) x = rng.uniform(-0.3, 0.3);
        const VectorFn v = [&](const Vec3& x) { return mat_vec(A, x - c); };
        const Vec3 x0{rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6)};
        const Vec3 exact = mat_vec(expm(A), x0 - c) - (x0 - c);
        double prev = -1;
        for (int k : {4, 8, 16, 32}) {
            const double err = norm(integrate_pointwise(v, x0, k) - exact);
            if (prev > 0) {
                lo = std::min(lo, prev / err);
                hi = std::max(hi, prev / err);
            }
            prev = err;
        }
    }
    return {lo >= 1.6 && hi <= 2.4, fmt("10 linear fields, K = 4..32: error ratio per doubling in [%.3f, %.3f] (2 +- 20%%)", lo, hi)};
}

// ---- 4 ---------------------------------------------------------------------

double lncc_oracle(const Volume4D& a, const Volume4D& b, int w) {
    const Dims4 d = a.dims;
    const int r = w / 2;
    double total = 0;
    int count = 0;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                std::vector<double> xa, xb;
                for (int kk = std::max(0, k - r); kk <= std::min(d.z - 1, k + r); ++kk)
                    for (int jj = std::max(0, j - r); jj <= std::min(d.y - 1, j + r); ++jj)
                        for (int ii = std::max(0, i - r); ii <= std::min(d.x - 1, i + r); ++ii) {
                            xa.push_back(a.at(ii, jj, kk));
                            xb.push_back(b.at(ii, jj, kk));
                        }
                const double n = double(xa.size());
                const double ma = std::accumulate(xa.begin(), xa.end(), 0.0) / n;
                const double mb = std::accumulate(xb.begin(), xb.end(), 0.0) / n;
                double sab = 0, saa = 0, sbb = 0;
                for (std::size_t q = 0; q < xa.size(); ++q) {
                    sab += (xa[q] - ma) * (xb[q] - mb);
                    saa += (xa[q] - ma) * (xa[q] - ma);
                    sbb += (xb[q] - mb) * (xb[q] - mb);
                }
                total += sab / (std::sqrt(saa * sbb) + 1e-8);
                ++count;
            }
    return total / count;
}

double det3(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Quadratic field with its analytic Jacobian; central differences are exact for it.
struct Quadratic {
    std::array<double, 12> q{};
    Vec3 operator()(const Vec3& x) const {
        return {q[0] * x[0] * x[0] + q[1] * x[1] * x[2] + q[2] * x[0] + q[3],
                q[4] * x[1] * x[1] + q[5] * x[0] * x[2] + q[6] * x[2] + q[7],
                q[8] * x[2] * x[2] + q[9] * x[0] * x[1] + q[10] * x[1] + q[11]};
    }
    Mat3 jacobian(const Vec3& x) const {
        Mat3 J = identity3();
        J[0][0] += 2 * q[0] * x[0] + q[2];
        J[0][1] += q[1] * x[2];
        J[0][2] += q[1] * x[1];
        J[1][0] += q[5] * x[2];
        J[1][1] += 2 * q[4] * x[1];
        J[1][2] += q[5] * x[0] + q[6];
        J[2][0] += q[9] * x[1];
        J[2][1] += q[9] * x[0] + q[10];
        J[2][2] += 2 * q[8] * x[2];
        return J;
    }
};

Outcome metric_oracles() {
    Rng rng(404);
    std::vector<std::string> failures;
    double lncc_err = 0, affine_err = 0, dice_err = 0, jac_err = 0, div_err = 0, dense_err = 0;
    int fold_mismatch = 0;
    double max_fold = 0;

    for (int trial = 0; trial < 5; ++trial) {
        const Dims4 d{9, 9, 9, 1};
        const Volume4D a = random_volume(d, rng), b = random_volume(d, rng);
        for (int w : {3, 5, 7}) lncc_err = std::max(lncc_err, std::abs(lncc(a, b, w) - lncc_oracle(a, b, w)));
        const double alpha = rng.uniform(0.2, 3.0), beta = rng.uniform(-1, 1);
        Volume4D c = a;
        for (float& x : c.data) x = float(alpha * x + beta);
        for (int w : {3, 5, 7}) affine_err = std::max(affine_err, std::abs(lncc(a, c, w) - 1.0));

        LabelVolume4D la(d), lb(d);
        for (auto& x : la.data) x = std::uint8_t(rng.below(4));
        for (auto& x : lb.data) x = std::uint8_t(rng.below(4));
        for (int label = 1; label < 4; ++label) {
            double inter = 0, na = 0, nb = 0;
            for (std::size_t v = 0; v < la.data.size(); ++v) {
                na += la.data[v] == label;
                nb += lb.data[v] == label;
                inter += la.data[v] == label && lb.data[v] == label;
            }
            dice_err = std::max(dice_err, std::abs(*dice(la, lb, label) - 2 * inter / (na + nb)));
        }

        Quadratic f;
        for (double& x : f.q) x = rng.uniform(-0.5, 0.5);
        const VectorFn u = [&](const Vec3& x) { return f(x); };
        for (int n = 0; n < 20; ++n) {
            const Vec3 x{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
            const Vec3 h{0.05, 0.07, 0.03};
            const Mat3 J = jacobian(u, x, h), exact = f.jacobian(x);
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 3; ++j) jac_err = std::max(jac_err, std::abs(J[i][j] - exact[i][j]));
            const double div_exact = exact[0][0] + exact[1][1] + exact[2][2] - 3;
            div_err = std::max(div_err, std::abs(divergence(u, x, h) - div_exact));
        }
        const DenseDeformation dense = sample_field(u, d);
        for (int k = 1; k < d.z - 1; ++k)
            for (int j = 1; j < d.y - 1; ++j)
                for (int i = 1; i < d.x - 1; ++i) {
                    const Mat3 J = jacobian_at(dense, i, j, k), exact = f.jacobian(voxel_center(d, i, j, k));
                    for (std::size_t r = 0; r < 3; ++r)
                        for (std::size_t s = 0; s < 3; ++s) dense_err = std::max(dense_err, std::abs(J[r][s] - exact[r][s]));
                }

        // Folding: rough random displacement, counted by hand over interior voxels.
        DenseDeformation rough(d);
        const double amp = rng.uniform(0.1, 0.3);
        for (Vec3& x : rough.disp) x = {rng.uniform(-amp, amp), rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
        const double hvox = 2 * voxel_size_world(d.x);
        int folded = 0, total = 0;
        for (int k = 1; k < d.z - 1; ++k)
            for (int j = 1; j < d.y - 1; ++j)
                for (int i = 1; i < d.x - 1; ++i) {
                    Mat3 J = identity3();
                    const std::array<Vec3, 3> diff{rough.at(i + 1, j, k) - rough.at(i - 1, j, k), rough.at(i, j + 1, k) - rough.at(i, j - 1, k),
                                                   rough.at(i, j, k + 1) - rough.at(i, j, k - 1)};
                    for (std::size_t col = 0; col < 3; ++col)
                        for (std::size_t row = 0; row < 3; ++row) J[row][col] += diff[col][row] / hvox;
                    folded += det3(J) <= 0;
                    ++total;
                }
        const double oracle = double(folded) / double(total);
        max_fold = std::max(max_fold, oracle);
        if (folding_ratio(rough) != oracle) ++fold_mismatch;
    }
    const bool ok = lncc_err < 1e-6 && affine_err < 1e-6 && dice_err < 1e-12 && jac_err < 1e-6 && div_err < 1e-6 && dense_err < 1e-6 &&
                    fold_mismatch == 0 && max_fold > 0;
    return {ok, fmt("max errors: lncc %.1e, lncc affine %.1e, dice %.1e, jacobian %.1e, divergence %.1e, grid jacobian %.1e "
                    "(all < 1e-6); folding ratio mismatches %d (0, max ratio %.3f)",
                    lncc_err, affine_err, dice_err, jac_err, div_err, dense_err, fold_mismatch, max_fold)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome phantom_stabilization() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = phantom_run_config();
    cfg.train.threads = worker_threads();
    const Phantom ph = synth_sequence(cfg.phantom, 0);
    const TrainResult result = train(ph.image, cfg.model, cfg.train);
    const EvalReport report = evaluate_pairs(result.fields, ph.image, &ph.labels, cfg.eval, cfg.train.threads);
    const double motion = motion_recovery_error(result.fields, ph.motion, ph.labels, cfg.train.threads);
    const double gain = report.lncc_mean - report.lncc_unaligned_mean;
    const auto& def = report.deformation;
    const double secs = seconds_since(t0);
    const bool ok = gain >= 0.1 && def.fold_ratio <= 0.005 && def.det_j >= 0.95 && def.det_j <= 1.05 && motion < 1.0;
    return {ok, fmt("%d iterations: lncc %.3f vs unaligned %.3f (gain %.3f >= 0.1), fold ratio %.4f (<= 0.005), mean det J %.4f "
                    "(in [0.95, 1.05]), motion error %.3f voxel (< 1), %.0f s",
                    cfg.train.iterations, report.lncc_mean, report.lncc_unaligned_mean, gain, def.fold_ratio, def.det_j, motion, secs)};
}

// ---- 6 ---------------------------------------------------------------------

Outcome identity_at_init() {
    const ModelConfig model;
    const FieldSet fs(model, 7);
    const int T = 8;
    double worst = 0;
    for (int t = 0; t < T; ++t)
        for (int k = 0; k < 9; ++k)
            for (int j = 0; j < 9; ++j)
                for (int i = 0; i < 9; ++i) {
                    const Vec3 x{i / 8.0, j / 8.0, k / 8.0};
                    worst = std::max(worst, norm(fs.displacement(x, time_to_world(t, T))));
                }

    PhantomConfig pc;
    pc.dims = {16, 16, 16, T};
    pc.radii = {4.5, 3.75, 3.25};
    pc.amplitude = 1.0;
    const Phantom ph = synth_sequence(pc, 3);
    EvalConfig ec;
    ec.n_pairs = 12;
    const EvalReport report = evaluate_pairs(fs, ph.image, &ph.labels, ec);
    double diff = 0;
    for (const auto& p : report.per_pair) {
        const Volume4D src = ph.image.frame(p.source), dst = ph.image.frame(p.target);
        const LabelVolume4D ls = ph.labels.frame(p.source), ld = ph.labels.frame(p.target);
        std::vector<std::uint8_t> mask(ld.data.size());
        for (std::size_t v = 0; v < mask.size(); ++v) mask[v] = ld.data[v] > 0;
        diff = std::max(diff, std::abs(p.lncc - lncc(src, dst, ec.window, mask)));
        diff = std::max(diff, std::abs(*p.wdice - weighted_dice(ls, ld).weighted));
    }
    return {worst < 1e-2 && diff < 1e-9,
            fmt("max |phi(x) - x| %.2e over 9^3 x %d (< 1e-2); max |evaluate - unaligned| %.2e over %zu pairs (< 1e-9)", worst, T, diff,
                report.per_pair.size())};
}

// ---- 7 ---------------------------------------------------------------------

Outcome svf_ablation() {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = phantom_run_config();
    cfg.train.iterations = 1000;
    cfg.train.threads = worker_threads();
    const Phantom ph = synth_sequence(cfg.phantom, 0);
    const Dims4 grid{ph.image.dims.x, ph.image.dims.y, ph.image.dims.z, 1};
    bool ok = true;
    std::string detail = fmt("%d iterations, fold ratio no-SVF vs SVF:", cfg.train.iterations);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        double fold[2];
        for (int svf = 0; svf < 2; ++svf) {
            ModelConfig m = cfg.model;
            m.use_svf = svf == 1;
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            const TrainResult r = train(ph.image, m, tc);
            fold[svf] = deformation_stats(r.fields, grid, ph.image.dims.t, tc.threads).fold_ratio;
        }
        ok = ok && fold[0] > fold[1];
        detail += fmt(" seed %d %.5f vs %.5f;", int(seed), fold[0], fold[1]);
    }
    detail += fmt(" %.0f s", seconds_since(t0));
    return {ok, detail};
}

// ---- 8 ---------------------------------------------------------------------

bool same_parameters(const FieldSet& a, const FieldSet& b) {
    for (std::size_t g = 0; g < kParameterGroups; ++g) {
        const auto pa = a.parameter_groups()[g], pb = b.parameter_groups()[g];
        if (!std::equal(pa.begin(), pa.end(), pb.begin(), pb.end())) return false;
    }
    return true;
}

Outcome determinism_and_resume() {
    RunConfig cfg = phantom_run_config();
    cfg.phantom.dims = {16, 16, 16, 4};
    cfg.phantom.radii = {4.5, 3.75, 3.25};
    cfg.phantom.amplitude = 1.0;
    cfg.train.iterations = 100;
    cfg.train.threads = 1;
    cfg.train.seed = 5;
    const Phantom ph = synth_sequence(cfg.phantom, 1);

    const TrainResult a = train(ph.image, cfg.model, cfg.train), b = train(ph.image, cfg.model, cfg.train);
    const bool repeat = same_parameters(a.fields, b.fields);

    TempDir dir("resume");
    TrainConfig half = cfg.train;
    half.stop_after = 50;
    TrainState state = init_training(ph.image, cfg.model, half);
    run_training(state, ph.image);
    save_checkpoint(state, dir.path() / "half.natc");
    TrainState resumed = load_checkpoint(dir.path() / "half.natc");
    resumed.train.stop_after = -1;
    run_training(resumed, ph.image);
    const bool resume = resumed.iteration == 100 && same_parameters(resumed.fields, a.fields);
    return {repeat && resume, fmt("repeat run bit-identical: %s; train(100) == train(50) + resume(50): %s", repeat ? "yes" : "no",
                                  resume ? "yes" : "no")};
}

// ---- 9 ---------------------------------------------------------------------

Outcome end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    TempDir dir("cli");
    const fs::path d = dir.path();
    RunConfig cfg = phantom_run_config();
    cfg.train.iterations = 500;
    save_run_config(cfg, d / "config.json");
    const std::string bin = NATLAS_CLI_PATH;
    const std::string common = bin + " --config " + (d / "config.json").string() + " ";
    const std::vector<std::pair<std::string, std::string>> steps{
        {"synth", "synth -o " + (d / "ph").string()},
        {"preprocess", "preprocess -i " + (d / "ph" / "image.raw").string() + " -o " + (d / "eq.raw").string()},
        {"train", "train -d " + (d / "eq.raw").string() + " -o " + (d / "run").string() + " --progress-interval 0"},
        {"infer", "infer -c " + (d / "run" / "checkpoint.natc").string() + " -o " + (d / "atlas.raw").string()},
        {"warp", "warp -c " + (d / "run" / "checkpoint.natc").string() + " -d " + (d / "eq.raw").string() + " -o " +
                     (d / "warped.raw").string()},
        {"evaluate", "evaluate -c " + (d / "run" / "checkpoint.natc").string() + " -d " + (d / "eq.raw").string() + " -l " +
                         (d / "ph" / "labels.raw").string() + " -o " + (d / "report.json").string()},
    };
    for (const auto& [name, args] : steps) {
        const int status = std::system((common + args + " 2> " + (d / "stderr.txt").string()).c_str());
        if (status != 0) {
            std::ifstream in(d / "stderr.txt");
            std::stringstream ss;
            ss << in.rdbuf();
            return {false, name + " exited with status " + std::to_string(status) + ": " + ss.str()};
        }
    }
    std::vector<std::string> problems;
    try {
        std::ifstream in(d / "report.json");
        problems = validate_report(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
        problems.push_back(e.what());
    }
    const double secs = seconds_since(t0);
    return {problems.empty() && secs < 300,
            fmt("synth, preprocess, train (500 iterations), infer, warp, evaluate exit 0; report schema %s; %.0f s (< 300 s)",
                problems.empty() ? "valid" : problems.front().c_str(), secs)};
}

const std::vector<std::pair<const char*, std::function<Outcome()>>> kCriteria{
    {"gradient integrity", gradient_integrity},
    {"diffeomorphism suite", diffeomorphism_suite},
    {"integrator order", integrator_order},
    {"metric oracles", metric_oracles},
    {"phantom stabilization", phantom_stabilization},
    {"identity at init", identity_at_init},
    {"SVF ablation", svf_ablation},
    {"determinism and resume", determinism_and_resume},
    {"end-to-end CLI", end_to_end},
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"natlas acceptance criteria"};
    int only = 0;
    std::vector<int> unattainable;
    app.add_option("--criterion", only, "Run one criterion (1-9); default all")->check(CLI::Range(0, int(kCriteria.size())));
    app.add_option("--unattainable", unattainable, "Criteria known not to be reachable at this scale; a FAIL there exits 77");
    CLI11_PARSE(app, argc, argv);

    int failed = 0, expected = 0;
    for (std::size_t i = 0; i < kCriteria.size(); ++i) {
        if (only != 0 && int(i) + 1 != only) continue;
        Outcome o;
        try {
            o = kCriteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const bool known = std::count(unattainable.begin(), unattainable.end(), int(i) + 1) > 0;
        if (!o.pass) ++(known ? expected : failed);
        std::cout << "criterion " << i + 1 << " (" << kCriteria[i].first << "): " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
                  << (!o.pass && known ? "  [known unattainable]" : "") << std::endl;
    }
    if (failed == 0 && expected > 0) return 77;
    return failed;
}
