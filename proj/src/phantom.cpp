#include "natlas/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "natlas/random.hpp"

namespace natlas {

namespace {

struct Wave {
    Vec3 k;
    double phase;
};

std::vector<Wave> make_waves(Rng& rng, int count, double wavelength_lo, double wavelength_hi) {
    std::vector<Wave> waves;
    for (int i = 0; i < count; ++i) {
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        const double n = norm(dir);
        const double wl = rng.uniform(wavelength_lo, wavelength_hi);
        waves.push_back({(2.0 * std::numbers::pi / (wl * n)) * dir, rng.uniform(0, 2 * std::numbers::pi)});
    }
    return waves;
}

double texture(const std::vector<Wave>& waves, const Vec3& p) {
    double s = 0;
    for (const auto& w : waves) s += std::sin(dot(w.k, p) + w.phase);
    return s / std::sqrt(double(waves.size()) / 2.0);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double ellipsoid_radius(const Vec3& p, const Vec3& c, const Vec3& r) {
    const Vec3 q{(p[0] - c[0]) / r[0], (p[1] - c[1]) / r[1], (p[2] - c[2]) / r[2]};
    return norm(q);
}

}  // namespace

Phantom synth_sequence(const PhantomConfig& cfg, std::uint64_t seed) {
    const Dims4 d = cfg.dims;
    if (d.x < 2 || d.y < 2 || d.z < 2 || d.t < 1) throw ConfigError("phantom dims must be at least 2x2x2x1");
    if (cfg.amplitude < 0 || cfg.noise_sigma < 0) throw ConfigError("phantom amplitude and noise must be non-negative");
    for (double r : cfg.radii) {
        if (!(r > 0)) throw ConfigError("phantom radii must be positive");
    }

    const Vec3 center{(d.x - 1) / 2.0, (d.y - 1) / 2.0, (d.z - 1) / 2.0};
    const std::array<int, 3> dim{d.x, d.y, d.z};
    for (int a = 0; a < 3; ++a) {
        if (center[a] - cfg.radii[a] - cfg.amplitude < 0.0 || center[a] + cfg.radii[a] + cfg.amplitude > dim[a] - 1) {
            throw ConfigError("phantom motion amplitude pushes the object out of bounds");
        }
    }

    Rng rng(seed);
    const auto fine = make_waves(rng, 8, 0.8 * cfg.texture_wavelength, 1.25 * cfg.texture_wavelength);
    const auto coarse = make_waves(rng, 4, 12.0, 20.0);
    const Vec3 inner_center = center + Vec3{0.35 * cfg.radii[0], 0.1 * cfg.radii[1], 0.0};
    const Vec3 inner_radii = 0.4 * cfg.radii;
    const double mean_radius = (cfg.radii[0] + cfg.radii[1] + cfg.radii[2]) / 3.0;

    auto scene = [&](const Vec3& p) {
        const double body = logistic(-(ellipsoid_radius(p, center, cfg.radii) - 1.0) * mean_radius / 0.6);
        const double inner = logistic(-(ellipsoid_radius(p, inner_center, inner_radii) - 1.0) * 0.4 * mean_radius / 0.6);
        const double background = 0.12 + 0.04 * texture(coarse, p);
        const double tissue = 0.5 + cfg.texture_amplitude * texture(fine, p);
        const double v = background * (1 - body) + tissue * body;
        return v * (1 - inner) + 0.92 * inner;
    };
    auto label = [&](const Vec3& p) -> std::uint8_t {
        if (ellipsoid_radius(p, inner_center, inner_radii) < 1.0) return 2;
        if (ellipsoid_radius(p, center, cfg.radii) < 1.0) return 1;
        return 0;
    };

    // Translation window: 1 over the object and its motion envelope, cosine
    // taper to 0 over the following `taper` voxels.
    const double max_radius = std::max({cfg.radii[0], cfg.radii[1], cfg.radii[2]});
    const double inner_window = max_radius + cfg.amplitude + 1.0;
    const double taper = 4.0;
    auto window = [&](const Vec3& p) {
        const double r = norm(p - center);
        if (r <= inner_window) return 1.0;
        if (r >= inner_window + taper) return 0.0;
        const double s = (r - inner_window) / taper;
        const double c = std::cos(0.5 * std::numbers::pi * s);
        return c * c;
    };

    Phantom out;
    out.translations.resize(std::size_t(d.t));
    std::vector<double> magnitude(std::size_t(d.t));
    for (int t = 0; t < d.t; ++t) {
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        dir = (1.0 / norm(dir)) * dir;
        magnitude[std::size_t(t)] = rng.uniform(0.3, 1.0);
        out.translations[std::size_t(t)] = dir;
    }
    const double peak = *std::max_element(magnitude.begin(), magnitude.end());
    for (int t = 0; t < d.t; ++t) {
        const double m = magnitude[std::size_t(t)] == peak ? 1.0 : magnitude[std::size_t(t)];
        out.translations[std::size_t(t)] = (cfg.amplitude * m) * out.translations[std::size_t(t)];
    }

    out.image = Volume4D(d, cfg.spacing);
    out.labels = LabelVolume4D(d, cfg.spacing);
    out.motion = VectorSeries(d, cfg.spacing, Vec3{0, 0, 0});
    for (int t = 0; t < d.t; ++t) {
        const Vec3 c = out.translations[std::size_t(t)];
        for (int k = 0; k < d.z; ++k)
            for (int j = 0; j < d.y; ++j)
                for (int i = 0; i < d.x; ++i) {
                    const Vec3 x{double(i), double(j), double(k)};
                    const Vec3 g = (-window(x)) * c;
                    const Vec3 p = x + g;
                    double v = scene(p);
                    if (cfg.noise_sigma > 0) v += cfg.noise_sigma * rng.normal();
                    out.image.at(i, j, k, t) = float(std::clamp(v, 0.0, 1.0));
                    out.labels.at(i, j, k, t) = label(p);
                    out.motion.at(i, j, k, t) = g;
                }
    }
    normalize_minmax(out.image);
    return out;
}

}  // namespace natlas
