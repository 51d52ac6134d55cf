#include "natlas/clahe.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace natlas {

std::array<int, 3> effective_tiles(const Dims4& dims, const ClaheConfig& cfg) {
    const int extent = std::max(cfg.min_tile_extent, 1);
    const std::array<int, 3> d{dims.x, dims.y, dims.z};
    std::array<int, 3> out{};
    for (int a = 0; a < 3; ++a) out[a] = std::clamp(std::min(cfg.tiles[a], d[a] / extent), 1, d[a]);
    return out;
}

namespace {

struct TileMap {
    bool identity = false;
    std::vector<double> lut;

    double apply(double v, int bins) const {
        if (identity) return v;
        const int b = std::clamp(int(v * bins), 0, bins - 1);
        return lut[std::size_t(b)];
    }
};

TileMap build_map(const std::vector<double>& hist, double clip_limit) {
    const int bins = int(hist.size());
    int lo = -1, hi = -1;
    double total = 0;
    for (int b = 0; b < bins; ++b) {
        if (hist[std::size_t(b)] > 0) {
            if (lo < 0) lo = b;
            hi = b;
            total += hist[std::size_t(b)];
        }
    }
    TileMap m;
    if (lo < 0 || lo == hi) {
        m.identity = true;
        return m;
    }
    std::vector<double> h = hist;
    if (std::isfinite(clip_limit)) {
        const double limit = std::max(1.0, clip_limit * total / bins);
        double excess = 0;
        for (double& x : h) {
            if (x > limit) {
                excess += x - limit;
                x = limit;
            }
        }
        const double add = excess / bins;
        for (double& x : h) x += add;
    }
    std::vector<double> cdf(static_cast<std::size_t>(bins));
    double run = 0;
    for (int b = 0; b < bins; ++b) {
        run += h[std::size_t(b)];
        cdf[std::size_t(b)] = run;
    }
    const double c_lo = cdf[std::size_t(lo)];
    const double c_hi = cdf[std::size_t(hi)];
    m.lut.resize(std::size_t(bins));
    for (int b = 0; b < bins; ++b) m.lut[std::size_t(b)] = std::clamp((cdf[std::size_t(b)] - c_lo) / (c_hi - c_lo), 0.0, 1.0);
    return m;
}

struct Blend {
    int lo, hi;
    double frac;
};

Blend blend_axis(int i, int dim, int tiles) {
    const double c = (i + 0.5) * tiles / dim - 0.5;
    int lo = std::clamp(int(std::floor(c)), 0, tiles - 1);
    const int hi = std::min(lo + 1, tiles - 1);
    return {lo, hi, hi == lo ? 0.0 : std::clamp(c - lo, 0.0, 1.0)};
}

}  // namespace

Volume4D clahe(const Volume4D& v, const ClaheConfig& cfg) {
    const int bins = std::max(cfg.bins, 2);
    const auto nt = effective_tiles(v.dims, cfg);
    const std::array<int, 3> d{v.dims.x, v.dims.y, v.dims.z};
    auto tile_of = [&](int a, int i) { return std::min(int((long long)i * nt[a] / d[a]), nt[a] - 1); };

    Volume4D out(v.dims, v.spacing);
    const std::size_t ntiles = std::size_t(nt[0]) * nt[1] * nt[2];
    auto tile_index = [&](int a, int b, int c) { return std::size_t(a) + std::size_t(nt[0]) * (std::size_t(b) + std::size_t(nt[1]) * std::size_t(c)); };

    for (int t = 0; t < v.dims.t; ++t) {
        std::vector<std::vector<double>> hist(ntiles, std::vector<double>(std::size_t(bins), 0.0));
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const double x = v.at(i, j, k, t);
                    const int b = std::clamp(int(x * bins), 0, bins - 1);
                    hist[tile_index(tile_of(0, i), tile_of(1, j), tile_of(2, k))][std::size_t(b)] += 1;
                }
        std::vector<TileMap> maps;
        maps.reserve(ntiles);
        for (const auto& h : hist) maps.push_back(build_map(h, cfg.clip_limit));

        for (int k = 0; k < d[2]; ++k) {
            const auto bz = blend_axis(k, d[2], nt[2]);
            for (int j = 0; j < d[1]; ++j) {
                const auto by = blend_axis(j, d[1], nt[1]);
                for (int i = 0; i < d[0]; ++i) {
                    const auto bx = blend_axis(i, d[0], nt[0]);
                    const double x = v.at(i, j, k, t);
                    auto m = [&](int a, int b, int c) { return maps[tile_index(a, b, c)].apply(x, bins); };
                    const double c00 = m(bx.lo, by.lo, bz.lo) * (1 - bx.frac) + m(bx.hi, by.lo, bz.lo) * bx.frac;
                    const double c10 = m(bx.lo, by.hi, bz.lo) * (1 - bx.frac) + m(bx.hi, by.hi, bz.lo) * bx.frac;
                    const double c01 = m(bx.lo, by.lo, bz.hi) * (1 - bx.frac) + m(bx.hi, by.lo, bz.hi) * bx.frac;
                    const double c11 = m(bx.lo, by.hi, bz.hi) * (1 - bx.frac) + m(bx.hi, by.hi, bz.hi) * bx.frac;
                    const double c0 = c00 * (1 - by.frac) + c10 * by.frac;
                    const double c1 = c01 * (1 - by.frac) + c11 * by.frac;
                    out.at(i, j, k, t) = float(std::clamp(c0 * (1 - bz.frac) + c1 * bz.frac, 0.0, 1.0));
                }
            }
        }
    }
    return out;
}

}  // namespace natlas
