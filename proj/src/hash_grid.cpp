#include "natlas/hash_grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "natlas/types.hpp"

namespace natlas {

void HashGridConfig::validate() const {
    if (levels < 1) throw ConfigError("hash grid levels must be >= 1");
    if (features_per_level < 1) throw ConfigError("hash grid features_per_level must be >= 1");
    if (table_size_log2 < 1 || table_size_log2 > 30) throw ConfigError("hash grid table_size_log2 must be in 1..30");
    if (base_resolution < 1) throw ConfigError("hash grid base_resolution must be >= 1");
    if (!(growth_factor > 1.0)) throw ConfigError("hash grid growth_factor must be > 1");
    if (input_dim != 3 && input_dim != 4) throw ConfigError("hash grid input_dim must be 3 or 4");
    if (!(init_scale >= 0.0)) throw ConfigError("hash grid init_scale must be >= 0");
}

int level_resolution(const HashGridConfig& cfg, int level) {
    return int(std::floor(cfg.base_resolution * std::pow(cfg.growth_factor, level)));
}

std::uint32_t hash_index(std::span<const std::uint32_t> cell, int table_size_log2) {
    std::uint32_t h = 0;
    for (std::size_t i = 0; i < cell.size(); ++i) h ^= cell[i] * kHashPrimes[i];
    return h & ((std::uint32_t(1) << table_size_log2) - 1);
}

HashGrid::HashGrid(const HashGridConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    for (int l = 0; l < cfg_.levels; ++l) {
        resolution_.push_back(level_resolution(cfg_, l));
        const double vertices = std::pow(double(resolution_.back() + 1), cfg_.input_dim);
        dense_.push_back(vertices <= double(cfg_.table_size()));
    }
    params_.resize(cfg_.parameter_count());
    for (double& p : params_) p = rng.uniform(-cfg_.init_scale, cfg_.init_scale);
}

bool HashGrid::dense_level(int level) const { return dense_[std::size_t(level)] != 0; }

std::uint32_t HashGrid::slot(int level, std::span<const std::uint32_t> cell) const {
    if (dense_level(level)) {
        const std::uint32_t side = std::uint32_t(resolution_[std::size_t(level)] + 1);
        std::uint32_t idx = 0, stride = 1;
        for (std::uint32_t c : cell) {
            idx += c * stride;
            stride *= side;
        }
        return idx;
    }
    return hash_index(cell, cfg_.table_size_log2);
}

void HashGrid::encode(std::span<const double> p, EncodingTape& tape, std::span<double> out) const {
    const int d = cfg_.input_dim;
    const int corners = 1 << d;
    const int feats = cfg_.features_per_level;
    tape.dim = d;
    tape.levels = cfg_.levels;
    tape.slots.resize(std::size_t(cfg_.levels) * std::size_t(corners));
    tape.weights.resize(tape.slots.size());
    tape.frac.resize(std::size_t(cfg_.levels) * std::size_t(d));

    std::array<double, kMaxGridDim> pc{};
    for (int i = 0; i < d; ++i) {
        tape.inside[std::size_t(i)] = p[std::size_t(i)] >= 0.0 && p[std::size_t(i)] <= 1.0;
        pc[std::size_t(i)] = std::clamp(p[std::size_t(i)], 0.0, 1.0);
    }

    constexpr int kMaxCorners = 1 << kMaxGridDim;
    std::array<double, kMaxCorners> w{};
    std::array<std::uint32_t, kMaxCorners> key{};
    for (int l = 0; l < cfg_.levels; ++l) {
        const int res = resolution_[std::size_t(l)];
        const bool dense = dense_[std::size_t(l)] != 0;
        const std::uint32_t side = std::uint32_t(res + 1);
        double* frac = tape.frac.data() + std::size_t(l) * std::size_t(d);
        // Corner weights and slot keys built one axis at a time: corner c uses
        // the upper vertex along axis i iff bit i of c is set.
        w[0] = 1.0;
        key[0] = 0;
        std::uint32_t stride = 1;
        for (int i = 0; i < d; ++i) {
            const double pos = pc[std::size_t(i)] * res;
            const int c = std::min(int(std::floor(pos)), res - 1);
            const double f = pos - c;
            frac[i] = f;
            const std::uint32_t lo = std::uint32_t(c), hi = lo + 1u;
            const std::uint32_t klo = dense ? lo * stride : lo * kHashPrimes[std::size_t(i)];
            const std::uint32_t khi = dense ? hi * stride : hi * kHashPrimes[std::size_t(i)];
            stride *= side;
            const int half = 1 << i;
            for (int j = 0; j < half; ++j) {
                w[std::size_t(j + half)] = w[std::size_t(j)] * f;
                w[std::size_t(j)] *= 1.0 - f;
                key[std::size_t(j + half)] = dense ? key[std::size_t(j)] + khi : key[std::size_t(j)] ^ khi;
                key[std::size_t(j)] = dense ? key[std::size_t(j)] + klo : key[std::size_t(j)] ^ klo;
            }
        }
        const std::uint32_t mask = std::uint32_t(cfg_.table_size() - 1);
        const std::size_t level_base = std::size_t(l) * cfg_.table_size();
        double* o = out.data() + std::size_t(l) * std::size_t(feats);
        for (int f = 0; f < feats; ++f) o[f] = 0.0;
        for (int c = 0; c < corners; ++c) {
            const std::uint32_t row = std::uint32_t(level_base) + (dense ? key[std::size_t(c)] : key[std::size_t(c)] & mask);
            const std::size_t k = std::size_t(l) * std::size_t(corners) + std::size_t(c);
            tape.slots[k] = row;
            tape.weights[k] = w[std::size_t(c)];
            const double* feat = params_.data() + std::size_t(row) * std::size_t(feats);
            for (int f = 0; f < feats; ++f) o[f] += w[std::size_t(c)] * feat[f];
        }
    }
}

void HashGrid::encode(std::span<const double> p, std::span<double> out) const {
    thread_local EncodingTape tape;
    encode(p, tape, out);
}

void HashGrid::backward(const EncodingTape& tape, std::span<const double> dout, std::span<double> grad_params,
                        std::span<double> dp) const {
    const int d = tape.dim;
    const int corners = 1 << d;
    const int feats = cfg_.features_per_level;
    if (!dp.empty()) std::fill(dp.begin(), dp.end(), 0.0);

    for (int l = 0; l < tape.levels; ++l) {
        const double* g = dout.data() + std::size_t(l) * std::size_t(feats);
        const double* frac = tape.frac.data() + std::size_t(l) * std::size_t(d);
        const double res = resolution_[std::size_t(l)];
        for (int c = 0; c < corners; ++c) {
            const std::size_t k = std::size_t(l) * std::size_t(corners) + std::size_t(c);
            const std::size_t row = tape.slots[k];
            if (!grad_params.empty()) {
                double* gp = grad_params.data() + row * std::size_t(feats);
                const double w = tape.weights[k];
                for (int f = 0; f < feats; ++f) gp[f] += w * g[f];
            }
            if (!dp.empty()) {
                const double* feat = params_.data() + row * std::size_t(feats);
                double proj = 0.0;
                for (int f = 0; f < feats; ++f) proj += feat[f] * g[f];
                if (proj == 0.0) continue;
                for (int i = 0; i < d; ++i) {
                    if (!tape.inside[std::size_t(i)]) continue;
                    double dw = ((c >> i) & 1) ? 1.0 : -1.0;
                    for (int j = 0; j < d; ++j) {
                        if (j == i) continue;
                        dw *= ((c >> j) & 1) ? frac[j] : 1.0 - frac[j];
                    }
                    dp[std::size_t(i)] += res * dw * proj;
                }
            }
        }
    }
}

}  // namespace natlas
