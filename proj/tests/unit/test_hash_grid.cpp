#include <doctest.h>

#include <unordered_set>

#include "helpers.hpp"
#include "natlas/hash_grid.hpp"

using namespace natlas;

namespace {

void randomize(HashGrid& g, Rng& rng, double scale = 1.0) {
    for (double& p : g.params()) p = rng.uniform(-scale, scale);
}

std::vector<double> random_point(Rng& rng, int d, double lo = 0.0, double hi = 1.0) {
    std::vector<double> p(static_cast<std::size_t>(d));
    for (double& x : p) x = rng.uniform(lo, hi);
    return p;
}

std::vector<double> encode(const HashGrid& g, std::span<const double> p) {
    std::vector<double> out(std::size_t(g.output_dim()));
    g.encode(p, out);
    return out;
}

double weighted_sum(const HashGrid& g, std::span<const double> p, std::span<const double> r) {
    const auto out = encode(g, p);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
}

// True when p is at least `margin` (in cell units) away from every cell face.
bool away_from_faces(const HashGridConfig& cfg, std::span<const double> p, double margin) {
    for (int l = 0; l < cfg.levels; ++l) {
        const int res = level_resolution(cfg, l);
        for (double x : p) {
            const double pos = x * res;
            if (std::abs(pos - std::round(pos)) < margin) return false;
        }
    }
    return true;
}

HashGridConfig random_config(Rng& rng) {
    HashGridConfig cfg;
    cfg.input_dim = rng.uniform() < 0.5 ? 3 : 4;
    cfg.levels = 1 + int(rng.below(4));
    cfg.features_per_level = 1 + int(rng.below(3));
    cfg.table_size_log2 = 4 + int(rng.below(9));
    cfg.base_resolution = 2 + int(rng.below(6));
    cfg.growth_factor = rng.uniform(1.2, 2.0);
    return cfg;
}

void check_param_gradient(const HashGrid& g0, Rng& rng) {
    HashGrid g = g0;
    const int d = g.input_dim();
    const auto p = random_point(rng, d);
    const auto r = random_point(rng, g.output_dim(), -1, 1);
    EncodingTape tape;
    std::vector<double> out(std::size_t(g.output_dim()));
    g.encode(p, tape, out);
    std::vector<double> grad(g.params().size(), 0.0);
    g.backward(tape, r, grad, {});
    for (int n = 0; n < 6; ++n) {
        const std::size_t k = tape.slots[rng.below(tape.slots.size())] * std::size_t(g.config().features_per_level) +
                              rng.below(std::size_t(g.config().features_per_level));
        const double h = 1e-5, saved = g.params()[k];
        g.params()[k] = saved + h;
        const double up = weighted_sum(g, p, r);
        g.params()[k] = saved - h;
        const double dn = weighted_sum(g, p, r);
        g.params()[k] = saved;
        const double fd = (up - dn) / (2 * h);
        CHECK(test::rel_err(grad[k], fd, 1e-8) < 1e-4);
    }
}

void check_coord_gradient(const HashGrid& g, Rng& rng) {
    const int d = g.input_dim();
    std::vector<double> p;
    do p = random_point(rng, d, 0.01, 0.99);
    while (!away_from_faces(g.config(), p, 1e-3));
    const auto r = random_point(rng, g.output_dim(), -1, 1);
    EncodingTape tape;
    std::vector<double> out(std::size_t(g.output_dim()));
    g.encode(p, tape, out);
    std::vector<double> dp(static_cast<std::size_t>(d));
    g.backward(tape, r, {}, dp);
    for (int i = 0; i < d; ++i) {
        const double h = 1e-7;
        auto q = p;
        q[std::size_t(i)] += h;
        const double up = weighted_sum(g, q, r);
        q[std::size_t(i)] -= 2 * h;
        const double dn = weighted_sum(g, q, r);
        const double fd = (up - dn) / (2 * h);
        CHECK(test::rel_err(dp[std::size_t(i)], fd, 1e-6) < 1e-4);
    }
}

}  // namespace

TEST_SUITE("hash_grid") {

TEST_CASE("level resolution is a floored geometric progression") {
    HashGridConfig cfg;
    CHECK(level_resolution(cfg, 0) == 4);
    CHECK(level_resolution(cfg, 1) == 6);
    CHECK(level_resolution(cfg, 2) == 9);
    cfg.growth_factor = 1.0 + 1e-9;
    for (int l = 0; l < cfg.levels; ++l) CHECK(level_resolution(cfg, l) == 4);
}

TEST_CASE("hash index examples") {
    const std::array<std::uint32_t, 3> zero{0, 0, 0}, x1{1, 0, 0};
    CHECK(hash_index(zero, 15) == 0);
    CHECK(hash_index(x1, 15) == 1);
    CHECK(hash_index(x1, 4) == 1);
    const std::array<std::uint32_t, 4> t1{0, 0, 0, 1};
    CHECK(hash_index(t1, 15) == (3674653429u & 0x7fffu));
}

TEST_CASE("lattice collision rate is close to an independent uniform hash") {
    const int log2 = 18;
    const std::uint32_t n = 64;
    const std::uint32_t m = 1u << log2;
    std::vector<char> used(m, 0);
    std::size_t occupied = 0;
    for (std::uint32_t z = 0; z < n; ++z)
        for (std::uint32_t y = 0; y < n; ++y)
            for (std::uint32_t x = 0; x < n; ++x) {
                const std::array<std::uint32_t, 3> c{x, y, z};
                char& u = used[hash_index(c, log2)];
                occupied += u == 0;
                u = 1;
            }
    const double cells = double(n) * n * n;
    const double lattice_rate = 1.0 - double(occupied) / cells;

    Rng rng(17);
    std::fill(used.begin(), used.end(), 0);
    std::size_t sim_occupied = 0;
    for (std::size_t i = 0; i < std::size_t(cells); ++i) {
        char& u = used[rng.below(m)];
        sim_occupied += u == 0;
        u = 1;
    }
    const double sim_rate = 1.0 - double(sim_occupied) / cells;
    CHECK(lattice_rate < 2.0 * sim_rate);
    CHECK(lattice_rate > 0.5 * sim_rate);
}

TEST_CASE("zero table gives zero features") {
    Rng rng(1);
    HashGrid g(HashGridConfig{}, rng);
    std::fill(g.params().begin(), g.params().end(), 0.0);
    for (int n = 0; n < 20; ++n)
        for (double x : encode(g, random_point(rng, 3))) CHECK(x == 0.0);
}

TEST_CASE("initial table is small and uniform") {
    Rng rng(2);
    HashGrid g(HashGridConfig{.input_dim = 4}, rng);
    CHECK(g.params().size() == 8u * (1u << 15) * 2u);
    double peak = 0;
    for (double p : g.params()) peak = std::max(peak, std::abs(p));
    CHECK(peak <= 1e-4);
    CHECK(peak > 0.9e-4);
}

TEST_CASE("a lattice corner returns that corner's entry") {
    Rng rng(3);
    HashGridConfig cfg{.levels = 1, .features_per_level = 2, .table_size_log2 = 6, .base_resolution = 4};
    HashGrid g(cfg, rng);
    randomize(g, rng);
    REQUIRE_FALSE(g.dense_level(0));
    const std::array<std::uint32_t, 3> cell{1, 3, 2};
    const std::vector<double> p{0.25, 0.75, 0.5};
    const auto out = encode(g, p);
    const std::uint32_t s = g.slot(0, cell);
    CHECK(s == hash_index(cell, 6));
    CHECK(out[0] == doctest::Approx(g.params()[2 * s]).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(g.params()[2 * s + 1]).epsilon(1e-14));
}

TEST_CASE("single level at resolution 2 matches an 8-corner oracle") {
    for (int log2 : {12, 3}) {
        Rng rng(4);
        HashGridConfig cfg{.levels = 1, .features_per_level = 3, .table_size_log2 = log2, .base_resolution = 2};
        HashGrid g(cfg, rng);
        randomize(g, rng);
        CHECK(g.dense_level(0) == (log2 == 12));
        for (int n = 0; n < 100; ++n) {
            const auto p = random_point(rng, 3);
            std::array<double, 3> oracle{};
            for (std::uint32_t z = 0; z <= 2; ++z)
                for (std::uint32_t y = 0; y <= 2; ++y)
                    for (std::uint32_t x = 0; x <= 2; ++x) {
                        const double w = std::max(0.0, 1 - std::abs(2 * p[0] - x)) * std::max(0.0, 1 - std::abs(2 * p[1] - y)) *
                                         std::max(0.0, 1 - std::abs(2 * p[2] - z));
                        if (w == 0) continue;
                        const std::array<std::uint32_t, 3> c{x, y, z};
                        const std::uint32_t s = g.dense_level(0) ? x + 3 * y + 9 * z : hash_index(c, log2);
                        for (int f = 0; f < 3; ++f) oracle[std::size_t(f)] += w * g.params()[3 * s + std::size_t(f)];
                    }
            const auto out = encode(g, p);
            for (int f = 0; f < 3; ++f) CHECK(std::abs(out[std::size_t(f)] - oracle[std::size_t(f)]) < 1e-6);
        }
    }
}

TEST_CASE("zero upstream gives zero gradients") {
    Rng rng(5);
    HashGrid g(HashGridConfig{.input_dim = 4}, rng);
    randomize(g, rng);
    EncodingTape tape;
    const auto p = random_point(rng, 4);
    std::vector<double> out(std::size_t(g.output_dim())), dout(out.size(), 0.0), grad(g.params().size(), 0.0), dp(4, 1.0);
    g.encode(p, tape, out);
    g.backward(tape, dout, grad, dp);
    for (double x : grad) CHECK(x == 0.0);
    for (double x : dp) CHECK(x == 0.0);
}

TEST_CASE("parameter gradient matches finite differences in 3D") {
    Rng rng(6);
    HashGrid g(HashGridConfig{}, rng);
    randomize(g, rng);
    for (int n = 0; n < 5; ++n) check_param_gradient(g, rng);
}

TEST_CASE("coordinate gradient matches finite differences in 4D") {
    Rng rng(7);
    HashGrid g(HashGridConfig{.input_dim = 4}, rng);
    randomize(g, rng);
    for (int n = 0; n < 10; ++n) check_coord_gradient(g, rng);
}

TEST_CASE("gradients over 100 random configurations") {
    Rng rng(8);
    for (int n = 0; n < 100; ++n) {
        const HashGridConfig cfg = random_config(rng);
        HashGrid g(cfg, rng);
        randomize(g, rng);
        check_param_gradient(g, rng);
        check_coord_gradient(g, rng);
    }
}

TEST_CASE("interpolation weights sum to one") {
    Rng rng(9);
    for (int n = 0; n < 100; ++n) {
        const HashGridConfig cfg = random_config(rng);
        HashGrid g(cfg, rng);
        EncodingTape tape;
        std::vector<double> out(std::size_t(g.output_dim()));
        g.encode(random_point(rng, cfg.input_dim, -0.1, 1.1), tape, out);
        const std::size_t corners = std::size_t(1) << cfg.input_dim;
        for (int l = 0; l < cfg.levels; ++l) {
            double s = 0;
            for (std::size_t c = 0; c < corners; ++c) s += tape.weights[std::size_t(l) * corners + c];
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("encoding is continuous across cell faces") {
    Rng rng(10);
    HashGridConfig cfg{.input_dim = 4};
    HashGrid g(cfg, rng);
    randomize(g, rng);
    const auto base = random_point(rng, 4);
    for (int l = 0; l < cfg.levels; ++l) {
        const int res = level_resolution(cfg, l);
        for (int k = 1; k < res; ++k) {
            auto a = base, b = base;
            a[0] = double(k) / res - 1e-9;
            b[0] = double(k) / res + 1e-9;
            const auto ea = encode(g, a), eb = encode(g, b);
            double jump = 0;
            for (std::size_t i = 0; i < ea.size(); ++i) jump = std::max(jump, std::abs(ea[i] - eb[i]));
            CHECK(jump < 1e-6);
        }
    }
}

TEST_CASE("encoding is deterministic and clamps outside the unit cube") {
    Rng rng(11);
    HashGrid g(HashGridConfig{}, rng);
    randomize(g, rng);
    const std::vector<double> p{0.3, 0.6, 0.9}, q{-0.5, 1.5, 0.9}, qc{0.0, 1.0, 0.9};
    CHECK(encode(g, p) == encode(g, p));
    CHECK(encode(g, q) == encode(g, qc));
}

TEST_CASE("invalid configurations are rejected") {
    CHECK_THROWS_AS((HashGridConfig{.levels = 0}.validate()), ConfigError);
    CHECK_THROWS_AS((HashGridConfig{.growth_factor = 1.0}.validate()), ConfigError);
    CHECK_THROWS_AS((HashGridConfig{.input_dim = 2}.validate()), ConfigError);
}

}
