#include "natlas/deformation.hpp"

#include <algorithm>
#include <cmath>

namespace natlas {

DenseDeformation::DenseDeformation(Dims4 d, Direction dir) : dims(d), disp(d.spatial(), Vec3{0, 0, 0}), direction(dir) {
    dims.t = 1;
}

Vec3 DenseDeformation::sample(const Vec3& p) const {
    auto axis = [](double w, int dim, int& lo, int& hi, double& f) {
        const double c = world_to_voxel(std::clamp(w, 0.0, 1.0), dim);
        lo = std::max(std::min(int(std::floor(c)), dim - 2), 0);
        hi = std::min(lo + 1, dim - 1);
        f = c - lo;
    };
    int x0, x1, y0, y1, z0, z1;
    double fx, fy, fz;
    axis(p[0], dims.x, x0, x1, fx);
    axis(p[1], dims.y, y0, y1, fy);
    axis(p[2], dims.z, z0, z1, fz);
    Vec3 out{};
    for (int a = 0; a < 3; ++a) {
        auto v = [&](int i, int j, int k) { return at(i, j, k)[a]; };
        const double c00 = v(x0, y0, z0) * (1 - fx) + v(x1, y0, z0) * fx;
        const double c10 = v(x0, y1, z0) * (1 - fx) + v(x1, y1, z0) * fx;
        const double c01 = v(x0, y0, z1) * (1 - fx) + v(x1, y0, z1) * fx;
        const double c11 = v(x0, y1, z1) * (1 - fx) + v(x1, y1, z1) * fx;
        out[a] = (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz;
    }
    return out;
}

Vec3 integrate_pointwise(const VectorFn& velocity, const Vec3& x0, int steps) {
    if (steps < 1) throw ConfigError("integration steps must be >= 1");
    const double dt = 1.0 / steps;
    Vec3 x = x0;
    for (int k = 0; k < steps; ++k) x = clamp_unit(x + dt * velocity(x));
    return x - x0;
}

DenseDeformation sample_field(const VectorFn& fn, const Dims4& dims, Direction dir) {
    DenseDeformation out(dims, dir);
    for (int k = 0; k < dims.z; ++k)
        for (int j = 0; j < dims.y; ++j)
            for (int i = 0; i < dims.x; ++i) out.at(i, j, k) = fn(voxel_center(dims, i, j, k));
    return out;
}

DenseDeformation integrate_grid(const DenseDeformation& velocity, int squarings) {
    if (squarings < 0) throw ConfigError("squarings must be >= 0");
    DenseDeformation u = velocity;
    const double scale = std::ldexp(1.0, -squarings);
    for (auto& v : u.disp) v = scale * v;
    DenseDeformation next = u;
    for (int s = 0; s < squarings; ++s) {
        for (int k = 0; k < u.dims.z; ++k)
            for (int j = 0; j < u.dims.y; ++j)
                for (int i = 0; i < u.dims.x; ++i) {
                    const Vec3& d = u.at(i, j, k);
                    next.at(i, j, k) = d + u.sample(voxel_center(u.dims, i, j, k) + d);
                }
        std::swap(u.disp, next.disp);
    }
    return u;
}

DenseDeformation integrate_grid(const VectorFn& velocity, const Dims4& dims, int squarings) {
    return integrate_grid(sample_field(velocity, dims), squarings);
}

DenseDeformation inverse_grid(const VectorFn& velocity, const Dims4& dims, int squarings) {
    auto u = integrate_grid([&](const Vec3& x) { return -1.0 * velocity(x); }, dims, squarings);
    u.direction = Direction::inverse;
    return u;
}

DenseDeformation invert_displacement(const DenseDeformation& u, int iterations) {
    DenseDeformation w(u.dims, u.direction == Direction::forward ? Direction::inverse : Direction::forward);
    for (int k = 0; k < u.dims.z; ++k)
        for (int j = 0; j < u.dims.y; ++j)
            for (int i = 0; i < u.dims.x; ++i) {
                const Vec3 y = voxel_center(u.dims, i, j, k);
                Vec3 cur{0, 0, 0};
                for (int it = 0; it < iterations; ++it) cur = -1.0 * u.sample(y + cur);
                w.at(i, j, k) = cur;
            }
    return w;
}

DenseDeformation compose(const DenseDeformation& a, const DenseDeformation& b) {
    if (!a.dims.same_space(b.dims)) throw DataError("compose: deformation grids differ");
    DenseDeformation out(b.dims, b.direction);
    for (int k = 0; k < b.dims.z; ++k)
        for (int j = 0; j < b.dims.y; ++j)
            for (int i = 0; i < b.dims.x; ++i) {
                const Vec3& db = b.at(i, j, k);
                out.at(i, j, k) = db + a.sample(voxel_center(b.dims, i, j, k) + db);
            }
    return out;
}

Mat3 jacobian(const VectorFn& u, const Vec3& x, const Vec3& h) {
    Mat3 J = identity3();
    for (int a = 0; a < 3; ++a) {
        Vec3 hi = x, lo = x;
        hi[a] = std::min(x[a] + h[a], 1.0);
        lo[a] = std::max(x[a] - h[a], 0.0);
        const double span = hi[a] - lo[a];
        if (!(span > 0)) continue;
        const Vec3 d = u(hi) - u(lo);
        for (int r = 0; r < 3; ++r) J[r][a] += d[r] / span;
    }
    return J;
}

double divergence(const VectorFn& u, const Vec3& x, const Vec3& h) { return trace(jacobian(u, x, h)) - 3.0; }

Mat3 jacobian_at(const DenseDeformation& d, int i, int j, int k) {
    Mat3 J = identity3();
    const std::array<int, 3> idx{i, j, k};
    const std::array<int, 3> dim{d.dims.x, d.dims.y, d.dims.z};
    for (int a = 0; a < 3; ++a) {
        if (dim[a] < 2) continue;
        auto hi = idx, lo = idx;
        hi[a] = std::min(idx[a] + 1, dim[a] - 1);
        lo[a] = std::max(idx[a] - 1, 0);
        const double span = double(hi[a] - lo[a]) * voxel_size_world(dim[a]);
        const Vec3 diff = d.at(hi[0], hi[1], hi[2]) - d.at(lo[0], lo[1], lo[2]);
        for (int r = 0; r < 3; ++r) J[r][a] += diff[r] / span;
    }
    return J;
}

double folding_ratio(const DenseDeformation& d) {
    std::size_t total = 0, folded = 0;
    for (int k = 1; k + 1 < d.dims.z; ++k)
        for (int j = 1; j + 1 < d.dims.y; ++j)
            for (int i = 1; i + 1 < d.dims.x; ++i) {
                ++total;
                if (determinant(jacobian_at(d, i, j, k)) <= 0.0) ++folded;
            }
    return total ? double(folded) / double(total) : 0.0;
}

RawContainer to_raw(const DenseDeformation& d, const Vec3& spacing) {
    RawContainer c;
    c.dims = {d.dims.x, d.dims.y, d.dims.z, 3};
    c.spacing = spacing;
    c.dtype = RawDtype::f32;
    const std::size_t n = d.dims.spatial();
    c.f32.resize(n * 3);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < 3; ++a) c.f32[a * n + i] = float(d.disp[i][a]);
    return c;
}

DenseDeformation from_raw(const RawContainer& c) {
    if (c.dtype != RawDtype::f32 || c.dims.t != 3) throw FormatError("deformation container must be f32 with 3 channels");
    DenseDeformation d({c.dims.x, c.dims.y, c.dims.z, 1});
    const std::size_t n = d.dims.spatial();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < 3; ++a) d.disp[i][a] = c.f32[a * n + i];
    return d;
}

}  // namespace natlas
