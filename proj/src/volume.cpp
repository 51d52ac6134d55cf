#include "natlas/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace natlas {

namespace {

struct AxisWeights {
    int lo, hi;
    double frac;
};

AxisWeights axis(double w, int dim) {
    const double c = world_to_voxel(std::clamp(w, 0.0, 1.0), dim);
    int lo = std::min(int(std::floor(c)), std::max(dim - 2, 0));
    lo = std::max(lo, 0);
    const int hi = std::min(lo + 1, dim - 1);
    return {lo, hi, c - lo};
}

}  // namespace

double trilinear_sample(const Volume4D& v, int t, const Vec3& p) {
    const auto ax = axis(p[0], v.dims.x);
    const auto ay = axis(p[1], v.dims.y);
    const auto az = axis(p[2], v.dims.z);
    auto val = [&](int i, int j, int k) { return double(v.at(i, j, k, t)); };
    const double c00 = val(ax.lo, ay.lo, az.lo) * (1 - ax.frac) + val(ax.hi, ay.lo, az.lo) * ax.frac;
    const double c10 = val(ax.lo, ay.hi, az.lo) * (1 - ax.frac) + val(ax.hi, ay.hi, az.lo) * ax.frac;
    const double c01 = val(ax.lo, ay.lo, az.hi) * (1 - ax.frac) + val(ax.hi, ay.lo, az.hi) * ax.frac;
    const double c11 = val(ax.lo, ay.hi, az.hi) * (1 - ax.frac) + val(ax.hi, ay.hi, az.hi) * ax.frac;
    const double c0 = c00 * (1 - ay.frac) + c10 * ay.frac;
    const double c1 = c01 * (1 - ay.frac) + c11 * ay.frac;
    return c0 * (1 - az.frac) + c1 * az.frac;
}

std::uint8_t nearest_label(const LabelVolume4D& v, int t, const Vec3& p) {
    auto idx = [](double w, int dim) {
        return std::clamp(int(std::lround(world_to_voxel(std::clamp(w, 0.0, 1.0), dim))), 0, dim - 1);
    };
    return v.at(idx(p[0], v.dims.x), idx(p[1], v.dims.y), idx(p[2], v.dims.z), t);
}

void normalize_minmax(Volume4D& v) {
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float x : v.data) {
        if (!std::isfinite(x)) throw DataError("volume contains non-finite values");
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (v.data.empty()) return;
    if (!(hi > lo)) {
        std::fill(v.data.begin(), v.data.end(), 0.0f);
        return;
    }
    if (lo == 0.0f && hi == 1.0f) return;
    const double range = double(hi) - double(lo);
    for (float& x : v.data) x = float((double(x) - lo) / range);
}

void check_intensity_range(const Volume4D& v) {
    for (float x : v.data) {
        if (!std::isfinite(x) || x < 0.0f || x > 1.0f) throw DataError("intensity outside [0,1]");
    }
}

}  // namespace natlas
