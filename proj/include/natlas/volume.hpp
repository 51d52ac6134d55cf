#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "natlas/types.hpp"

namespace natlas {

struct Dims4 {
    int x = 1, y = 1, z = 1, t = 1;

    std::size_t spatial() const { return std::size_t(x) * y * z; }
    std::size_t voxels() const { return spatial() * t; }
    bool same_space(const Dims4& o) const { return x == o.x && y == o.y && z == o.z; }
    bool operator==(const Dims4&) const = default;
};

/// Dense 4D grid, x fastest, then y, z, t.
template <class T>
struct Image4 {
    Dims4 dims;
    Vec3 spacing{1.0, 1.0, 1.0};  // mm per voxel
    std::vector<T> data;

    Image4() = default;
    Image4(Dims4 d, Vec3 sp = {1.0, 1.0, 1.0}, T fill = T{})
        : dims(d), spacing(sp), data(d.voxels(), fill) {
        if (d.x < 1 || d.y < 1 || d.z < 1 || d.t < 1) throw DataError("volume dims must be positive");
    }

    std::size_t index(int i, int j, int k, int t = 0) const {
        return std::size_t(i) + std::size_t(dims.x) * (std::size_t(j) + std::size_t(dims.y) * (std::size_t(k) + std::size_t(dims.z) * std::size_t(t)));
    }
    T& at(int i, int j, int k, int t = 0) { return data[index(i, j, k, t)]; }
    const T& at(int i, int j, int k, int t = 0) const { return data[index(i, j, k, t)]; }

    /// Copy of one timepoint as a T=1 image.
    Image4 frame(int t) const {
        Image4 out({dims.x, dims.y, dims.z, 1}, spacing);
        const std::size_t n = dims.spatial();
        std::copy(data.begin() + std::ptrdiff_t(n * t), data.begin() + std::ptrdiff_t(n * (t + 1)), out.data.begin());
        return out;
    }

    void set_frame(int t, const Image4& f) {
        const std::size_t n = dims.spatial();
        std::copy(f.data.begin(), f.data.begin() + std::ptrdiff_t(n), data.begin() + std::ptrdiff_t(n * t));
    }
};

/// Intensities in [0,1]. A 3D volume is a Volume4D with dims.t == 1.
using Volume4D = Image4<float>;
/// 0 = background, 1..L = regions.
using LabelVolume4D = Image4<std::uint8_t>;

// Normalized world coordinates: voxel 0 maps to 0, voxel dim-1 maps to 1.
inline double voxel_to_world(double index, int dim) { return dim > 1 ? index / double(dim - 1) : 0.0; }
inline double world_to_voxel(double w, int dim) { return dim > 1 ? w * double(dim - 1) : 0.0; }
inline double voxel_size_world(int dim) { return dim > 1 ? 1.0 / double(dim - 1) : 1.0; }

inline Vec3 voxel_center(const Dims4& d, int i, int j, int k) {
    return {voxel_to_world(i, d.x), voxel_to_world(j, d.y), voxel_to_world(k, d.z)};
}
inline double time_to_world(int t, int frames) { return voxel_to_world(t, frames); }

/// Trilinear interpolation of frame t at normalized point p; p is clamped to [0,1]^3.
double trilinear_sample(const Volume4D& v, int t, const Vec3& p);
/// Nearest-neighbour lookup for label volumes.
std::uint8_t nearest_label(const LabelVolume4D& v, int t, const Vec3& p);

/// Min-max normalize in place to [0,1]. Constant volumes become all zeros.
/// Throws DataError on non-finite values.
void normalize_minmax(Volume4D& v);

/// Throws DataError unless every value is finite and in [0,1].
void check_intensity_range(const Volume4D& v);

}  // namespace natlas
