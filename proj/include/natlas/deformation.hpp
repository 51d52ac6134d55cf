#pragma once

#include <functional>
#include <vector>

#include "natlas/volume.hpp"
#include "natlas/volume_io.hpp"

namespace natlas {

/// Everything known about the deformation at one query point. Coordinates and
/// displacements are in normalized units.
struct DeformationSample {
    Vec3 x{};
    double t = 0;
    Vec3 v{};
    Vec3 u{};
    Vec3 phi{};  // x + u
    Mat3 J = identity3();
    double det_J = 1.0;
    double div_u = 0.0;
};

enum class Direction { forward, inverse };

/// Displacement vector per voxel of a 3D grid, normalized units.
struct DenseDeformation {
    Dims4 dims;  // t == 1
    std::vector<Vec3> disp;
    Direction direction = Direction::forward;

    DenseDeformation() = default;
    explicit DenseDeformation(Dims4 d, Direction dir = Direction::forward);

    std::size_t index(int i, int j, int k) const { return std::size_t(i) + std::size_t(dims.x) * (std::size_t(j) + std::size_t(dims.y) * std::size_t(k)); }
    Vec3& at(int i, int j, int k) { return disp[index(i, j, k)]; }
    const Vec3& at(int i, int j, int k) const { return disp[index(i, j, k)]; }
    /// Trilinear interpolation, point clamped to [0,1]^3.
    Vec3 sample(const Vec3& p) const;
};

using VectorFn = std::function<Vec3(const Vec3&)>;

/// Forward-Euler flow of dx/ds = v(x) over s in [0,1] with `steps` steps;
/// positions are clamped to [0,1]^3. Returns u = x_K - x_0.
Vec3 integrate_pointwise(const VectorFn& velocity, const Vec3& x0, int steps);

/// Samples a vector function at every voxel of the grid.
DenseDeformation sample_field(const VectorFn& fn, const Dims4& dims, Direction dir = Direction::forward);

/// Scaling and squaring: v / 2^S, then S times u <- u + u o (id + u).
DenseDeformation integrate_grid(const DenseDeformation& velocity, int squarings);
DenseDeformation integrate_grid(const VectorFn& velocity, const Dims4& dims, int squarings);
/// Inverse of the SVF deformation: integrate the negated field.
DenseDeformation inverse_grid(const VectorFn& velocity, const Dims4& dims, int squarings);

/// Inverse of an arbitrary displacement by fixed-point iteration
/// w(y) = -u(y + w(y)). Used when no velocity field is available.
DenseDeformation invert_displacement(const DenseDeformation& u, int iterations = 30);

/// (a o b)(x) = b(x) + a(x + b(x)). Throws DataError on grid mismatch.
DenseDeformation compose(const DenseDeformation& a, const DenseDeformation& b);

/// J = I + du/dx by finite differences with step h per axis; the stencil is
/// clipped to [0,1] so it becomes one-sided at the domain faces.
Mat3 jacobian(const VectorFn& u, const Vec3& x, const Vec3& h);
/// trace(du/dx) with the same stencil as jacobian().
double divergence(const VectorFn& u, const Vec3& x, const Vec3& h);

/// Same stencil on a dense field, neighbour voxels (one-sided at faces).
Mat3 jacobian_at(const DenseDeformation& d, int i, int j, int k);

/// Fraction of interior voxels with det J <= 0.
double folding_ratio(const DenseDeformation& d);

/// One voxel of the grid along each axis, in normalized units.
inline Vec3 voxel_step(const Dims4& d) { return {voxel_size_world(d.x), voxel_size_world(d.y), voxel_size_world(d.z)}; }

/// Raw-container form: dims (x, y, z, 3), channel = displacement component.
RawContainer to_raw(const DenseDeformation& d, const Vec3& spacing = {1, 1, 1});
DenseDeformation from_raw(const RawContainer& c);

}  // namespace natlas
