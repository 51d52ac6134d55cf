#pragma once

#include <array>
#include <filesystem>

#include "natlas/fields.hpp"
#include "natlas/volume.hpp"

namespace natlas {

/// Time-invariant template on its own grid (dims.t == 1).
struct Atlas {
    Volume4D intensity;
    /// Number of frames averaged in the intensity latent.
    int frames = 1;
};

/// Decodes v_static(y) + mean_t v_intensity(y, t) at every voxel centre y of
/// `grid` (t ignored). No deformation is applied: the atlas lives in the
/// reference coordinate system.
Atlas infer_atlas(const FieldSet& fs, const Dims4& grid, int frames, int threads = 1);

/// Pull-back resample: out(y) = I(y + d(y), t) with trilinear interpolation.
/// The output has the deformation's grid and the volume's spacing.
Volume4D resample(const Volume4D& volume, int t, const DenseDeformation& d);

/// Frame t of the series resampled onto the atlas grid through the inverse
/// deformation at time t.
Volume4D warp_image_to_atlas(const FieldSet& fs, const Volume4D& volume, int t, const Dims4& grid);

/// Atlas resampled into the space of frame t (of `frames`) through the
/// forward deformation: out(x) = atlas(x + u(x, t)).
Volume4D warp_atlas_to_image(const FieldSet& fs, const Atlas& atlas, int t, int frames, const Dims4& grid);

/// Paths of the three mid-plane slices written next to an exported atlas.
std::array<std::filesystem::path, 3> slice_paths(const std::filesystem::path& atlas_path);

/// Writes the atlas as a raw container and, if requested, three 8-bit PGM
/// mid-plane slices: xy (z = nz/2), xz (y = ny/2) and yz (x = nx/2). Pixel
/// (column c, row r) holds round(255 * value) of the voxel with the first
/// in-plane axis = c and the second = r.
void export_atlas(const Atlas& atlas, const std::filesystem::path& path, bool slices = true);

}  // namespace natlas
