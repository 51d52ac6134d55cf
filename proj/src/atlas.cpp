#include "natlas/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "natlas/parallel.hpp"
#include "natlas/volume_io.hpp"

namespace natlas {

Atlas infer_atlas(const FieldSet& fs, const Dims4& grid, int frames, int threads) {
    if (frames < 1) throw DataError("infer_atlas: frames must be >= 1");
    Atlas atlas;
    atlas.frames = frames;
    atlas.intensity = Volume4D({grid.x, grid.y, grid.z, 1});
    const std::size_t n = grid.spatial();
    run_chunks(n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t idx = b; idx < e; ++idx) {
            const int i = int(idx % std::size_t(grid.x));
            const int j = int(idx / std::size_t(grid.x) % std::size_t(grid.y));
            const int k = int(idx / (std::size_t(grid.x) * std::size_t(grid.y)));
            const Vec3 y = voxel_center(grid, i, j, k);
            std::vector<double> z = fs.static_features(y);
            if (fs.config().use_intensity_field) {
                std::vector<double> acc(z.size(), 0.0);
                for (int t = 0; t < frames; ++t) {
                    const auto v = fs.intensity_features(y, time_to_world(t, frames));
                    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += v[c];
                }
                for (std::size_t c = 0; c < z.size(); ++c) z[c] += acc[c] / double(frames);
            }
            atlas.intensity.data[idx] = float(fs.decode(z));
        }
    });
    return atlas;
}

Volume4D resample(const Volume4D& volume, int t, const DenseDeformation& d) {
    Volume4D out({d.dims.x, d.dims.y, d.dims.z, 1}, volume.spacing);
    for (int k = 0; k < d.dims.z; ++k)
        for (int j = 0; j < d.dims.y; ++j)
            for (int i = 0; i < d.dims.x; ++i) {
                const Vec3 p = voxel_center(d.dims, i, j, k) + d.at(i, j, k);
                out.at(i, j, k) = float(trilinear_sample(volume, t, p));
            }
    return out;
}

Volume4D warp_image_to_atlas(const FieldSet& fs, const Volume4D& volume, int t, const Dims4& grid) {
    if (t < 0 || t >= volume.dims.t) throw DataError("warp_image_to_atlas: frame out of range");
    const auto inv = model_deformation(fs, {grid.x, grid.y, grid.z, 1}, time_to_world(t, volume.dims.t), Direction::inverse);
    return resample(volume, t, inv);
}

Volume4D warp_atlas_to_image(const FieldSet& fs, const Atlas& atlas, int t, int frames, const Dims4& grid) {
    if (t < 0 || t >= frames) throw DataError("warp_atlas_to_image: frame out of range");
    const auto fwd = model_deformation(fs, {grid.x, grid.y, grid.z, 1}, time_to_world(t, frames), Direction::forward);
    return resample(atlas.intensity, 0, fwd);
}

std::array<std::filesystem::path, 3> slice_paths(const std::filesystem::path& atlas_path) {
    const auto dir = atlas_path.parent_path();
    const auto stem = atlas_path.stem().string();
    return {dir / (stem + "_xy.pgm"), dir / (stem + "_xz.pgm"), dir / (stem + "_yz.pgm")};
}

namespace {

template <class Pixel>
void write_pgm(const std::filesystem::path& path, int width, int height, Pixel&& pixel) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(width));
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            row[std::size_t(c)] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(double(pixel(c, r)), 0.0, 1.0)));
        }
        out.write(reinterpret_cast<const char*>(row.data()), width);
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

void export_atlas(const Atlas& atlas, const std::filesystem::path& path, bool slices) {
    save_volume(atlas.intensity, path);
    if (!slices) return;
    const auto& v = atlas.intensity;
    const auto& d = v.dims;
    const auto paths = slice_paths(path);
    write_pgm(paths[0], d.x, d.y, [&](int c, int r) { return v.at(c, r, d.z / 2); });
    write_pgm(paths[1], d.x, d.z, [&](int c, int r) { return v.at(c, d.y / 2, r); });
    write_pgm(paths[2], d.y, d.z, [&](int c, int r) { return v.at(d.x / 2, c, r); });
}

}  // namespace natlas
