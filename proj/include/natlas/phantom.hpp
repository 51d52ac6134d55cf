#pragma once

#include <cstdint>
#include <vector>

#include "natlas/volume.hpp"

namespace natlas {

struct PhantomConfig {
    Dims4 dims{32, 32, 32, 8};
    Vec3 spacing{3.0, 3.0, 3.0};
    /// Ellipsoid semi-axes in voxels.
    Vec3 radii{9.0, 7.5, 6.5};
    /// Peak per-frame translation of the object, in voxels.
    double amplitude = 2.0;
    double noise_sigma = 0.02;
    /// Amplitude and wavelength (voxels) of the texture that moves with the object.
    double texture_amplitude = 0.18;
    double texture_wavelength = 5.0;
};

/// Per-voxel 3-vectors over (x, y, z, frame).
using VectorSeries = Image4<Vec3>;

struct Phantom {
    Volume4D image;
    LabelVolume4D labels;
    /// For every frame and voxel x, the displacement (in voxels) that carries x
    /// to the shared reference pose: reference point = x + motion(x, t).
    VectorSeries motion;
    /// Rigid translation of the object in each frame, in voxels.
    std::vector<Vec3> translations;
};

/// Textured ellipsoid (label 1) with an inner bright structure (label 2) over
/// a static background. Frame t shows the scene displaced by a smooth field
/// that equals a rigid translation over the object and tapers to zero towards
/// the volume border. Deterministic given the seed.
/// Throws ConfigError when the motion would push the object out of bounds.
Phantom synth_sequence(const PhantomConfig& cfg, std::uint64_t seed);

}  // namespace natlas
