#pragma once

#include <array>
#include <limits>

#include "natlas/volume.hpp"

namespace natlas {

struct ClaheConfig {
    /// Multiple of the mean bin count at which histogram bins are clipped.
    /// Use infinity to disable clipping (plain adaptive equalization).
    double clip_limit = 2.0;
    /// Requested tiles per axis. Reduced so that every tile spans at least
    /// min_tile_extent voxels; a volume too small for that uses one tile.
    std::array<int, 3> tiles{8, 8, 8};
    int bins = 256;
    int min_tile_extent = 8;
};

/// Tiles actually used along each axis for the given volume.
std::array<int, 3> effective_tiles(const Dims4& dims, const ClaheConfig& cfg);

/// Contrast-limited adaptive histogram equalization, applied to each
/// timepoint independently with 3D tiles and trilinear blending of the
/// per-tile mappings. Tiles holding a single intensity level map to the
/// identity, so constant volumes are returned unchanged.
Volume4D clahe(const Volume4D& v, const ClaheConfig& cfg = {});

}  // namespace natlas
