#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "natlas/volume.hpp"

namespace natlas {

enum class VolumeFormat { raw, nifti1 };

/// Raw container element type.
enum class RawDtype : std::uint8_t { f32 = 0, u8 = 1 };

// Raw container: 64-byte little-endian header
//   0  magic "NATL"
//   4  u32 version (1)
//   8  u32 dims[4] (x, y, z, t)
//  24  f32 spacing[3]
//  36  u8  dtype
//  37  reserved (zero)
// followed by the x-fastest payload.
inline constexpr std::uint32_t kRawVersion = 1;
inline constexpr std::size_t kRawHeaderBytes = 64;

struct RawContainer {
    Dims4 dims;
    Vec3 spacing{1, 1, 1};
    RawDtype dtype = RawDtype::f32;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;
};

void write_raw(const RawContainer& c, const std::filesystem::path& path);
RawContainer read_raw(const std::filesystem::path& path);

/// Loads and min-max normalizes to [0,1]. NIfTI-1: uncompressed single file
/// ("n+1"), little-endian, scalar integer or float datatypes.
Volume4D load_volume(const std::filesystem::path& path, VolumeFormat format = VolumeFormat::raw);
void save_volume(const Volume4D& v, const std::filesystem::path& path, VolumeFormat format = VolumeFormat::raw);

LabelVolume4D load_labels(const std::filesystem::path& path, VolumeFormat format = VolumeFormat::raw);
void save_labels(const LabelVolume4D& v, const std::filesystem::path& path);

/// Guesses the format from the extension (.nii -> nifti1, otherwise raw).
VolumeFormat format_from_path(const std::filesystem::path& path);

}  // namespace natlas
