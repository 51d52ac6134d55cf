#include "natlas/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace natlas {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T get(const std::vector<char>& buf, std::size_t off) {
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    return v;
}

template <class T>
void put(std::vector<char>& buf, std::size_t off, T v) {
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

}  // namespace

void write_raw(const RawContainer& c, const std::filesystem::path& path) {
    if (path.empty()) throw std::runtime_error("empty output path");
    std::vector<char> header(kRawHeaderBytes, 0);
    std::memcpy(header.data(), "NATL", 4);
    put<std::uint32_t>(header, 4, kRawVersion);
    put<std::uint32_t>(header, 8, std::uint32_t(c.dims.x));
    put<std::uint32_t>(header, 12, std::uint32_t(c.dims.y));
    put<std::uint32_t>(header, 16, std::uint32_t(c.dims.z));
    put<std::uint32_t>(header, 20, std::uint32_t(c.dims.t));
    for (int i = 0; i < 3; ++i) put<float>(header, 24 + 4 * std::size_t(i), float(c.spacing[i]));
    header[36] = char(c.dtype);

    const std::size_t n = c.dims.voxels();
    const std::size_t have = c.dtype == RawDtype::f32 ? c.f32.size() : c.u8.size();
    if (have != n) throw DataError("payload size does not match dims");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(header.data(), std::streamsize(header.size()));
    if (c.dtype == RawDtype::f32) {
        out.write(reinterpret_cast<const char*>(c.f32.data()), std::streamsize(n * sizeof(float)));
    } else {
        out.write(reinterpret_cast<const char*>(c.u8.data()), std::streamsize(n));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

RawContainer read_raw(const std::filesystem::path& path) {
    const auto buf = read_file(path);
    if (buf.size() < kRawHeaderBytes || std::memcmp(buf.data(), "NATL", 4) != 0) {
        throw FormatError("not a NATL raw container: " + path.string());
    }
    if (get<std::uint32_t>(buf, 4) != kRawVersion) throw FormatError("unsupported raw container version");
    RawContainer c;
    const auto dim = [&](std::size_t off) {
        const auto v = get<std::uint32_t>(buf, off);
        if (v == 0 || v > (1u << 20)) throw FormatError("invalid dimension in raw header");
        return int(v);
    };
    c.dims = {dim(8), dim(12), dim(16), dim(20)};
    for (int i = 0; i < 3; ++i) c.spacing[i] = get<float>(buf, 24 + 4 * std::size_t(i));
    const auto dtype = std::uint8_t(buf[36]);
    if (dtype > 1) throw FormatError("unknown raw dtype");
    c.dtype = RawDtype(dtype);
    const std::size_t n = c.dims.voxels();
    const std::size_t elem = c.dtype == RawDtype::f32 ? 4 : 1;
    if (buf.size() != kRawHeaderBytes + n * elem) throw FormatError("raw payload size does not match header");
    if (c.dtype == RawDtype::f32) {
        c.f32.resize(n);
        std::memcpy(c.f32.data(), buf.data() + kRawHeaderBytes, n * 4);
    } else {
        c.u8.resize(n);
        std::memcpy(c.u8.data(), buf.data() + kRawHeaderBytes, n);
    }
    return c;
}

namespace {

struct NiftiData {
    Dims4 dims;
    Vec3 spacing;
    std::vector<double> values;
};

NiftiData read_nifti(const std::filesystem::path& path) {
    const auto buf = read_file(path);
    if (buf.size() < 352) throw FormatError("file too small for NIfTI-1: " + path.string());
    if (get<std::int32_t>(buf, 0) != 348) throw FormatError("NIfTI-1 sizeof_hdr != 348 (big-endian or not NIfTI)");
    if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0) throw FormatError("only single-file NIfTI-1 (n+1) is supported");

    const auto ndim = get<std::int16_t>(buf, 40);
    if (ndim < 1 || ndim > 4) throw FormatError("NIfTI ndim must be 1..4");
    int d[4] = {1, 1, 1, 1};
    for (int i = 0; i < ndim; ++i) {
        d[i] = get<std::int16_t>(buf, 42 + 2 * std::size_t(i));
        if (d[i] < 1) throw FormatError("non-positive NIfTI dimension");
    }
    NiftiData out;
    out.dims = {d[0], d[1], d[2], d[3]};
    for (int i = 0; i < 3; ++i) {
        const float p = get<float>(buf, 80 + 4 * std::size_t(i));
        out.spacing[i] = (std::isfinite(p) && p > 0) ? p : 1.0;
    }
    const auto datatype = get<std::int16_t>(buf, 70);
    const float vox_offset = get<float>(buf, 108);
    float slope = get<float>(buf, 112);
    const float inter = get<float>(buf, 116);
    if (!std::isfinite(slope) || slope == 0.0f) slope = 1.0f;

    std::size_t elem = 0;
    switch (datatype) {
        case 2: case 256: elem = 1; break;             // uint8, int8
        case 4: case 512: elem = 2; break;             // int16, uint16
        case 8: case 768: case 16: elem = 4; break;    // int32, uint32, float32
        case 64: elem = 8; break;                      // float64
        default: throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype));
    }
    const std::size_t n = out.dims.voxels();
    const auto offset = std::size_t(vox_offset);
    if (offset < 348 || buf.size() < offset + n * elem) throw FormatError("NIfTI payload truncated");
    out.values.resize(n);
    const char* p = buf.data() + offset;
    for (std::size_t i = 0; i < n; ++i) {
        double v = 0;
        const char* q = p + i * elem;
        switch (datatype) {
            case 2: v = double(std::uint8_t(*q)); break;
            case 256: v = double(std::int8_t(*q)); break;
            case 4: { std::int16_t x; std::memcpy(&x, q, 2); v = x; break; }
            case 512: { std::uint16_t x; std::memcpy(&x, q, 2); v = x; break; }
            case 8: { std::int32_t x; std::memcpy(&x, q, 4); v = x; break; }
            case 768: { std::uint32_t x; std::memcpy(&x, q, 4); v = x; break; }
            case 16: { float x; std::memcpy(&x, q, 4); v = x; break; }
            case 64: { double x; std::memcpy(&x, q, 8); v = x; break; }
        }
        out.values[i] = v * slope + inter;
    }
    return out;
}

}  // namespace

VolumeFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".nii" ? VolumeFormat::nifti1 : VolumeFormat::raw;
}

Volume4D load_volume(const std::filesystem::path& path, VolumeFormat format) {
    Volume4D v;
    if (format == VolumeFormat::raw) {
        auto c = read_raw(path);
        if (c.dtype != RawDtype::f32) throw FormatError("expected f32 intensity container, got labels");
        v.dims = c.dims;
        v.spacing = c.spacing;
        v.data = std::move(c.f32);
    } else {
        auto n = read_nifti(path);
        v.dims = n.dims;
        v.spacing = n.spacing;
        v.data.resize(n.values.size());
        for (std::size_t i = 0; i < n.values.size(); ++i) {
            if (!std::isfinite(n.values[i])) throw DataError("volume contains non-finite values");
            v.data[i] = float(n.values[i]);
        }
    }
    normalize_minmax(v);
    return v;
}

void save_volume(const Volume4D& v, const std::filesystem::path& path, VolumeFormat format) {
    if (format != VolumeFormat::raw) throw std::runtime_error("NIfTI-1 support is read-only");
    RawContainer c;
    c.dims = v.dims;
    c.spacing = v.spacing;
    c.dtype = RawDtype::f32;
    c.f32 = v.data;
    write_raw(c, path);
}

LabelVolume4D load_labels(const std::filesystem::path& path, VolumeFormat format) {
    LabelVolume4D v;
    if (format == VolumeFormat::raw) {
        auto c = read_raw(path);
        if (c.dtype != RawDtype::u8) throw FormatError("expected u8 label container");
        v.dims = c.dims;
        v.spacing = c.spacing;
        v.data = std::move(c.u8);
    } else {
        auto n = read_nifti(path);
        v.dims = n.dims;
        v.spacing = n.spacing;
        v.data.resize(n.values.size());
        for (std::size_t i = 0; i < n.values.size(); ++i) {
            const double x = n.values[i];
            if (!std::isfinite(x) || x < 0 || x > 255 || x != std::floor(x)) throw DataError("label values must be integers in 0..255");
            v.data[i] = std::uint8_t(x);
        }
    }
    return v;
}

void save_labels(const LabelVolume4D& v, const std::filesystem::path& path) {
    RawContainer c;
    c.dims = v.dims;
    c.spacing = v.spacing;
    c.dtype = RawDtype::u8;
    c.u8 = v.data;
    write_raw(c, path);
}

}  // namespace natlas
