#pragma once

// Single-file NIfTI-1 ("n+1") reader/writer for the subset used here:
// uncompressed, at most 4 dims (3 spatial + channels), datatypes uint8,
// int16, float32 and float64, sform-based orientation. Either byte order is
// read; little-endian is written.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "splat/errors.hpp"
#include "splat/geometry.hpp"
#include "splat/volume.hpp"

namespace splat::nifti {

enum class Datatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16, float64 = 64 };

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kDataOffset = 352;
inline constexpr std::int16_t kIntentLabel = 1002;
inline constexpr std::int16_t kXformAligned = 2;

inline int bytes_per_voxel(Datatype dt) {
    switch (dt) {
    case Datatype::uint8: return 1;
    case Datatype::int16: return 2;
    case Datatype::float32: return 4;
    case Datatype::float64: return 8;
    }
    return 0;
}

inline const char* datatype_name(Datatype dt) {
    switch (dt) {
    case Datatype::uint8: return "uint8";
    case Datatype::int16: return "int16";
    case Datatype::float32: return "float32";
    case Datatype::float64: return "float64";
    }
    return "unknown";
}

inline Datatype parse_datatype(const std::string& name) {
    if (name == "uint8") return Datatype::uint8;
    if (name == "int16") return Datatype::int16;
    if (name == "float32") return Datatype::float32;
    if (name == "float64") return Datatype::float64;
    throw GeometryError("unsupported datatype '" + name + "'");
}

struct Header {
    std::array<std::int16_t, 8> dim{};
    std::int16_t intent_code = 0;
    Datatype datatype = Datatype::float32;
    std::int16_t bitpix = 32;
    std::array<float, 8> pixdim{};
    float vox_offset = kDataOffset;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    std::array<std::array<float, 4>, 3> srow{};
    std::endian byte_order = std::endian::little;

    std::int64_t voxel_count() const {
        std::int64_t n = 1;
        for (int k = 1; k <= dim[0]; ++k) n *= dim[static_cast<std::size_t>(k)];
        return n;
    }
    std::int64_t payload_bytes() const { return voxel_count() * bytes_per_voxel(datatype); }

    /// sform rows when sform_code > 0, otherwise diag(pixdim).
    AffineMap affine() const {
        Matrix m = Matrix::Identity(4, 4);
        if (sform_code > 0) {
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 4; ++c) m(r, c) = srow[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            }
        } else {
            for (int k = 0; k < 3; ++k) {
                const double p = std::abs(static_cast<double>(pixdim[static_cast<std::size_t>(k + 1)]));
                m(k, k) = p > 0.0 ? p : 1.0;
            }
        }
        return AffineMap(m);
    }
};

// ---------------------------------------------------------------------------
// Byte-level helpers

namespace detail {

template <typename T> T byteswap_value(T v) {
    auto bytes = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

template <typename T> T load(std::span<const std::byte> buf, std::size_t offset, std::endian order) {
    std::array<std::byte, sizeof(T)> raw;
    std::memcpy(raw.data(), buf.data() + offset, sizeof(T));
    T v = std::bit_cast<T>(raw);
    if (order != std::endian::native) v = byteswap_value(v);
    return v;
}

template <typename T> void store(std::span<std::byte> buf, std::size_t offset, T v, std::endian order) {
    if (order != std::endian::native) v = byteswap_value(v);
    const auto raw = std::bit_cast<std::array<std::byte, sizeof(T)>>(v);
    std::memcpy(buf.data() + offset, raw.data(), sizeof(T));
}

inline bool is_supported(std::int16_t code) {
    return code == 2 || code == 4 || code == 16 || code == 64;
}

} // namespace detail

// Field offsets follow the published NIfTI-1 layout.
inline Header parse_header(std::span<const std::byte> buf) {
    using detail::load;
    if (buf.size() < static_cast<std::size_t>(kHeaderSize)) throw IoError("nifti: truncated header");

    Header h;
    if (load<std::int32_t>(buf, 0, std::endian::little) == kHeaderSize) {
        h.byte_order = std::endian::little;
    } else if (load<std::int32_t>(buf, 0, std::endian::big) == kHeaderSize) {
        h.byte_order = std::endian::big;
    } else {
        throw IoError("nifti: corrupt header (sizeof_hdr != 348)");
    }
    const char* magic = reinterpret_cast<const char*>(buf.data() + 344);
    if (std::memcmp(magic, "n+1\0", 4) != 0) {
        throw IoError("nifti: unknown magic (expected single-file \"n+1\")");
    }
    const auto order = h.byte_order;
    for (std::size_t k = 0; k < 8; ++k) h.dim[k] = load<std::int16_t>(buf, 40 + 2 * k, order);
    if (h.dim[0] < 1 || h.dim[0] > 4) {
        throw IoError("nifti: unsupported number of dimensions " + std::to_string(h.dim[0]));
    }
    for (int k = 1; k <= h.dim[0]; ++k) {
        if (h.dim[static_cast<std::size_t>(k)] < 1) throw IoError("nifti: corrupt header (dim < 1)");
    }
    h.intent_code = load<std::int16_t>(buf, 68, order);
    const auto dt = load<std::int16_t>(buf, 70, order);
    if (!detail::is_supported(dt)) throw IoError("nifti: unsupported datatype " + std::to_string(dt));
    h.datatype = static_cast<Datatype>(dt);
    h.bitpix = load<std::int16_t>(buf, 72, order);
    for (std::size_t k = 0; k < 8; ++k) h.pixdim[k] = load<float>(buf, 76 + 4 * k, order);
    h.vox_offset = load<float>(buf, 108, order);
    h.scl_slope = load<float>(buf, 112, order);
    h.scl_inter = load<float>(buf, 116, order);
    h.qform_code = load<std::int16_t>(buf, 252, order);
    h.sform_code = load<std::int16_t>(buf, 254, order);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) h.srow[r][c] = load<float>(buf, 280 + 16 * r + 4 * c, order);
    }
    if (!(h.vox_offset >= static_cast<float>(kHeaderSize))) {
        throw IoError("nifti: corrupt header (vox_offset < 348)");
    }
    return h;
}

inline std::vector<std::byte> encode_header(const Header& h) {
    using detail::store;
    std::vector<std::byte> buf(static_cast<std::size_t>(kDataOffset), std::byte{0});
    const auto order = h.byte_order;
    store<std::int32_t>(buf, 0, kHeaderSize, order);
    buf[38] = std::byte{'r'};
    for (std::size_t k = 0; k < 8; ++k) store<std::int16_t>(buf, 40 + 2 * k, h.dim[k], order);
    store<std::int16_t>(buf, 68, h.intent_code, order);
    store<std::int16_t>(buf, 70, static_cast<std::int16_t>(h.datatype), order);
    store<std::int16_t>(buf, 72, h.bitpix, order);
    for (std::size_t k = 0; k < 8; ++k) store<float>(buf, 76 + 4 * k, h.pixdim[k], order);
    store<float>(buf, 108, h.vox_offset, order);
    store<float>(buf, 112, h.scl_slope, order);
    store<float>(buf, 116, h.scl_inter, order);
    buf[123] = std::byte{2};  // xyzt_units: mm
    const char descrip[] = "splat";
    std::memcpy(buf.data() + 148, descrip, sizeof(descrip) - 1);
    store<std::int16_t>(buf, 252, h.qform_code, order);
    store<std::int16_t>(buf, 254, h.sform_code, order);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) store<float>(buf, 280 + 16 * r + 4 * c, h.srow[r][c], order);
    }
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    // Bytes 348..351: extension flags, all zero.
    return buf;
}

struct File {
    Header header;
    Volume volume;
};

/// Decodes a complete in-memory file. The grid is always 3D; a 4th
/// dimension becomes the channel axis.
inline File decode(std::span<const std::byte> bytes) {
    File out{parse_header(bytes), {}};
    const Header& h = out.header;
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    const auto payload = static_cast<std::size_t>(h.payload_bytes());
    if (bytes.size() < offset + payload) throw IoError("nifti: truncated payload");
    if (bytes.size() > offset + payload) throw IoError("nifti: payload larger than header declares");

    std::vector<std::int64_t> dims(3, 1);
    for (int k = 1; k <= std::min<int>(h.dim[0], 3); ++k) {
        dims[static_cast<std::size_t>(k - 1)] = h.dim[static_cast<std::size_t>(k)];
    }
    const int channels = h.dim[0] == 4 ? h.dim[4] : 1;
    GridSpec grid(dims, h.affine());

    const auto n = static_cast<std::size_t>(h.voxel_count());
    std::vector<double> data(n);
    const auto body = bytes.subspan(offset, payload);
    const auto order = h.byte_order;
    for (std::size_t i = 0; i < n; ++i) {
        switch (h.datatype) {
        case Datatype::uint8: data[i] = static_cast<double>(std::to_integer<std::uint8_t>(body[i])); break;
        case Datatype::int16: data[i] = detail::load<std::int16_t>(body, 2 * i, order); break;
        case Datatype::float32: data[i] = detail::load<float>(body, 4 * i, order); break;
        case Datatype::float64: data[i] = detail::load<double>(body, 8 * i, order); break;
        }
    }
    const double slope = h.scl_slope;
    const double inter = h.scl_inter;
    if (slope != 0.0 && (slope != 1.0 || inter != 0.0)) {
        for (auto& v : data) v = v * slope + inter;
    }
    const auto kind = h.intent_code == kIntentLabel ? VolumeKind::labels : VolumeKind::continuous;
    out.volume = Volume(std::move(grid), channels, std::move(data), kind);
    return out;
}

/// Embeds a 1D/2D grid in 3D by padding dims with 1 and the affine with identity.
inline GridSpec as_3d(const GridSpec& g) {
    if (g.dim() == 3) return g;
    std::vector<std::int64_t> dims = g.dims();
    dims.resize(3, 1);
    Matrix m = Matrix::Identity(4, 4);
    const int d = g.dim();
    m.topLeftCorner(d, d) = g.affine().linear();
    m.topRightCorner(d, 1) = g.affine().translation();
    return GridSpec(std::move(dims), AffineMap(m));
}

namespace detail {

template <typename I> I checked_integer(double v) {
    const double r = std::nearbyint(v);
    if (!std::isfinite(v) || r < static_cast<double>(std::numeric_limits<I>::min()) ||
        r > static_cast<double>(std::numeric_limits<I>::max())) {
        throw GeometryError("nifti: value " + std::to_string(v) + " overflows the integer datatype");
    }
    return static_cast<I>(r);
}

} // namespace detail

inline std::vector<std::byte> encode(const Volume& v, Datatype dt,
                                     std::endian order = std::endian::little) {
    const GridSpec grid = as_3d(v.grid());
    if (grid.dims(0) > 32767 || grid.dims(1) > 32767 || grid.dims(2) > 32767 || v.channels() > 32767) {
        throw GeometryError("nifti: dimension exceeds 32767");
    }
    Header h;
    h.byte_order = order;
    h.dim = {static_cast<std::int16_t>(v.channels() > 1 ? 4 : 3),
             static_cast<std::int16_t>(grid.dims(0)),
             static_cast<std::int16_t>(grid.dims(1)),
             static_cast<std::int16_t>(grid.dims(2)),
             static_cast<std::int16_t>(v.channels()),
             1, 1, 1};
    h.intent_code = v.is_labels() ? kIntentLabel : 0;
    h.datatype = dt;
    h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(dt));
    const Matrix& a = grid.affine().matrix();
    h.pixdim = {1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f};
    for (int k = 0; k < 3; ++k) {
        h.pixdim[static_cast<std::size_t>(k + 1)] =
            static_cast<float>(a.block(0, k, 3, 1).norm());
    }
    h.sform_code = kXformAligned;
    h.qform_code = 0;
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            h.srow[r][c] = static_cast<float>(a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        }
    }

    std::vector<std::byte> out = encode_header(h);
    const auto values = v.data();
    const std::size_t width = static_cast<std::size_t>(bytes_per_voxel(dt));
    out.resize(out.size() + values.size() * width);
    std::span<std::byte> body(out.data() + kDataOffset, values.size() * width);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double x = values[i];
        if (!std::isfinite(x)) throw GeometryError("nifti: cannot write non-finite values");
        switch (dt) {
        case Datatype::uint8: body[i] = static_cast<std::byte>(detail::checked_integer<std::uint8_t>(x)); break;
        case Datatype::int16: detail::store(body, 2 * i, detail::checked_integer<std::int16_t>(x), order); break;
        case Datatype::float32: detail::store(body, 4 * i, static_cast<float>(x), order); break;
        case Datatype::float64: detail::store(body, 8 * i, x, order); break;
        }
    }
    return out;
}

inline std::vector<std::byte> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::byte> bytes(size);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw IoError("failed reading '" + path.string() + "'");
    }
    return bytes;
}

inline File read(const std::filesystem::path& path) {
    try {
        return decode(read_bytes(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

} // namespace splat::nifti

namespace splat {

inline Volume read_volume(const std::filesystem::path& path) { return nifti::read(path).volume; }

inline void write_volume(const Volume& v, const std::filesystem::path& path,
                         nifti::Datatype dt = nifti::Datatype::float32) {
    nifti::write_bytes(path, nifti::encode(v, dt));
}

} // namespace splat
