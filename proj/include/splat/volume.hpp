#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splat/errors.hpp"
#include "splat/geometry.hpp"

namespace splat {

enum class VolumeKind { continuous, labels };

/// Multi-channel voxel data on a grid. Channel-major storage: voxel `i` of
/// channel `c` lives at `data[c * voxel_count + i]`, and within a channel the
/// first axis varies fastest.
template <typename T> class BasicVolume {
public:
    using value_type = T;

    BasicVolume() = default;

    BasicVolume(GridSpec grid, int channels, VolumeKind kind = VolumeKind::continuous)
        : grid_(std::move(grid)), channels_(channels), kind_(kind) {
        if (channels_ < 1) throw GeometryError("Volume: at least one channel required");
        data_.assign(static_cast<std::size_t>(channels_ * grid_.voxel_count()), T{});
    }

    BasicVolume(GridSpec grid, int channels, std::vector<T> data,
                VolumeKind kind = VolumeKind::continuous)
        : grid_(std::move(grid)), channels_(channels), data_(std::move(data)), kind_(kind) {
        if (channels_ < 1) throw GeometryError("Volume: at least one channel required");
        if (static_cast<std::int64_t>(data_.size()) != channels_ * grid_.voxel_count()) {
            throw GeometryError("Volume: data length " + std::to_string(data_.size()) +
                                " does not match channels x voxels");
        }
        if (kind_ == VolumeKind::labels) validate_labels();
    }

    static BasicVolume filled(GridSpec grid, int channels, T value) {
        BasicVolume v(std::move(grid), channels);
        std::fill(v.data_.begin(), v.data_.end(), value);
        return v;
    }

    const GridSpec& grid() const noexcept { return grid_; }
    int channels() const noexcept { return channels_; }
    VolumeKind kind() const noexcept { return kind_; }
    bool is_labels() const noexcept { return kind_ == VolumeKind::labels; }
    std::int64_t voxel_count() const { return grid_.voxel_count(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }

    std::span<T> channel(int c) {
        return std::span<T>(data_).subspan(static_cast<std::size_t>(c * voxel_count()),
                                           static_cast<std::size_t>(voxel_count()));
    }
    std::span<const T> channel(int c) const {
        return std::span<const T>(data_).subspan(static_cast<std::size_t>(c * voxel_count()),
                                                 static_cast<std::size_t>(voxel_count()));
    }

    void validate_labels() const {
        for (const T& v : data_) {
            const double x = static_cast<double>(v);
            if (!(x >= 0.0) || std::floor(x) != x) {
                throw GeometryError("Volume: label values must be non-negative integers");
            }
        }
    }

private:
    GridSpec grid_;
    int channels_ = 0;
    std::vector<T> data_;
    VolumeKind kind_ = VolumeKind::continuous;
};

using Volume = BasicVolume<double>;
using VolumeF = BasicVolume<float>;

/// Concatenates channel lists of volumes that share one grid.
template <typename T> BasicVolume<T> stack_channels(std::span<const BasicVolume<T>> parts) {
    if (parts.empty()) throw GeometryError("stack_channels: nothing to stack");
    int total = 0;
    for (const auto& p : parts) {
        if (!(p.grid() == parts.front().grid())) {
            throw GeometryError("stack_channels: volumes live on different grids");
        }
        total += p.channels();
    }
    std::vector<T> data;
    data.reserve(static_cast<std::size_t>(total * parts.front().voxel_count()));
    for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
    return BasicVolume<T>(parts.front().grid(), total, std::move(data));
}

} // namespace splat
