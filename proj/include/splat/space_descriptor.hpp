#pragma once

// JSON sidecar describing a mean space:
//   {"dims":[...], "affine":[[...],...], "voxel_size":[...]}
// Affine rows are row-major, D+1 of them; entries carry 17 significant
// digits so a descriptor reproduces the affine bit for bit.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splat/errors.hpp"
#include "splat/geometry.hpp"

namespace splat {

struct SpaceDescriptor {
    GridSpec grid;
    Vector voxel_size;

    static SpaceDescriptor from_grid(const GridSpec& g) {
        const Matrix lin = g.affine().linear();
        Vector vs(g.dim());
        for (int k = 0; k < g.dim(); ++k) vs(k) = lin.col(k).norm();
        return {g, vs};
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.16e", v);
    return buf;
}

} // namespace detail

inline std::string to_json(const SpaceDescriptor& s) {
    std::ostringstream out;
    const int d = s.grid.dim();
    out << "{\n  \"dims\": [";
    for (int k = 0; k < d; ++k) out << (k ? ", " : "") << s.grid.dims(k);
    out << "],\n  \"affine\": [\n";
    const Matrix& a = s.grid.affine().matrix();
    for (int r = 0; r <= d; ++r) {
        out << "    [";
        for (int c = 0; c <= d; ++c) out << (c ? ", " : "") << detail::format_double(a(r, c));
        out << "]" << (r < d ? "," : "") << "\n";
    }
    out << "  ],\n  \"voxel_size\": [";
    for (int k = 0; k < s.voxel_size.size(); ++k) {
        out << (k ? ", " : "") << detail::format_double(s.voxel_size(k));
    }
    out << "]\n}\n";
    return out.str();
}

inline SpaceDescriptor space_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("space descriptor: ") + e.what());
    }
    try {
        const auto dims = j.at("dims").get<std::vector<std::int64_t>>();
        const auto rows = j.at("affine").get<std::vector<std::vector<double>>>();
        const auto d = static_cast<Eigen::Index>(dims.size());
        if (static_cast<Eigen::Index>(rows.size()) != d + 1) {
            throw GeometryError("space descriptor: affine must have D+1 rows");
        }
        Matrix m(d + 1, d + 1);
        for (Eigen::Index r = 0; r <= d; ++r) {
            const auto& row = rows[static_cast<std::size_t>(r)];
            if (static_cast<Eigen::Index>(row.size()) != d + 1) {
                throw GeometryError("space descriptor: affine rows must have D+1 entries");
            }
            for (Eigen::Index c = 0; c <= d; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
        }
        GridSpec grid(dims, AffineMap(m));
        Vector vs;
        if (j.contains("voxel_size")) {
            const auto v = j.at("voxel_size").get<std::vector<double>>();
            vs = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        } else {
            vs = SpaceDescriptor::from_grid(grid).voxel_size;
        }
        return {std::move(grid), std::move(vs)};
    } catch (const nlohmann::json::exception& e) {
        throw GeometryError(std::string("space descriptor: ") + e.what());
    }
}

inline void write_space(const SpaceDescriptor& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << to_json(s);
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline SpaceDescriptor read_space(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return space_from_json(ss.str());
}

} // namespace splat
