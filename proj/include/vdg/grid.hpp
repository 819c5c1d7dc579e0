#pragma once

// Uniform node grids in one or two dimensions and vector-valued node fields.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace vdg {

/// Uniform grid of nodes x = lower + h * (i, j). Each node owns the cell
/// [x - h/2, x + h/2]^n; the union of these cells is the computational box.
struct Grid {
    int dim = 1;
    std::array<std::size_t, 2> nodes{3, 1};
    std::array<double, 2> lower{0.0, 0.0};
    double h = 1.0;

    static Grid make(int dim, std::array<std::size_t, 2> nodes, std::array<double, 2> lower, double h) {
        if (dim != 1 && dim != 2) throw DomainError("grid dimension must be 1 or 2");
        if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("grid spacing must be positive");
        if (dim == 1) nodes[1] = 1;
        for (int a = 0; a < dim; ++a)
            if (nodes[static_cast<std::size_t>(a)] < 3) throw DomainError("grid needs at least 3 nodes per axis");
        if (dim == 1) lower[1] = 0.0;
        return Grid{dim, nodes, lower, h};
    }

    /// Grid covering [lo, hi] per axis with the given node count per axis.
    static Grid spanning(int dim, std::size_t per_axis, double lo, double hi) {
        if (!(hi > lo)) throw DomainError("grid extent must be non-empty");
        const double h = (hi - lo) / static_cast<double>(per_axis - 1);
        return make(dim, {per_axis, dim == 2 ? per_axis : 1}, {lo, dim == 2 ? lo : 0.0}, h);
    }

    std::size_t size() const noexcept { return nodes[0] * nodes[1]; }
    std::size_t index(std::size_t i, std::size_t j = 0) const noexcept { return i + nodes[0] * j; }
    std::size_t ix(std::size_t k) const noexcept { return k % nodes[0]; }
    std::size_t iy(std::size_t k) const noexcept { return k / nodes[0]; }

    double coord(std::size_t k, int axis) const noexcept {
        const std::size_t i = axis == 0 ? ix(k) : iy(k);
        return lower[static_cast<std::size_t>(axis)] + h * static_cast<double>(i);
    }
    std::array<double, 2> point(std::size_t k) const noexcept {
        return {coord(k, 0), dim == 2 ? coord(k, 1) : 0.0};
    }

    double box_lower(int axis) const noexcept { return lower[static_cast<std::size_t>(axis)] - 0.5 * h; }
    double box_upper(int axis) const noexcept {
        return lower[static_cast<std::size_t>(axis)] + h * (static_cast<double>(nodes[static_cast<std::size_t>(axis)]) - 0.5);
    }
    double cell_volume() const noexcept { return dim == 2 ? h * h : h; }

    bool on_box_boundary(std::size_t k) const noexcept {
        const std::size_t i = ix(k), j = iy(k);
        if (i == 0 || i + 1 == nodes[0]) return true;
        return dim == 2 && (j == 0 || j + 1 == nodes[1]);
    }

    bool operator==(const Grid&) const = default;
};

/// A ball in physical space (dimension taken from the grid it is used with).
struct Ball {
    std::array<double, 2> center{0.0, 0.0};
    double radius = 1.0;

    Ball scaled(double factor) const { return {center, radius * factor}; }

    double distance(const Grid& g, std::size_t k) const {
        const auto x = g.point(k);
        const double dx = x[0] - center[0], dy = g.dim == 2 ? x[1] - center[1] : 0.0;
        return std::sqrt(dx * dx + dy * dy);
    }
    bool contains(const Grid& g, std::size_t k) const { return distance(g, k) <= radius; }
};

/// Node membership of a ball: a node belongs iff its center lies in the closed ball.
inline std::vector<std::uint8_t> ball_mask(const Grid& g, const Ball& b) {
    std::vector<std::uint8_t> mask(g.size(), 0);
    for (std::size_t k = 0; k < g.size(); ++k) mask[k] = b.contains(g, k) ? 1 : 0;
    return mask;
}

inline std::size_t count(const std::vector<std::uint8_t>& mask) {
    std::size_t c = 0;
    for (auto m : mask) c += m ? 1 : 0;
    return c;
}

enum class NodeRole : std::uint8_t { Interior = 0, Boundary = 1 };

/// R^N-valued field sampled at grid nodes; boundary-role nodes carry fixed data.
struct VectorField {
    Grid grid;
    std::size_t components = 1;
    std::vector<double> values;   // node-major: values[k * components + c]
    std::vector<NodeRole> roles;

    VectorField() = default;
    VectorField(Grid g, std::size_t n_comp)
        : grid(g), components(n_comp), values(g.size() * n_comp, 0.0), roles(g.size(), NodeRole::Interior) {
        if (n_comp < 1) throw DomainError("field needs at least one component");
    }

    std::span<double> at(std::size_t k) { return {values.data() + k * components, components}; }
    std::span<const double> at(std::size_t k) const { return {values.data() + k * components, components}; }

    double norm_at(std::size_t k) const {
        double s = 0.0;
        for (double v : at(k)) s += v * v;
        return std::sqrt(s);
    }
    bool is_boundary(std::size_t k) const { return roles[k] == NodeRole::Boundary; }

    /// Tag the outer layer of grid nodes as boundary.
    void mark_box_boundary() {
        for (std::size_t k = 0; k < grid.size(); ++k)
            roles[k] = grid.on_box_boundary(k) ? NodeRole::Boundary : NodeRole::Interior;
    }

    double sup_norm() const {
        double m = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k) m = std::max(m, norm_at(k));
        return m;
    }
};

// ---------------------------------------------------------------------------
// Serialization

/// CSV with one row per node: node index, coordinates, components.
inline void write_csv(const VectorField& f, std::ostream& os) {
    os << "node,x";
    if (f.grid.dim == 2) os << ",y";
    for (std::size_t c = 0; c < f.components; ++c) os << ",u" << c;
    os << '\n';
    char buf[64];
    for (std::size_t k = 0; k < f.grid.size(); ++k) {
        os << k;
        for (int a = 0; a < f.grid.dim; ++a) {
            std::snprintf(buf, sizeof buf, ",%.17g", f.grid.coord(k, a));
            os << buf;
        }
        for (double v : f.at(k)) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            os << buf;
        }
        os << '\n';
    }
}

/// Header of the binary field dump: 32 bytes, little-endian.
struct FieldHeader {
    char magic[4] = {'O', 'D', 'G', 'F'};
    std::uint32_t version = 1;
    std::uint32_t dim = 0;
    std::uint32_t components = 0;
    std::uint32_t extents[2] = {0, 0};
    std::uint64_t reserved = 0;
};
static_assert(sizeof(FieldHeader) == 32);

/// Binary dump: FieldHeader followed by node-major doubles (row-major over j, i).
inline void write_binary(const VectorField& f, std::ostream& os) {
    FieldHeader h;
    h.dim = static_cast<std::uint32_t>(f.grid.dim);
    h.components = static_cast<std::uint32_t>(f.components);
    h.extents[0] = static_cast<std::uint32_t>(f.grid.nodes[0]);
    h.extents[1] = static_cast<std::uint32_t>(f.grid.nodes[1]);
    os.write(reinterpret_cast<const char*>(&h), sizeof h);
    os.write(reinterpret_cast<const char*>(f.values.data()),
             static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

struct BinaryField {
    FieldHeader header;
    std::vector<double> values;
};

inline BinaryField read_binary(std::istream& is) {
    BinaryField out;
    if (!is.read(reinterpret_cast<char*>(&out.header), sizeof out.header))
        throw DomainError("field dump: truncated header");
    if (std::memcmp(out.header.magic, "ODGF", 4) != 0) throw DomainError("field dump: bad magic");
    if (out.header.version != 1) throw DomainError("field dump: unsupported version");
    const std::size_t n = static_cast<std::size_t>(out.header.extents[0]) * out.header.extents[1] * out.header.components;
    out.values.resize(n);
    if (!is.read(reinterpret_cast<char*>(out.values.data()), static_cast<std::streamsize>(n * sizeof(double))))
        throw DomainError("field dump: truncated payload");
    return out;
}

} // namespace vdg
