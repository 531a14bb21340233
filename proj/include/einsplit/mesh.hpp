// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace einsplit {

using CellSet = std::vector<int>;

/* Two-level tensor grid on a rectangle. Fine cells are bilinear quads,
 * coarse blocks are aligned groups of fine cells. Nodes and cells are
 * numbered row-major with y as the outer index. */
struct MeshHierarchy
{
    int    nx, ny;   // fine cells per direction
    int    Nx, Ny;   // coarse blocks per direction
    double Lx, Ly;
    double hx, hy;
    int    mx, my;   // fine cells per block per direction

    int num_nodes() const { return (nx + 1) * (ny + 1); }
    int num_cells() const { return nx * ny; }
    int num_blocks() const { return Nx * Ny; }

    int node_id(int i, int j) const { return j * (nx + 1) + i; }
    int cell_id(int ci, int cj) const { return cj * nx + ci; }
    int block_id(int bi, int bj) const { return bj * Nx + bi; }

    double node_x(int node) const { return (node % (nx + 1)) * hx; }
    double node_y(int node) const { return (node / (nx + 1)) * hy; }
    double cell_cx(int cell) const { return (cell % nx + 0.5) * hx; }
    double cell_cy(int cell) const { return (cell / nx + 0.5) * hy; }

    // counterclockwise from the lower-left corner
    std::array<int, 4> cell_nodes(int cell) const
    {
        const int ci = cell % nx, cj = cell / nx;
        const int n0 = node_id(ci, cj);
        return {n0, n0 + 1, n0 + nx + 2, n0 + nx + 1};
    }

    int block_of_cell(int cell) const
    {
        return block_id((cell % nx) / mx, (cell / nx) / my);
    }

    CellSet cells_of_block(int block) const
    {
        const int bi = block % Nx, bj = block / Nx;
        CellSet out;
        out.reserve(mx * my);
        for (int cj = bj * my; cj < (bj + 1) * my; cj++)
            for (int ci = bi * mx; ci < (bi + 1) * mx; ci++)
                out.push_back(cell_id(ci, cj));
        return out;
    }
};

inline MeshHierarchy
build_hierarchy(int nx, int ny, int Nx, int Ny, double Lx = 1.0, double Ly = 1.0)
{
    if (nx <= 0 || ny <= 0 || Nx <= 0 || Ny <= 0)
        throw std::invalid_argument("mesh sizes must be positive");
    if (Lx <= 0.0 || Ly <= 0.0)
        throw std::invalid_argument("domain extent must be positive");
    if (nx % Nx != 0 || ny % Ny != 0)
        throw std::invalid_argument("fine grid must be divisible by the coarse grid");

    MeshHierarchy m;
    m.nx = nx;
    m.ny = ny;
    m.Nx = Nx;
    m.Ny = Ny;
    m.Lx = Lx;
    m.Ly = Ly;
    m.hx = Lx / nx;
    m.hy = Ly / ny;
    m.mx = nx / Nx;
    m.my = ny / Ny;
    return m;
}

/* Rectangular patch of blocks around a home block: `layers` extra rings,
 * clipped at the domain edge. Node ranges are kept so the cut boundary is
 * recoverable without set arithmetic. */
struct OversampleRegion
{
    int              block;
    int              layers;
    std::vector<int> blocks;
    CellSet          cells;
    std::vector<int> nodes;
    int              i0, i1, j0, j1;   // inclusive node index ranges
};

inline OversampleRegion
oversample_region(const MeshHierarchy& mesh, int block, int layers)
{
    if (block < 0 || block >= mesh.num_blocks())
        throw std::invalid_argument("block index out of range");
    if (layers < 0)
        throw std::invalid_argument("layers must be nonnegative");

    const int bi = block % mesh.Nx, bj = block / mesh.Nx;
    const int bi0 = std::max(0, bi - layers), bi1 = std::min(mesh.Nx - 1, bi + layers);
    const int bj0 = std::max(0, bj - layers), bj1 = std::min(mesh.Ny - 1, bj + layers);

    OversampleRegion r;
    r.block = block;
    r.layers = layers;
    for (int j = bj0; j <= bj1; j++)
        for (int i = bi0; i <= bi1; i++)
            r.blocks.push_back(mesh.block_id(i, j));

    for (int cj = bj0 * mesh.my; cj < (bj1 + 1) * mesh.my; cj++)
        for (int ci = bi0 * mesh.mx; ci < (bi1 + 1) * mesh.mx; ci++)
            r.cells.push_back(mesh.cell_id(ci, cj));

    r.i0 = bi0 * mesh.mx;
    r.i1 = (bi1 + 1) * mesh.mx;
    r.j0 = bj0 * mesh.my;
    r.j1 = (bj1 + 1) * mesh.my;
    for (int j = r.j0; j <= r.j1; j++)
        for (int i = r.i0; i <= r.i1; i++)
            r.nodes.push_back(mesh.node_id(i, j));
    return r;
}

/* Local numbering for a patch. A node is constrained only where the patch
 * is cut out of the interior; patch edges lying on the domain boundary
 * stay free, matching the zero-flux outer condition. */
struct LocalDofMap
{
    std::vector<int>     to_global;
    std::vector<int>     to_local;   // sized to the full mesh, -1 elsewhere
    std::vector<uint8_t> free_node;  // per local node
    int                  num_free;
};

inline LocalDofMap
local_dof_map(const MeshHierarchy& mesh, const OversampleRegion& region)
{
    LocalDofMap map;
    map.to_global = region.nodes;
    map.to_local.assign(mesh.num_nodes(), -1);
    for (int l = 0; l < (int)region.nodes.size(); l++)
        map.to_local[region.nodes[l]] = l;

    map.free_node.assign(region.nodes.size(), 1);
    map.num_free = 0;
    for (int l = 0; l < (int)region.nodes.size(); l++) {
        const int g = map.to_global[l];
        const int i = g % (mesh.nx + 1), j = g / (mesh.nx + 1);
        bool cut = false;
        if (region.i0 > 0 && i == region.i0) cut = true;
        if (region.i1 < mesh.nx && i == region.i1) cut = true;
        if (region.j0 > 0 && j == region.j0) cut = true;
        if (region.j1 < mesh.ny && j == region.j1) cut = true;
        map.free_node[l] = cut ? 0 : 1;
        if (!cut) map.num_free++;
    }
    return map;
}

}  // namespace einsplit
