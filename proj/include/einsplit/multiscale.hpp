// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "einsplit/fem.hpp"
#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"

namespace einsplit {

/* Per-block continua: high-permeability cells split into connected
 * components (4-neighbor, within the block), the rest is the matrix
 * continuum. The default threshold is the geometric mean of the field
 * range, so any contrast above ~4 orders separates cleanly. */
struct ContinuumPartition
{
    struct Block
    {
        CellSet              matrix_cells;
        std::vector<CellSet> fracture_continua;
    };

    double             threshold = 0.0;
    std::vector<Block> blocks;

    int total_fracture_continua() const
    {
        int n = 0;
        for (const auto& b : blocks) n += (int)b.fracture_continua.size();
        return n;
    }
};

inline ContinuumPartition
partition_continua(const MeshHierarchy& mesh, const PermeabilityField& field,
                   double threshold = 0.0)
{
    if (field.values.size() != mesh.num_cells())
        throw std::invalid_argument("field does not match the mesh");
    const double lo = field.values.minCoeff(), hi = field.values.maxCoeff();
    if (threshold > 0.0 && (threshold <= lo || threshold >= hi))
        throw std::invalid_argument("threshold outside the open field range");
    ContinuumPartition part;
    part.threshold = threshold > 0.0 ? threshold : std::sqrt(lo * hi);

    // a uniform field has no usable threshold and carries no fractures
    std::vector<uint8_t> frac(mesh.num_cells());
    if (hi > lo)
        for (int c = 0; c < mesh.num_cells(); c++)
            frac[c] = field.values[c] >= part.threshold;

    part.blocks.resize(mesh.num_blocks());
    std::vector<int> label(mesh.num_cells(), -1);
    for (int b = 0; b < mesh.num_blocks(); b++) {
        auto& blk = part.blocks[b];
        const CellSet cells = mesh.cells_of_block(b);
        for (int c : cells)
            if (!frac[c]) blk.matrix_cells.push_back(c);

        for (int seed : cells) {
            if (!frac[seed] || label[seed] >= 0) continue;
            CellSet comp;
            std::vector<int> stack{seed};
            label[seed] = b;
            while (!stack.empty()) {
                const int c = stack.back();
                stack.pop_back();
                comp.push_back(c);
                const int ci = c % mesh.nx, cj = c / mesh.nx;
                const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; k++) {
                    const int ni = ci + di[k], nj = cj + dj[k];
                    if (ni < 0 || ni >= mesh.nx || nj < 0 || nj >= mesh.ny) continue;
                    const int nc = mesh.cell_id(ni, nj);
                    if (mesh.block_of_cell(nc) != b || !frac[nc] || label[nc] >= 0) continue;
                    label[nc] = b;
                    stack.push_back(nc);
                }
            }
            std::sort(comp.begin(), comp.end());
            blk.fracture_continua.push_back(std::move(comp));
        }
    }
    return part;
}

/* An auxiliary function lives on the nodes touched by its generating cell
 * set; constraints integrate products against it over those cells. */
struct AuxFunction
{
    CellSet          cells;
    std::vector<int> nodes;
    Eigen::VectorXd  values;
    double           eigenvalue = 0.0;
};

struct AuxiliarySpace
{
    enum class Mode { Indicator, Spectral };

    struct Block
    {
        std::vector<AuxFunction> fracture;   // feeds the first coarse component
        std::vector<AuxFunction> matrix;     // feeds the second
    };

    Mode               mode = Mode::Indicator;
    std::vector<Block> blocks;
};

namespace detail {

inline std::vector<int> nodes_of_cells(const MeshHierarchy& mesh, const CellSet& cells)
{
    std::vector<int> nodes;
    nodes.reserve(4 * cells.size());
    for (int c : cells) {
        const auto n = mesh.cell_nodes(c);
        nodes.insert(nodes.end(), n.begin(), n.end());
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    return nodes;
}

inline AuxFunction indicator_aux(const MeshHierarchy& mesh, CellSet cells)
{
    AuxFunction f;
    f.cells = std::move(cells);
    f.nodes = nodes_of_cells(mesh, f.cells);
    f.values = Eigen::VectorXd::Ones(f.nodes.size());
    return f;
}

}  // namespace detail

inline AuxiliarySpace
nlmc_aux_space(const MeshHierarchy& mesh, const ContinuumPartition& part)
{
    AuxiliarySpace aux;
    aux.mode = AuxiliarySpace::Mode::Indicator;
    aux.blocks.resize(part.blocks.size());
    for (size_t b = 0; b < part.blocks.size(); b++) {
        for (const auto& comp : part.blocks[b].fracture_continua)
            aux.blocks[b].fracture.push_back(detail::indicator_aux(mesh, comp));
        aux.blocks[b].matrix.push_back(detail::indicator_aux(mesh, part.blocks[b].matrix_cells));
    }
    return aux;
}

/* Leading generalized eigenpairs of the frozen-coefficient stiffness
 * against mass, restricted to a cell set with natural conditions. */
inline std::vector<AuxFunction>
spectral_cellset(const MeshHierarchy& mesh, const CellSet& cells,
                 const Eigen::VectorXd& kappa0, int count)
{
    std::vector<AuxFunction> out;
    if (cells.empty() || count <= 0) return out;

    const std::vector<int> nodes = detail::nodes_of_cells(mesh, cells);
    std::vector<int> g2l(mesh.num_nodes(), -1);
    for (size_t l = 0; l < nodes.size(); l++) g2l[nodes[l]] = (int)l;

    const Eigen::Matrix4d Me = element_mass(mesh.hx, mesh.hy);
    const Eigen::Matrix4d Ke = element_stiffness(mesh.hx, mesh.hy);
    const int nd = (int)nodes.size();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(nd, nd);
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(nd, nd);
    for (int c : cells) {
        const auto n = mesh.cell_nodes(c);
        for (int a = 0; a < 4; a++)
            for (int b = 0; b < 4; b++) {
                S(g2l[n[a]], g2l[n[b]]) += kappa0[c] * Ke(a, b);
                T(g2l[n[a]], g2l[n[b]]) += Me(a, b);
            }
    }

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(S, T);
    if (ges.info() != Eigen::Success)
        throw std::runtime_error("local eigenproblem failed");
    const int take = std::min(count, nd);
    for (int k = 0; k < take; k++) {
        AuxFunction f;
        f.cells = cells;
        f.nodes = nodes;
        f.values = ges.eigenvectors().col(k);
        f.eigenvalue = ges.eigenvalues()[k];
        out.push_back(std::move(f));
    }
    return out;
}

inline std::vector<std::vector<AuxFunction>>
spectral_fracture(const MeshHierarchy& mesh, const ContinuumPartition& part,
                  const Eigen::VectorXd& kappa0, int l1)
{
    std::vector<std::vector<AuxFunction>> out(part.blocks.size());
    for (size_t b = 0; b < part.blocks.size(); b++) {
        CellSet un;
        for (const auto& comp : part.blocks[b].fracture_continua)
            un.insert(un.end(), comp.begin(), comp.end());
        std::sort(un.begin(), un.end());
        out[b] = spectral_cellset(mesh, un, kappa0, l1);
    }
    return out;
}

inline std::vector<std::vector<AuxFunction>>
spectral_matrix(const MeshHierarchy& mesh, const ContinuumPartition& part,
                const Eigen::VectorXd& kappa0, int l2)
{
    std::vector<std::vector<AuxFunction>> out(part.blocks.size());
    for (size_t b = 0; b < part.blocks.size(); b++)
        out[b] = spectral_cellset(mesh, part.blocks[b].matrix_cells, kappa0, l2);
    return out;
}

inline AuxiliarySpace
enlmc_aux_space(const MeshHierarchy& mesh, const ContinuumPartition& part,
                const Eigen::VectorXd& kappa0, int l1, int l2)
{
    AuxiliarySpace aux;
    aux.mode = AuxiliarySpace::Mode::Spectral;
    aux.blocks.resize(part.blocks.size());
    auto fr = spectral_fracture(mesh, part, kappa0, l1);
    auto ma = spectral_matrix(mesh, part, kappa0, l2);
    for (size_t b = 0; b < part.blocks.size(); b++) {
        aux.blocks[b].fracture = std::move(fr[b]);
        aux.blocks[b].matrix = std::move(ma[b]);
    }
    return aux;
}

/* Column tags: m > 0 is the m-th fracture function of the block, m <= 0
 * the (-m)-th matrix function. */
struct MultiscaleBasis
{
    enum class Variant { Nlmc, Enlmc };

    struct Tag
    {
        int block;
        int m;
    };

    Variant          variant = Variant::Nlmc;
    int              layers = 2;
    Eigen::MatrixXd  Psi1, Psi2;
    std::vector<Tag> tags1, tags2;
    double           max_constraint_residual = 0.0;

    int fine_dofs() const { return (int)Psi1.rows(); }
    int d1() const { return (int)Psi1.cols(); }
    int d2() const { return (int)Psi2.cols(); }
};

namespace detail {

/* Saddle solve per oversampled region: minimize the frozen-coefficient
 * energy subject to moment constraints against every auxiliary function
 * of every block in the region; the right side selects one function of
 * the home block. Nodes on the cut boundary are held at zero. */
inline void build_basis_block(const MeshHierarchy& mesh, const AuxiliarySpace& aux,
                              const Eigen::VectorXd& kappa0, int layers, int home,
                              MultiscaleBasis& basis, int& col1, int& col2)
{
    const OversampleRegion region = oversample_region(mesh, home, layers);
    const LocalDofMap map = local_dof_map(mesh, region);

    std::vector<int> g2f(mesh.num_nodes(), -1);
    std::vector<int> free_nodes;
    for (size_t l = 0; l < map.to_global.size(); l++)
        if (map.free_node[l]) {
            g2f[map.to_global[l]] = (int)free_nodes.size();
            free_nodes.push_back(map.to_global[l]);
        }
    const int nf = (int)free_nodes.size();

    const Eigen::Matrix4d Me = element_mass(mesh.hx, mesh.hy);
    const Eigen::Matrix4d Ke = element_stiffness(mesh.hx, mesh.hy);

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(16 * region.cells.size());
    for (int c : region.cells) {
        const auto n = mesh.cell_nodes(c);
        for (int a = 0; a < 4; a++) {
            const int ra = g2f[n[a]];
            if (ra < 0) continue;
            for (int b = 0; b < 4; b++) {
                const int rb = g2f[n[b]];
                if (rb >= 0) trip.emplace_back(ra, rb, kappa0[c] * Ke(a, b));
            }
        }
    }

    // constraint rows against the free dofs, one per auxiliary function
    struct Key
    {
        int block, m;   // same encoding as the column tags
    };
    std::vector<Key> keys;
    std::vector<Eigen::VectorXd> rows;
    std::vector<int> a2l(mesh.num_nodes(), -1);
    for (int j : region.blocks) {
        const auto& blk = aux.blocks[j];
        for (int grp = 0; grp < 2; grp++) {
            const auto& fns = grp == 0 ? blk.fracture : blk.matrix;
            for (size_t k = 0; k < fns.size(); k++) {
                const AuxFunction& f = fns[k];
                Eigen::VectorXd row = Eigen::VectorXd::Zero(nf);
                int pos = 0;
                for (int an : f.nodes) a2l[an] = pos++;
                for (int c : f.cells) {
                    const auto n = mesh.cell_nodes(c);
                    Eigen::Vector4d vloc;
                    for (int a = 0; a < 4; a++) vloc[a] = f.values[a2l[n[a]]];
                    const Eigen::Vector4d pv = Me * vloc;
                    for (int a = 0; a < 4; a++)
                        if (g2f[n[a]] >= 0) row[g2f[n[a]]] += pv[a];
                }
                rows.push_back(std::move(row));
                keys.push_back({j, grp == 0 ? (int)k + 1 : -(int)k});
            }
        }
    }

    const int nc = (int)rows.size();
    for (int r = 0; r < nc; r++)
        for (int cidx = 0; cidx < nf; cidx++)
            if (rows[r][cidx] != 0.0) {
                trip.emplace_back(nf + r, cidx, rows[r][cidx]);
                trip.emplace_back(cidx, nf + r, rows[r][cidx]);
            }

    SparseOperator S(nf + nc, nf + nc);
    S.setFromTriplets(trip.begin(), trip.end());
    S.makeCompressed();
    Eigen::SparseLU<SparseOperator> lu(S);
    if (lu.info() != Eigen::Success)
        throw std::runtime_error("saddle factorization failed in basis build");

    const auto solve_one = [&](int key_index, Eigen::VectorXd& psi, double& res) {
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nf + nc);
        rhs[nf + key_index] = 1.0;
        Eigen::VectorXd sol = lu.solve(rhs);
        sol += lu.solve(rhs - S * sol);   // one refinement pass for high contrast
        psi = Eigen::VectorXd::Zero(mesh.num_nodes());
        for (int l = 0; l < nf; l++) psi[free_nodes[l]] = sol[l];
        res = 0.0;
        for (int r = 0; r < nc; r++) {
            const double target = r == key_index ? 1.0 : 0.0;
            res = std::max(res, std::abs(rows[r].dot(sol.head(nf)) - target));
        }
    };

    const auto& blk = aux.blocks[home];
    for (size_t k = 0; k < blk.fracture.size(); k++) {
        int ki = -1;
        for (int r = 0; r < nc; r++)
            if (keys[r].block == home && keys[r].m == (int)k + 1) ki = r;
        Eigen::VectorXd psi;
        double res;
        solve_one(ki, psi, res);
        basis.max_constraint_residual = std::max(basis.max_constraint_residual, res);
        basis.Psi1.col(col1) = psi;
        basis.tags1[col1] = {home, (int)k + 1};
        col1++;
    }
    for (size_t k = 0; k < blk.matrix.size(); k++) {
        int ki = -1;
        for (int r = 0; r < nc; r++)
            if (keys[r].block == home && keys[r].m == -(int)k) ki = r;
        Eigen::VectorXd psi;
        double res;
        solve_one(ki, psi, res);
        basis.max_constraint_residual = std::max(basis.max_constraint_residual, res);
        basis.Psi2.col(col2) = psi;
        basis.tags2[col2] = {home, -(int)k};
        col2++;
    }
}

}  // namespace detail

inline MultiscaleBasis
build_basis(const MeshHierarchy& mesh, const AuxiliarySpace& aux,
            const Eigen::VectorXd& kappa0, int layers, MultiscaleBasis::Variant variant)
{
    if ((int)aux.blocks.size() != mesh.num_blocks())
        throw std::invalid_argument("auxiliary space does not match the mesh");
    if (kappa0.size() != mesh.num_cells())
        throw std::invalid_argument("coefficient does not match the mesh");

    int d1 = 0, d2 = 0;
    for (const auto& b : aux.blocks) {
        d1 += (int)b.fracture.size();
        d2 += (int)b.matrix.size();
    }

    MultiscaleBasis basis;
    basis.variant = variant;
    basis.layers = layers;
    basis.Psi1 = Eigen::MatrixXd::Zero(mesh.num_nodes(), d1);
    basis.Psi2 = Eigen::MatrixXd::Zero(mesh.num_nodes(), d2);
    basis.tags1.resize(d1);
    basis.tags2.resize(d2);

    int col1 = 0, col2 = 0;
    for (int b = 0; b < mesh.num_blocks(); b++)
        detail::build_basis_block(mesh, aux, kappa0, layers, b, basis, col1, col2);
    return basis;
}

inline MultiscaleBasis
build_nlmc_basis(const MeshHierarchy& mesh, const ContinuumPartition& part,
                 const Eigen::VectorXd& kappa0, int layers)
{
    return build_basis(mesh, nlmc_aux_space(mesh, part), kappa0, layers,
                       MultiscaleBasis::Variant::Nlmc);
}

inline MultiscaleBasis
build_enlmc_basis(const MeshHierarchy& mesh, const ContinuumPartition& part,
                  const Eigen::VectorXd& kappa0, int l1, int l2, int layers,
                  AuxiliarySpace::Mode mode = AuxiliarySpace::Mode::Spectral)
{
    const AuxiliarySpace aux = mode == AuxiliarySpace::Mode::Spectral
                                   ? enlmc_aux_space(mesh, part, kappa0, l1, l2)
                                   : nlmc_aux_space(mesh, part);
    return build_basis(mesh, aux, kappa0, layers, MultiscaleBasis::Variant::Enlmc);
}

struct CoarseOperators
{
    Eigen::MatrixXd M11, M12, M22;
    Eigen::MatrixXd A11, A12, A22;
    Eigen::VectorXd f1, f2;
};

inline void
project_operator(const MultiscaleBasis& basis, const SparseOperator& A,
                 Eigen::MatrixXd& B11, Eigen::MatrixXd& B12, Eigen::MatrixXd& B22)
{
    const Eigen::MatrixXd AP1 = A * basis.Psi1;
    const Eigen::MatrixXd AP2 = A * basis.Psi2;
    B11 = basis.Psi1.transpose() * AP1;
    B12 = basis.Psi1.transpose() * AP2;
    B22 = basis.Psi2.transpose() * AP2;
}

inline CoarseOperators
coarse_operators(const MultiscaleBasis& basis, const SparseOperator& M,
                 const SparseOperator& A0, const DofVector& load)
{
    CoarseOperators ops;
    project_operator(basis, M, ops.M11, ops.M12, ops.M22);
    project_operator(basis, A0, ops.A11, ops.A12, ops.A22);
    ops.f1 = basis.Psi1.transpose() * load;
    ops.f2 = basis.Psi2.transpose() * load;
    return ops;
}

inline DofVector
prolongate(const MultiscaleBasis& basis, const Eigen::VectorXd& c1, const Eigen::VectorXd& c2)
{
    return basis.Psi1 * c1 + basis.Psi2 * c2;
}

inline void save_basis(std::ostream& os, const MultiscaleBasis& basis)
{
    const auto prec = os.precision(17);
    os << basis.fine_dofs() << " " << basis.d1() + basis.d2() << " "
       << (basis.variant == MultiscaleBasis::Variant::Nlmc ? "nlmc" : "enlmc") << " "
       << basis.layers << "\n";
    const auto dump = [&](const Eigen::MatrixXd& P, const std::vector<MultiscaleBasis::Tag>& tags) {
        for (int c = 0; c < P.cols(); c++) {
            os << tags[c].block << " " << tags[c].m << "\n";
            for (int r = 0; r < P.rows(); r++) os << (r ? " " : "") << P(r, c);
            os << "\n";
        }
    };
    dump(basis.Psi1, basis.tags1);
    dump(basis.Psi2, basis.tags2);
    os.precision(prec);
}

inline MultiscaleBasis load_basis(std::istream& is)
{
    int fine_dofs = 0, ncols = 0, layers = 0;
    std::string variant;
    if (!(is >> fine_dofs >> ncols >> variant >> layers))
        throw std::runtime_error("bad basis header");

    MultiscaleBasis basis;
    basis.layers = layers;
    if (variant == "nlmc")
        basis.variant = MultiscaleBasis::Variant::Nlmc;
    else if (variant == "enlmc")
        basis.variant = MultiscaleBasis::Variant::Enlmc;
    else
        throw std::runtime_error("unknown basis variant: " + variant);

    std::vector<std::pair<MultiscaleBasis::Tag, Eigen::VectorXd>> cols1, cols2;
    for (int c = 0; c < ncols; c++) {
        MultiscaleBasis::Tag tag;
        if (!(is >> tag.block >> tag.m))
            throw std::runtime_error("basis file ended early");
        Eigen::VectorXd v(fine_dofs);
        for (int r = 0; r < fine_dofs; r++)
            if (!(is >> v[r]))
                throw std::runtime_error("basis file ended early");
        (tag.m > 0 ? cols1 : cols2).emplace_back(tag, std::move(v));
    }
    basis.Psi1.resize(fine_dofs, cols1.size());
    basis.Psi2.resize(fine_dofs, cols2.size());
    for (size_t c = 0; c < cols1.size(); c++) {
        basis.tags1.push_back(cols1[c].first);
        basis.Psi1.col(c) = cols1[c].second;
    }
    for (size_t c = 0; c < cols2.size(); c++) {
        basis.tags2.push_back(cols2[c].first);
        basis.Psi2.col(c) = cols2[c].second;
    }
    return basis;
}

}  // namespace einsplit
