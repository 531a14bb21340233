// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"

namespace einsplit {

using SparseOperator = Eigen::SparseMatrix<double>;
using DofVector = Eigen::VectorXd;

/* Bilinear quad element matrices from a 2x2 Gauss rule on the reference
 * square. The rule is exact for these integrands, so the closed forms in
 * the test oracles must match to rounding. */
inline Eigen::Matrix4d element_mass(double hx, double hy)
{
    static const double gp[2] = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
    Eigen::Matrix4d Me = Eigen::Matrix4d::Zero();
    const double jac = hx * hy / 4.0;
    for (int qi = 0; qi < 2; qi++)
        for (int qj = 0; qj < 2; qj++) {
            const double xi = gp[qi], eta = gp[qj];
            const Eigen::Vector4d N{0.25 * (1 - xi) * (1 - eta), 0.25 * (1 + xi) * (1 - eta),
                                    0.25 * (1 + xi) * (1 + eta), 0.25 * (1 - xi) * (1 + eta)};
            Me += jac * N * N.transpose();
        }
    return Me;
}

inline Eigen::Matrix4d element_stiffness(double hx, double hy)
{
    static const double gp[2] = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
    Eigen::Matrix4d Ke = Eigen::Matrix4d::Zero();
    const double jac = hx * hy / 4.0;
    for (int qi = 0; qi < 2; qi++)
        for (int qj = 0; qj < 2; qj++) {
            const double xi = gp[qi], eta = gp[qj];
            Eigen::Matrix<double, 2, 4> G;
            G << -0.25 * (1 - eta), 0.25 * (1 - eta), 0.25 * (1 + eta), -0.25 * (1 + eta),
                 -0.25 * (1 - xi), -0.25 * (1 + xi), 0.25 * (1 + xi), 0.25 * (1 - xi);
            G.row(0) *= 2.0 / hx;
            G.row(1) *= 2.0 / hy;
            Ke += jac * G.transpose() * G;
        }
    return Ke;
}

inline SparseOperator
assemble_from_element(const MeshHierarchy& mesh, const Eigen::Matrix4d& E,
                      const Eigen::VectorXd& coeff)
{
    if (coeff.size() != mesh.num_cells())
        throw std::invalid_argument("per-cell coefficient size mismatch");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(16 * mesh.num_cells());
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        const double w = coeff[c];
        for (int a = 0; a < 4; a++)
            for (int b = 0; b < 4; b++)
                trip.emplace_back(n[a], n[b], w * E(a, b));
    }
    SparseOperator A(mesh.num_nodes(), mesh.num_nodes());
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

inline SparseOperator assemble_mass(const MeshHierarchy& mesh, const Eigen::VectorXd& weight)
{
    return assemble_from_element(mesh, element_mass(mesh.hx, mesh.hy), weight);
}

inline SparseOperator assemble_mass(const MeshHierarchy& mesh)
{
    return assemble_mass(mesh, Eigen::VectorXd::Ones(mesh.num_cells()));
}

inline SparseOperator
assemble_stiffness(const MeshHierarchy& mesh, const Eigen::VectorXd& coeff)
{
    return assemble_from_element(mesh, element_stiffness(mesh.hx, mesh.hy), coeff);
}

inline SparseOperator
assemble_nonlinear_stiffness(const MeshHierarchy& mesh, const PermeabilityField& field,
                             const NonlinearLaw& law, const Eigen::VectorXd& u)
{
    return assemble_stiffness(mesh, kappa_cellwise(mesh, field, law, u));
}

inline std::vector<uint8_t> boundary_mask(const MeshHierarchy& mesh)
{
    std::vector<uint8_t> mask(mesh.num_nodes(), 0);
    for (int n = 0; n < mesh.num_nodes(); n++) {
        const int i = n % (mesh.nx + 1), j = n / (mesh.nx + 1);
        if (i == 0 || i == mesh.nx || j == 0 || j == mesh.ny) mask[n] = 1;
    }
    return mask;
}

/* Symmetric elimination of fixed values: the lifted contribution moves to
 * the right side, rows and columns are cleared with a unit diagonal. */
inline void apply_dirichlet(SparseOperator& A, DofVector& b,
                            const std::vector<uint8_t>& mask, const DofVector& values)
{
    const int n = A.rows();
    if ((int)mask.size() != n || b.size() != n)
        throw std::invalid_argument("dirichlet mask size mismatch");

    for (int d = 0; d < n; d++) {
        if (!mask[d] || values[d] == 0.0) continue;
        b -= A.col(d) * values[d];
    }
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(A.nonZeros());
    for (int k = 0; k < A.outerSize(); k++)
        for (SparseOperator::InnerIterator it(A, k); it; ++it)
            if (!mask[it.row()] && !mask[it.col()])
                trip.emplace_back(it.row(), it.col(), it.value());
    for (int d = 0; d < n; d++)
        if (mask[d]) {
            trip.emplace_back(d, d, 1.0);
            b[d] = values[d];
        }
    SparseOperator out(n, n);
    out.setFromTriplets(trip.begin(), trip.end());
    A.swap(out);
}

inline DofVector build_load(const MeshHierarchy& mesh, const SparseOperator& M,
                            const SourceSpec& source)
{
    if (source.kind == SourceSpec::Kind::PointNode) {
        const int i = (int)std::llround(source.x / mesh.hx);
        const int j = (int)std::llround(source.y / mesh.hy);
        if (i < 0 || i > mesh.nx || j < 0 || j > mesh.ny)
            throw std::invalid_argument("point source outside the domain");
        DofVector b = DofVector::Zero(mesh.num_nodes());
        b[mesh.node_id(i, j)] = source.magnitude;
        return b;
    }
    if (source.field.size() != mesh.num_nodes())
        throw std::invalid_argument("source field size mismatch");
    return M * source.field;
}

inline DofVector solve_spd(const SparseOperator& A, const DofVector& b)
{
    Eigen::SimplicialLDLT<SparseOperator> ldlt(A);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("factorization failed, operator not SPD");
    DofVector x = ldlt.solve(b);
    x += ldlt.solve(b - A * x);
    const double rel = (A * x - b).norm() / std::max(1.0, b.norm());
    if (!(rel <= 1e-10))
        throw std::runtime_error("linear solve residual too large");
    return x;
}

inline double l2_norm(const SparseOperator& M, const DofVector& v)
{
    return std::sqrt(std::max(0.0, v.dot(M * v)));
}

inline double energy_norm(const SparseOperator& A, const DofVector& v)
{
    return std::sqrt(std::max(0.0, v.dot(A * v)));
}

// entries sorted by row then column, full precision
inline void dump_operator(std::ostream& os, const SparseOperator& A)
{
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(A.nonZeros());
    for (int k = 0; k < A.outerSize(); k++)
        for (SparseOperator::InnerIterator it(A, k); it; ++it)
            trip.emplace_back(it.row(), it.col(), it.value());
    std::sort(trip.begin(), trip.end(), [](const auto& a, const auto& b) {
        return a.row() != b.row() ? a.row() < b.row() : a.col() < b.col();
    });
    const auto prec = os.precision(17);
    for (const auto& t : trip)
        os << t.row() << " " << t.col() << " " << t.value() << "\n";
    os.precision(prec);
}

}  // namespace einsplit
