// SPDX-License-Identifier: Apache-2.0

/* Brute-force counterparts of the fast paths, kept deliberately independent:
 * dense storage, textbook loops, no shared kernels. They exist to check the
 * library, not to be fast. */

#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"

namespace einsplit {
namespace oracle {

inline Eigen::Matrix4d element_mass_closed_form(double hx, double hy)
{
    Eigen::Matrix4d m;
    m << 4, 2, 1, 2, 2, 4, 2, 1, 1, 2, 4, 2, 2, 1, 2, 4;
    return (hx * hy / 36.0) * m;
}

inline Eigen::Matrix4d element_stiffness_closed_form(double hx, double hy)
{
    Eigen::Matrix4d kxx, kyy;
    kxx << 2, -2, -1, 1, -2, 2, 1, -1, -1, 1, 2, -2, 1, -1, -2, 2;
    kyy << 2, 1, -1, -2, 1, 2, -2, -1, -1, -2, 2, 1, -2, -1, 1, 2;
    return (hy / hx) * kxx / 6.0 + (hx / hy) * kyy / 6.0;
}

/* Dense assembly with 3x3 Gauss per cell. The integrands are polynomial of
 * low enough degree that this and the 2x2 rule are both exact, so agreement
 * is to rounding. */
inline Eigen::MatrixXd dense_mass(const MeshHierarchy& mesh, double weight = 1.0)
{
    static const std::array<double, 3> gp = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
    static const std::array<double, 3> gw = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(mesh.num_nodes(), mesh.num_nodes());
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        for (int qx = 0; qx < 3; qx++)
            for (int qy = 0; qy < 3; qy++) {
                const double x = gp[qx], y = gp[qy];
                const std::array<double, 4> phi = {
                    0.25 * (1 - x) * (1 - y), 0.25 * (1 + x) * (1 - y),
                    0.25 * (1 + x) * (1 + y), 0.25 * (1 - x) * (1 + y)};
                const double w = gw[qx] * gw[qy] * mesh.hx * mesh.hy / 4.0;
                for (int a = 0; a < 4; a++)
                    for (int b = 0; b < 4; b++)
                        M(n[a], n[b]) += weight * w * phi[a] * phi[b];
            }
    }
    return M;
}

inline Eigen::MatrixXd dense_stiffness(const MeshHierarchy& mesh, const Eigen::VectorXd& coeff)
{
    if (coeff.size() != mesh.num_cells())
        throw std::invalid_argument("coefficient does not match the mesh");
    static const std::array<double, 3> gp = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
    static const std::array<double, 3> gw = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(mesh.num_nodes(), mesh.num_nodes());
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        for (int qx = 0; qx < 3; qx++)
            for (int qy = 0; qy < 3; qy++) {
                const double x = gp[qx], y = gp[qy];
                const std::array<double, 4> dphix = {-0.25 * (1 - y), 0.25 * (1 - y),
                                                     0.25 * (1 + y), -0.25 * (1 + y)};
                const std::array<double, 4> dphiy = {-0.25 * (1 - x), -0.25 * (1 + x),
                                                     0.25 * (1 + x), 0.25 * (1 - x)};
                const double w = gw[qx] * gw[qy] * mesh.hx * mesh.hy / 4.0;
                for (int a = 0; a < 4; a++)
                    for (int b = 0; b < 4; b++)
                        A(n[a], n[b]) += coeff[c] * w *
                                         (dphix[a] * dphix[b] * 4.0 / (mesh.hx * mesh.hx) +
                                          dphiy[a] * dphiy[b] * 4.0 / (mesh.hy * mesh.hy));
            }
    }
    return A;
}

inline Eigen::MatrixXd
dense_nonlinear_stiffness(const MeshHierarchy& mesh, const PermeabilityField& field,
                          const NonlinearLaw& law, const Eigen::VectorXd& u)
{
    Eigen::VectorXd coeff(mesh.num_cells());
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        const double ubar = 0.25 * (u[n[0]] + u[n[1]] + u[n[2]] + u[n[3]]);
        coeff[c] = field.values[c] * law.value(ubar);
    }
    return dense_stiffness(mesh, coeff);
}

/* Largest principal-angle cosine via the nonsymmetric product eigenproblem
 * rather than a Cholesky-whitened SVD. */
inline double dense_gamma(const Eigen::MatrixXd& M, const Eigen::MatrixXd& P1,
                          const Eigen::MatrixXd& P2)
{
    const Eigen::MatrixXd G11 = P1.transpose() * M * P1;
    const Eigen::MatrixXd G12 = P1.transpose() * M * P2;
    const Eigen::MatrixXd G22 = P2.transpose() * M * P2;
    const Eigen::MatrixXd T =
        G11.fullPivLu().solve(G12 * G22.fullPivLu().solve(G12.transpose()));
    const Eigen::EigenSolver<Eigen::MatrixXd> es(T);
    double lam = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); i++)
        lam = std::max(lam, es.eigenvalues()[i].real());
    return std::sqrt(std::max(0.0, lam));
}

inline int pod_rank(const std::vector<double>& sigma, double eps)
{
    double total = 0.0;
    for (double s : sigma) total += s;
    double acc = 0.0;
    for (std::size_t i = 0; i < sigma.size(); i++) {
        acc += sigma[i];
        if (acc / total >= eps) return static_cast<int>(i) + 1;
    }
    return static_cast<int>(sigma.size());
}

inline std::vector<int> deim_greedy(const Eigen::MatrixXd& U)
{
    std::vector<int> idx;
    const auto argmax_abs = [](const Eigen::VectorXd& v) {
        int best = 0;
        for (int i = 1; i < v.size(); i++)
            if (std::abs(v[i]) > std::abs(v[best])) best = i;
        return best;
    };
    idx.push_back(argmax_abs(U.col(0)));
    for (int i = 1; i < U.cols(); i++) {
        Eigen::MatrixXd W(i, i);
        Eigen::VectorXd b(i);
        for (int r = 0; r < i; r++) {
            for (int c = 0; c < i; c++) W(r, c) = U(idx[r], c);
            b[r] = U(idx[r], i);
        }
        const Eigen::VectorXd coef = W.fullPivLu().solve(b);
        const Eigen::VectorXd res = U.col(i) - U.leftCols(i) * coef;
        idx.push_back(argmax_abs(res));
    }
    return idx;
}

inline std::vector<CellSet> bfs_components(const MeshHierarchy& mesh, const CellSet& cells)
{
    std::vector<char> in_set(mesh.num_cells(), 0), seen(mesh.num_cells(), 0);
    for (int c : cells) in_set[c] = 1;

    std::vector<CellSet> comps;
    for (int seed : cells) {
        if (seen[seed]) continue;
        CellSet comp;
        std::deque<int> q{seed};
        seen[seed] = 1;
        while (!q.empty()) {
            const int c = q.front();
            q.pop_front();
            comp.push_back(c);
            const int ci = c % mesh.nx, cj = c / mesh.nx;
            const std::array<std::array<int, 2>, 4> nb = {
                {{ci - 1, cj}, {ci + 1, cj}, {ci, cj - 1}, {ci, cj + 1}}};
            for (const auto& [ni, nj] : nb) {
                if (ni < 0 || ni >= mesh.nx || nj < 0 || nj >= mesh.ny) continue;
                const int nc = mesh.cell_id(ni, nj);
                if (!in_set[nc] || seen[nc]) continue;
                seen[nc] = 1;
                q.push_back(nc);
            }
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(comp);
    }
    std::sort(comps.begin(), comps.end());
    return comps;
}

/* Straight-line transcription of the two sub-steps with fresh dense solves
 * every step. The correction callback supplies the lagged nonlinear residual
 * projections, empty vectors meaning none. */
struct DenseEinState
{
    Eigen::VectorXd c1, c2;
};

inline std::vector<DenseEinState>
dense_ein_march(const Eigen::MatrixXd& M11, const Eigen::MatrixXd& M12,
                const Eigen::MatrixXd& M22, const Eigen::MatrixXd& A11,
                const Eigen::MatrixXd& A12, const Eigen::MatrixXd& A22,
                const Eigen::VectorXd& f1, const Eigen::VectorXd& f2,
                const Eigen::VectorXd& c1_0, const Eigen::VectorXd& c2_0, double dt,
                int nsteps,
                const std::function<void(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                         Eigen::VectorXd&, Eigen::VectorXd&)>& correction,
                bool analysis_form = true)
{
    std::vector<DenseEinState> states;
    states.push_back({c1_0, c2_0});
    Eigen::VectorXd c1p = c1_0, c2p = c2_0;   // previous-step values for the lag
    Eigen::VectorXd c1 = c1_0, c2 = c2_0;

    for (int n = 0; n < nsteps; n++) {
        Eigen::VectorXd g1, g2;
        if (correction) correction(c1, c2, g1, g2);
        if (!g1.size()) g1 = Eigen::VectorXd::Zero(c1.size());
        if (!g2.size()) g2 = Eigen::VectorXd::Zero(c2.size());

        const Eigen::MatrixXd S = M11 / dt + A11;
        const Eigen::VectorXd c1n = S.fullPivLu().solve(
            f1 + M11 * c1 / dt - M12 * (c2 - c2p) / dt - A12 * c2 - g1);
        const Eigen::VectorXd cross = analysis_form ? c1n : Eigen::VectorXd(2 * c1 - c1n);
        const Eigen::VectorXd c2n =
            c2 + dt * M22.fullPivLu().solve(f2 - M12.transpose() * (c1 - c1p) / dt -
                                            A12.transpose() * cross - A22 * c2 - g2);
        c1p = c1;
        c2p = c2;
        c1 = c1n;
        c2 = c2n;
        states.push_back({c1, c2});
    }
    return states;
}

}  // namespace oracle
}  // namespace einsplit
