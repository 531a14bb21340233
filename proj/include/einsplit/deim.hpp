// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "einsplit/fem.hpp"
#include "einsplit/fine_solver.hpp"
#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"
#include "einsplit/multiscale.hpp"

namespace einsplit {

struct SnapshotSet
{
    Eigen::MatrixXd Y;   // one per-cell coefficient field per column
    int             stride = 1;
    std::string     source;
};

inline SnapshotSet
collect_snapshots(const ProblemSpec& spec, const Trajectory& traj, int stride)
{
    if (stride < 1) throw std::invalid_argument("snapshot stride must be >= 1");
    if (traj.states.empty()) throw std::invalid_argument("empty trajectory");
    const MeshHierarchy mesh = spec.hierarchy();
    if (traj.nx != mesh.nx || traj.ny != mesh.ny)
        throw std::invalid_argument("trajectory grid does not match the problem");

    std::vector<int> picks;
    for (size_t s = 0; s < traj.states.size(); s += stride) picks.push_back((int)s);

    SnapshotSet set;
    set.stride = stride;
    set.Y.resize(mesh.num_cells(), picks.size());
    for (size_t k = 0; k < picks.size(); k++)
        set.Y.col(k) = kappa_cellwise(mesh, spec.kappa_x, spec.law, traj.states[picks[k]]);
    return set;
}

struct PodBasis
{
    Eigen::MatrixXd U;       // kept modes
    Eigen::VectorXd sigma;   // all singular values, descending
    double          eps = 0.9999;
    int             m = 0;
    int             r = 0;
    bool            eps_outside_stated_range = false;
};

/* Truncation by fractional energy on the singular values themselves:
 * m is the smallest count whose partial sum reaches eps of the total. */
inline PodBasis pod(const SnapshotSet& snaps, double eps)
{
    if (snaps.Y.norm() == 0.0)
        throw std::invalid_argument("all-zero snapshot matrix");

    PodBasis basis;
    basis.eps = eps;
    basis.eps_outside_stated_range = !(eps > 0.9 && eps < 1.0);

    Eigen::BDCSVD<Eigen::MatrixXd> svd(snaps.Y, Eigen::ComputeThinU);
    basis.sigma = svd.singularValues();
    basis.r = (int)basis.sigma.size();

    const double total = basis.sigma.sum();
    double cum = 0.0;
    basis.m = basis.r;
    for (int i = 0; i < basis.r; i++) {
        cum += basis.sigma[i];
        if (cum / total >= eps) {
            basis.m = i + 1;
            break;
        }
    }
    basis.U = svd.matrixU().leftCols(basis.m);
    return basis;
}

/* Greedy interpolation points: first the peak of the leading mode, then
 * the peak of each successive mode's residual against the interpolation
 * of the previous ones. Strict comparison keeps ties at the lowest cell. */
inline std::vector<int> deim_indices(const PodBasis& basis)
{
    if (basis.m < 1) throw std::invalid_argument("empty POD basis");
    const auto argmax_abs = [](const Eigen::VectorXd& v) {
        int best = 0;
        for (int i = 1; i < v.size(); i++)
            if (std::abs(v[i]) > std::abs(v[best])) best = i;
        return best;
    };

    std::vector<int> idx{argmax_abs(basis.U.col(0))};
    for (int i = 1; i < basis.m; i++) {
        Eigen::MatrixXd QtW(i, i);
        Eigen::VectorXd rhs(i);
        for (int r = 0; r < i; r++) {
            for (int c = 0; c < i; c++) QtW(r, c) = basis.U(idx[r], c);
            rhs[r] = basis.U(idx[r], i);
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(QtW);
        if (qr.rank() < i)
            throw std::runtime_error("dependent rows in the interpolation system");
        const Eigen::VectorXd c = qr.solve(rhs);
        const Eigen::VectorXd res = basis.U.col(i) - basis.U.leftCols(i) * c;
        idx.push_back(argmax_abs(res));
    }
    return idx;
}

struct DeimModel
{
    PodBasis         pod;
    std::vector<int> indices;
    Eigen::MatrixXd  PtU;
    Eigen::PartialPivLU<Eigen::MatrixXd> PtU_lu;
    double           condition = 0.0;
    bool             cond_warning = false;

    std::vector<SparseOperator> fine_tensors;              // A_f(v_k)
    std::vector<Eigen::MatrixXd> A11, A12, A22;            // projected per mode
    int d1 = 0, d2 = 0;
};

inline DeimModel
offline_tensors(const PodBasis& pod_basis, const MeshHierarchy& mesh,
                const MultiscaleBasis& ms_basis)
{
    if (pod_basis.U.rows() != mesh.num_cells())
        throw std::invalid_argument("POD modes do not live on the fine cells");
    if (ms_basis.fine_dofs() != mesh.num_nodes())
        throw std::invalid_argument("multiscale basis does not match the mesh");

    DeimModel model;
    model.pod = pod_basis;
    model.indices = deim_indices(pod_basis);
    model.d1 = ms_basis.d1();
    model.d2 = ms_basis.d2();

    const int m = pod_basis.m;
    model.PtU.resize(m, m);
    for (int r = 0; r < m; r++)
        for (int c = 0; c < m; c++) model.PtU(r, c) = pod_basis.U(model.indices[r], c);
    model.PtU_lu.compute(model.PtU);
    {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(model.PtU);
        const double smin = svd.singularValues()[m - 1];
        model.condition = smin > 0.0 ? svd.singularValues()[0] / smin
                                     : std::numeric_limits<double>::infinity();
        model.cond_warning = !(model.condition < 1e12);
    }

    for (int k = 0; k < m; k++) {
        SparseOperator Af = assemble_stiffness(mesh, pod_basis.U.col(k));
        Eigen::MatrixXd B11, B12, B22;
        project_operator(ms_basis, Af, B11, B12, B22);
        model.fine_tensors.push_back(std::move(Af));
        model.A11.push_back(std::move(B11));
        model.A12.push_back(std::move(B12));
        model.A22.push_back(std::move(B22));
    }
    return model;
}

inline Eigen::VectorXd
online_coefficients(const DeimModel& model, const MeshHierarchy& mesh,
                    const PermeabilityField& field, const NonlinearLaw& law,
                    const DofVector& u)
{
    Eigen::VectorXd k((int)model.indices.size());
    for (size_t i = 0; i < model.indices.size(); i++) {
        const int cell = model.indices[i];
        const auto n = mesh.cell_nodes(cell);
        const double avg = 0.25 * (u[n[0]] + u[n[1]] + u[n[2]] + u[n[3]]);
        k[i] = field.values[cell] * law.value(avg);
        if (!std::isfinite(k[i]))
            throw std::domain_error("non-finite coefficient at an interpolation cell");
    }
    return model.PtU_lu.solve(k);
}

struct OnlineBlocks
{
    Eigen::MatrixXd A11, A12, A22;
};

inline OnlineBlocks online_coarse_matrices(const DeimModel& model, const Eigen::VectorXd& c)
{
    if (c.size() != (int)model.A11.size())
        throw std::invalid_argument("coefficient count does not match the model");
    OnlineBlocks out;
    out.A11 = Eigen::MatrixXd::Zero(model.d1, model.d1);
    out.A12 = Eigen::MatrixXd::Zero(model.d1, model.d2);
    out.A22 = Eigen::MatrixXd::Zero(model.d2, model.d2);
    for (int k = 0; k < c.size(); k++) {
        out.A11 += c[k] * model.A11[k];
        out.A12 += c[k] * model.A12[k];
        out.A22 += c[k] * model.A22[k];
    }
    return out;
}

inline void save_deim_model(std::ostream& os, const DeimModel& model)
{
    const auto prec = os.precision(17);
    const int ncells = (int)model.pod.U.rows();
    os << ncells << " " << model.pod.m << " " << model.d1 << " " << model.d2 << "\n";
    for (int k = 0; k < model.pod.m; k++) {
        for (int r = 0; r < ncells; r++) os << (r ? " " : "") << model.pod.U(r, k);
        os << "\n";
    }
    for (size_t i = 0; i < model.indices.size(); i++)
        os << (i ? " " : "") << model.indices[i];
    os << "\n";
    const auto dump = [&os](const Eigen::MatrixXd& B) {
        for (int r = 0; r < B.rows(); r++)
            for (int c = 0; c < B.cols(); c++)
                os << (r + c ? " " : "") << B(r, c);
        os << "\n";
    };
    for (int k = 0; k < model.pod.m; k++) {
        dump(model.A11[k]);
        dump(model.A12[k]);
        dump(model.A22[k]);
    }
    os.precision(prec);
}

inline DeimModel load_deim_model(std::istream& is)
{
    DeimModel model;
    int ncells = 0;
    if (!(is >> ncells >> model.pod.m >> model.d1 >> model.d2))
        throw std::runtime_error("bad model header");
    model.pod.r = model.pod.m;
    model.pod.U.resize(ncells, model.pod.m);
    for (int k = 0; k < model.pod.m; k++)
        for (int r = 0; r < ncells; r++)
            if (!(is >> model.pod.U(r, k)))
                throw std::runtime_error("model file ended early");
    model.indices.resize(model.pod.m);
    for (int i = 0; i < model.pod.m; i++)
        if (!(is >> model.indices[i]))
            throw std::runtime_error("model file ended early");
    const auto read = [&is](Eigen::MatrixXd& B, int rows, int cols) {
        B.resize(rows, cols);
        for (int r = 0; r < rows; r++)
            for (int c = 0; c < cols; c++)
                if (!(is >> B(r, c)))
                    throw std::runtime_error("model file ended early");
    };
    model.A11.resize(model.pod.m);
    model.A12.resize(model.pod.m);
    model.A22.resize(model.pod.m);
    for (int k = 0; k < model.pod.m; k++) {
        read(model.A11[k], model.d1, model.d1);
        read(model.A12[k], model.d1, model.d2);
        read(model.A22[k], model.d2, model.d2);
    }
    const int m = model.pod.m;
    model.PtU.resize(m, m);
    for (int r = 0; r < m; r++)
        for (int c = 0; c < m; c++) model.PtU(r, c) = model.pod.U(model.indices[r], c);
    model.PtU_lu.compute(model.PtU);
    return model;
}

}  // namespace einsplit
