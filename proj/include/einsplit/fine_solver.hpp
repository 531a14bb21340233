// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "einsplit/fem.hpp"
#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"

namespace einsplit {

struct NewtonConfig
{
    enum class Jacobian { Full, FrozenCoefficient };

    double   tol = 1e-10;   // on the update norm
    int      max_iters = 25;
    Jacobian variant = Jacobian::Full;
};

struct NewtonReport
{
    int                 iters = 0;
    bool                converged = false;
    double              update_norm = 0.0;
    double              residual_norm = 0.0;
    std::vector<double> residual_history;   // one entry per iteration
};

struct NewtonDivergence : std::runtime_error
{
    std::vector<double> residual_history;
    int                 step = -1;   // filled by time-marching callers

    NewtonDivergence(const std::string& what, std::vector<double> history)
        : std::runtime_error(what), residual_history(std::move(history))
    {
    }
};

/* Derivative of the nonlinear stiffness action through the coefficient.
 * The cell average couples every local dof with weight 1/4, so each cell
 * contributes the rank-one block (kx * law'(ubar) * Ke u_loc / 4) 1^T. */
inline SparseOperator
assemble_coeff_derivative(const MeshHierarchy& mesh, const PermeabilityField& field,
                          const NonlinearLaw& law, const Eigen::VectorXd& u)
{
    const Eigen::Matrix4d Ke = element_stiffness(mesh.hx, mesh.hy);
    const Eigen::VectorXd ubar = cell_average(mesh, u);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(16 * mesh.num_cells());
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        const Eigen::Vector4d uloc{u[n[0]], u[n[1]], u[n[2]], u[n[3]]};
        const Eigen::Vector4d g =
            0.25 * field.values[c] * law.slope(ubar[c]) * (Ke * uloc);
        for (int a = 0; a < 4; a++)
            for (int b = 0; b < 4; b++)
                trip.emplace_back(n[a], n[b], g[a]);
    }
    SparseOperator A(mesh.num_nodes(), mesh.num_nodes());
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

namespace detail {

inline Eigen::VectorXd nodal_mass_density(const ProblemSpec& spec, const DofVector& u)
{
    Eigen::VectorXd r(u.size());
    for (int i = 0; i < u.size(); i++) r[i] = spec.law.value(u[i]);
    return spec.porosity * r;
}

}  // namespace detail

inline DofVector
newton_residual(const MeshHierarchy& mesh, const ProblemSpec& spec, const SparseOperator& M,
                const DofVector& load, const DofVector& u, const DofVector& u_prev,
                double dt)
{
    DofVector R;
    if (spec.mass_lumping_law == MassLumpingLaw::Frozen)
        R = spec.mass_weight * (M * (u - u_prev));
    else
        R = M * (detail::nodal_mass_density(spec, u) - detail::nodal_mass_density(spec, u_prev));
    R += dt * (assemble_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, u) * u);
    R -= dt * load;

    if (spec.boundary.kind == BoundaryKind::FixedValue) {
        const auto mask = boundary_mask(mesh);
        for (int n = 0; n < mesh.num_nodes(); n++)
            if (mask[n]) R[n] = u[n] - spec.boundary.values[n];
    }
    return R;
}

inline SparseOperator
newton_jacobian(const MeshHierarchy& mesh, const ProblemSpec& spec, const SparseOperator& M,
                const DofVector& u, double dt, const NewtonConfig& cfg = {})
{
    SparseOperator J;
    if (spec.mass_lumping_law == MassLumpingLaw::Frozen) {
        J = spec.mass_weight * M;
    } else {
        Eigen::VectorXd slope(u.size());
        for (int i = 0; i < u.size(); i++) slope[i] = spec.porosity * spec.law.slope(u[i]);
        J = M * slope.asDiagonal();
    }
    J = J + SparseOperator(dt * assemble_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, u));
    if (cfg.variant == NewtonConfig::Jacobian::Full)
        J = J + SparseOperator(dt * assemble_coeff_derivative(mesh, spec.kappa_x, spec.law, u));

    if (spec.boundary.kind == BoundaryKind::FixedValue) {
        const auto mask = boundary_mask(mesh);
        J.prune([&mask](Eigen::Index r, Eigen::Index, double) { return !mask[r]; });
        SparseOperator I(mesh.num_nodes(), mesh.num_nodes());
        std::vector<Eigen::Triplet<double>> ones;
        for (int n = 0; n < mesh.num_nodes(); n++)
            if (mask[n]) ones.emplace_back(n, n, 1.0);
        I.setFromTriplets(ones.begin(), ones.end());
        J = J + I;
    }
    return J;
}

/* One backward step solved by Newton. Convergence is declared on the
 * update norm; a machine-floor residual short circuit lets an exactly
 * linear problem report a single iteration. */
inline NewtonReport
step_implicit_newton(const MeshHierarchy& mesh, const ProblemSpec& spec,
                     const SparseOperator& M, const DofVector& load,
                     const DofVector& u_prev, double dt, DofVector& u,
                     const NewtonConfig& cfg = {})
{
    u = u_prev;
    if (spec.boundary.kind == BoundaryKind::FixedValue) {
        const auto mask = boundary_mask(mesh);
        for (int n = 0; n < mesh.num_nodes(); n++)
            if (mask[n]) u[n] = spec.boundary.values[n];
    }

    NewtonReport rep;
    double R0 = -1.0;
    Eigen::SparseLU<SparseOperator> lu;
    for (int it = 1; it <= cfg.max_iters; it++) {
        DofVector R = newton_residual(mesh, spec, M, load, u, u_prev, dt);
        if (R0 < 0.0) R0 = R.norm();
        SparseOperator J = newton_jacobian(mesh, spec, M, u, dt, cfg);
        J.makeCompressed();
        lu.compute(J);
        if (lu.info() != Eigen::Success)
            throw std::runtime_error("newton jacobian factorization failed");
        const DofVector d = lu.solve(-R);
        u += d;
        rep.iters = it;
        rep.update_norm = d.norm();
        rep.residual_norm = newton_residual(mesh, spec, M, load, u, u_prev, dt).norm();
        rep.residual_history.push_back(rep.residual_norm);
        if (rep.update_norm < cfg.tol) {
            rep.converged = true;
            return rep;
        }
        if (rep.residual_norm <= 1e-14 * std::max(1.0, R0)) {
            rep.converged = true;
            return rep;
        }
    }
    throw NewtonDivergence("newton stalled after " + std::to_string(cfg.max_iters) +
                               " iterations, last residual " +
                               std::to_string(rep.residual_norm),
                           std::move(rep.residual_history));
}

struct Trajectory
{
    int                    nx = 0, ny = 0;
    double                 dt = 0.0;
    int                    save_stride = 1;
    std::vector<DofVector> states;   // starts with the initial state
    std::vector<int>       steps;    // step index per saved state

    const DofVector& final_state() const { return states.back(); }
};

inline void save_trajectory(std::ostream& os, const Trajectory& traj)
{
    const auto prec = os.precision(17);
    os << traj.nx << " " << traj.ny << " " << traj.states.size() << " " << traj.dt << "\n";
    for (const auto& s : traj.states) {
        for (int i = 0; i < s.size(); i++) os << (i ? " " : "") << s[i];
        os << "\n";
    }
    os.precision(prec);
}

inline Trajectory load_trajectory(std::istream& is)
{
    Trajectory traj;
    size_t count = 0;
    if (!(is >> traj.nx >> traj.ny >> count >> traj.dt))
        throw std::runtime_error("bad trajectory header");
    const int n = (traj.nx + 1) * (traj.ny + 1);
    traj.states.assign(count, DofVector(n));
    for (size_t s = 0; s < count; s++) {
        for (int i = 0; i < n; i++)
            if (!(is >> traj.states[s][i]))
                throw std::runtime_error("trajectory file ended early");
        traj.steps.push_back((int)s);
    }
    return traj;
}

struct ReferenceRun
{
    Trajectory       traj;
    std::vector<int> newton_iters;   // per time step
    int              max_newton_iters = 0;
    bool             all_converged = true;
    double           seconds = 0.0;
};

inline ReferenceRun
run_reference(const ProblemSpec& spec, const NewtonConfig& cfg = {}, int save_stride = 1)
{
    const auto t0 = std::chrono::steady_clock::now();
    const MeshHierarchy mesh = spec.hierarchy();
    const SparseOperator M = assemble_mass(mesh);
    const DofVector load = build_load(mesh, M, spec.source);
    const int nsteps = spec.num_steps();
    if (nsteps < 1)
        throw std::invalid_argument("horizon shorter than half a step gives no steps");

    ReferenceRun run;
    run.traj.nx = mesh.nx;
    run.traj.ny = mesh.ny;
    run.traj.dt = spec.dt;
    run.traj.save_stride = save_stride;

    DofVector u = spec.initial_state(mesh);
    run.traj.states.push_back(u);
    run.traj.steps.push_back(0);

    DofVector next(u.size());
    for (int n = 1; n <= nsteps; n++) {
        NewtonReport rep;
        try {
            rep = step_implicit_newton(mesh, spec, M, load, u, spec.dt, next, cfg);
        } catch (NewtonDivergence& e) {
            NewtonDivergence out("step " + std::to_string(n) + ": " + e.what(),
                                 std::move(e.residual_history));
            out.step = n;
            throw out;
        }
        run.newton_iters.push_back(rep.iters);
        run.max_newton_iters = std::max(run.max_newton_iters, rep.iters);
        run.all_converged = run.all_converged && rep.converged;
        u.swap(next);
        if (n % save_stride == 0 || n == nsteps) {
            run.traj.states.push_back(u);
            run.traj.steps.push_back(n);
        }
    }
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

}  // namespace einsplit
