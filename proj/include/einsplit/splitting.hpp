// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "einsplit/deim.hpp"
#include "einsplit/fem.hpp"
#include "einsplit/fine_solver.hpp"
#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"
#include "einsplit/multiscale.hpp"

namespace einsplit {

enum class Scheme
{
    FineReference,
    CoarseImplicitNewton,
    LinearPartialExplicit,
    EinSplit,
    EinSplitDeim
};

/* The two printed variants of the second sub-step differ in how the new
 * first-component value enters: the analysis form uses it directly and is
 * the one the stability result covers; the as-printed form extrapolates. */
enum class EinForm { Analysis, AsPrinted };

struct SchemeConfig
{
    enum class Kappa0 { InitialState, Constant };

    Scheme  scheme = Scheme::EinSplit;
    EinForm ein_form = EinForm::Analysis;
    Kappa0  kappa0_choice = Kappa0::InitialState;
    double  kappa0_value = 0.0;
    double  dt = 0.0;      // 0 takes the problem's step
    int     nsteps = 0;    // 0 takes the problem's horizon
    int     save_stride = 1;
    NewtonConfig newton;
    bool    record_energy = false;
};

inline double resolve_kappa0_state(const ProblemSpec& spec, const SchemeConfig& cfg)
{
    if (cfg.kappa0_choice == SchemeConfig::Kappa0::Constant) return cfg.kappa0_value;
    if (spec.u0_field.size() > 0) return spec.u0_field.mean();
    return spec.u0_constant;
}

struct SplitState
{
    Eigen::VectorXd c1, c2;
    Eigen::VectorXd inc1, inc2;   // lagged increments, zero at cold start
    int             step = 0;
};

inline SplitState
init_split_state(const MultiscaleBasis& basis, const SparseOperator& M, const DofVector& u0)
{
    const int d1 = basis.d1(), d2 = basis.d2();
    Eigen::MatrixXd G(d1 + d2, d1 + d2);
    const Eigen::MatrixXd MP1 = M * basis.Psi1;
    const Eigen::MatrixXd MP2 = M * basis.Psi2;
    G.topLeftCorner(d1, d1) = basis.Psi1.transpose() * MP1;
    G.topRightCorner(d1, d2) = basis.Psi1.transpose() * MP2;
    G.bottomLeftCorner(d2, d1) = G.topRightCorner(d1, d2).transpose();
    G.bottomRightCorner(d2, d2) = basis.Psi2.transpose() * MP2;

    Eigen::VectorXd rhs(d1 + d2);
    const DofVector Mu = M * u0;
    rhs.head(d1) = basis.Psi1.transpose() * Mu;
    rhs.tail(d2) = basis.Psi2.transpose() * Mu;

    const Eigen::VectorXd c = G.ldlt().solve(rhs);
    SplitState s;
    s.c1 = c.head(d1);
    s.c2 = c.tail(d2);
    s.inc1 = Eigen::VectorXd::Zero(d1);
    s.inc2 = Eigen::VectorXd::Zero(d2);
    return s;
}

/* Prefactored kernel operators for the two sub-steps. */
struct SplitStepper
{
    const CoarseOperators*      ops = nullptr;
    double                      dt = 0.0;
    Eigen::LLT<Eigen::MatrixXd> S1;    // M11/dt + A11
    Eigen::LLT<Eigen::MatrixXd> M22;   // consistent mass, never lumped
};

inline SplitStepper prepare_split_stepper(const CoarseOperators& ops, double dt)
{
    if (dt <= 0.0) throw std::invalid_argument("time step must be positive");
    SplitStepper st;
    st.ops = &ops;
    st.dt = dt;
    st.S1.compute(ops.M11 / dt + ops.A11);
    st.M22.compute(ops.M22);
    if (st.S1.info() != Eigen::Success || st.M22.info() != Eigen::Success)
        throw std::runtime_error("coarse mass blocks are not positive definite");
    return st;
}

namespace detail {

inline SplitState
split_step(const SplitStepper& st, const SplitState& s, const Eigen::VectorXd& g1,
           const Eigen::VectorXd& g2, EinForm form)
{
    const CoarseOperators& ops = *st.ops;
    const double dt = st.dt;

    Eigen::VectorXd rhs1 = ops.f1 + ops.M11 * s.c1 / dt - ops.M12 * s.inc2 / dt -
                           ops.A12 * s.c2;
    if (g1.size()) rhs1 -= g1;
    const Eigen::VectorXd c1n = st.S1.solve(rhs1);

    const Eigen::VectorXd c1_cross =
        form == EinForm::Analysis ? c1n : Eigen::VectorXd(2.0 * s.c1 - c1n);
    Eigen::VectorXd rhs2 = ops.f2 - ops.M12.transpose() * s.inc1 / dt -
                           ops.A12.transpose() * c1_cross - ops.A22 * s.c2;
    if (g2.size()) rhs2 -= g2;

    SplitState next;
    next.c1 = c1n;
    next.c2 = s.c2 + dt * st.M22.solve(rhs2);
    next.inc1 = next.c1 - s.c1;
    next.inc2 = next.c2 - s.c2;
    next.step = s.step + 1;
    return next;
}

}  // namespace detail

inline SplitState
step_linear_partial_explicit(const SplitStepper& st, const SplitState& s,
                             EinForm form = EinForm::Analysis)
{
    return detail::split_step(st, s, Eigen::VectorXd(), Eigen::VectorXd(), form);
}

inline SplitState
step_ein_split(const SplitStepper& st, const SplitState& s, const Eigen::VectorXd& g1,
               const Eigen::VectorXd& g2, EinForm form = EinForm::Analysis)
{
    return detail::split_step(st, s, g1, g2, form);
}

/* Remainder of the nonlinear form against the frozen operator, projected:
 * g_i = Psi_i^T (A(kappa(u)) - A0) u at the current prolongated state. */
inline void
ein_correction(const MeshHierarchy& mesh, const PermeabilityField& field,
               const NonlinearLaw& law, const MultiscaleBasis& basis,
               const SparseOperator& A0, const DofVector& u, Eigen::VectorXd& g1,
               Eigen::VectorXd& g2)
{
    const DofVector w = assemble_nonlinear_stiffness(mesh, field, law, u) * u - A0 * u;
    g1 = basis.Psi1.transpose() * w;
    g2 = basis.Psi2.transpose() * w;
}

inline void
ein_correction_deim(const DeimModel& model, const CoarseOperators& ops,
                    const MeshHierarchy& mesh, const PermeabilityField& field,
                    const NonlinearLaw& law, const DofVector& u, const SplitState& s,
                    Eigen::VectorXd& g1, Eigen::VectorXd& g2)
{
    const Eigen::VectorXd c = online_coefficients(model, mesh, field, law, u);
    const OnlineBlocks B = online_coarse_matrices(model, c);
    g1 = (B.A11 - ops.A11) * s.c1 + (B.A12 - ops.A12) * s.c2;
    g2 = (B.A12 - ops.A12).transpose() * s.c1 + (B.A22 - ops.A22) * s.c2;
}

/* Coarse implicit Euler: Newton on the Galerkin-projected residual. */
struct CoarseImplicitWorkspace
{
    const MeshHierarchy* mesh = nullptr;
    const ProblemSpec*   spec = nullptr;
    Eigen::MatrixXd      P;    // both components side by side
    Eigen::MatrixXd      MH;   // mass-weighted coarse mass
    Eigen::VectorXd      fH;
};

inline CoarseImplicitWorkspace
make_coarse_implicit_workspace(const MeshHierarchy& mesh, const ProblemSpec& spec,
                               const MultiscaleBasis& basis, const SparseOperator& M,
                               const DofVector& load)
{
    if (spec.mass_lumping_law != MassLumpingLaw::Frozen)
        throw std::invalid_argument("coarse schemes need the frozen mass weight");
    CoarseImplicitWorkspace ws;
    ws.mesh = &mesh;
    ws.spec = &spec;
    ws.P.resize(mesh.num_nodes(), basis.d1() + basis.d2());
    ws.P << basis.Psi1, basis.Psi2;
    ws.MH = spec.mass_weight * (ws.P.transpose() * (M * ws.P));
    ws.fH = ws.P.transpose() * load;
    return ws;
}

inline NewtonReport
step_coarse_implicit(const CoarseImplicitWorkspace& ws, const Eigen::VectorXd& c_prev,
                     double dt, Eigen::VectorXd& c, const NewtonConfig& cfg = {})
{
    const MeshHierarchy& mesh = *ws.mesh;
    const ProblemSpec& spec = *ws.spec;
    c = c_prev;

    NewtonReport rep;
    double R0 = -1.0;
    for (int it = 1; it <= cfg.max_iters; it++) {
        const DofVector u = ws.P * c;
        const SparseOperator A = assemble_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, u);
        const Eigen::VectorXd R =
            ws.MH * (c - c_prev) + dt * (ws.P.transpose() * (A * u)) - dt * ws.fH;
        if (R0 < 0.0) R0 = R.norm();

        SparseOperator Afull = A;
        if (cfg.variant == NewtonConfig::Jacobian::Full)
            Afull = Afull + SparseOperator(
                assemble_coeff_derivative(mesh, spec.kappa_x, spec.law, u));
        const Eigen::MatrixXd J =
            ws.MH + dt * (ws.P.transpose() * (Afull * ws.P));
        const Eigen::VectorXd d = J.partialPivLu().solve(-R);
        c += d;
        rep.iters = it;
        rep.update_norm = d.norm();
        {
            const DofVector u2 = ws.P * c;
            const Eigen::VectorXd R2 =
                ws.MH * (c - c_prev) +
                dt * (ws.P.transpose() *
                      (assemble_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, u2) * u2)) -
                dt * ws.fH;
            rep.residual_norm = R2.norm();
            rep.residual_history.push_back(rep.residual_norm);
        }
        if (rep.update_norm < cfg.tol) {
            rep.converged = true;
            return rep;
        }
        if (rep.residual_norm <= 1e-14 * std::max(1.0, R0)) {
            rep.converged = true;
            return rep;
        }
    }
    throw NewtonDivergence("coarse newton stalled after " + std::to_string(cfg.max_iters) +
                               " iterations, last residual " +
                               std::to_string(rep.residual_norm),
                           std::move(rep.residual_history));
}

struct PhaseTimings
{
    double assembly = 0.0;
    double implicit_solve = 0.0;
    double explicit_update = 0.0;
    double projection = 0.0;
    double total = 0.0;
};

struct RunResult
{
    Trajectory       traj;
    PhaseTimings     timings;
    std::vector<int> newton_iters;
    int              max_newton_iters = 0;
    bool             all_converged = true;
    bool             blew_up = false;
    int              blowup_step = -1;
    SplitState       final_state;

    // per-step extras for the energy diagnostic, filled when requested
    std::vector<double> inc1_m2, inc2_m2;   // unweighted mass norms squared
    std::vector<double> energy_a;           // u' A(kappa(u)) u after the step
    double              c0_observed = 0.0;  // max of sqrt(kx)|grad u| at centers
};

namespace detail {

inline double gradient_bound(const MeshHierarchy& mesh, const PermeabilityField& field,
                             const DofVector& u)
{
    double c0 = 0.0;
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        const double gx =
            ((u[n[1]] + u[n[2]]) - (u[n[0]] + u[n[3]])) / (2.0 * mesh.hx);
        const double gy =
            ((u[n[3]] + u[n[2]]) - (u[n[0]] + u[n[1]])) / (2.0 * mesh.hy);
        c0 = std::max(c0, std::sqrt(field.values[c]) * std::hypot(gx, gy));
    }
    return c0;
}

inline bool state_usable(const DofVector& u)
{
    return u.allFinite() && u.cwiseAbs().maxCoeff() < 1e150;
}

class PhaseClock
{
  public:
    explicit PhaseClock(double& sink) : sink_(sink), t0_(std::chrono::steady_clock::now()) {}
    ~PhaseClock()
    {
        sink_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

  private:
    double&                                 sink_;
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace detail

inline RunResult
run_scheme(const ProblemSpec& spec, const SchemeConfig& cfg,
           const MultiscaleBasis* basis = nullptr, const DeimModel* deim = nullptr)
{
    const double dt = cfg.dt > 0.0 ? cfg.dt : spec.dt;
    const int nsteps = cfg.nsteps > 0 ? cfg.nsteps : spec.num_steps();
    if (nsteps <= 0) throw std::invalid_argument("run needs at least one step");
    if (dt <= 0.0) throw std::invalid_argument("time step must be positive");
    if (cfg.scheme == Scheme::EinSplitDeim && deim == nullptr)
        throw std::invalid_argument("DEIM scheme needs a model");
    if (cfg.scheme != Scheme::FineReference && basis == nullptr)
        throw std::invalid_argument("coarse schemes need a basis");

    if (cfg.scheme == Scheme::FineReference) {
        ProblemSpec s = spec;
        s.dt = dt;
        s.T = dt * nsteps;
        ReferenceRun ref = run_reference(s, cfg.newton, cfg.save_stride);
        RunResult out;
        out.traj = std::move(ref.traj);
        out.newton_iters = std::move(ref.newton_iters);
        out.max_newton_iters = ref.max_newton_iters;
        out.all_converged = ref.all_converged;
        out.timings.total = ref.seconds;
        out.timings.implicit_solve = ref.seconds;
        return out;
    }

    const auto t_start = std::chrono::steady_clock::now();
    const MeshHierarchy mesh = spec.hierarchy();
    const SparseOperator M = assemble_mass(mesh);
    const SparseOperator Mw = spec.mass_weight * M;
    const DofVector load = build_load(mesh, M, spec.source);
    const double tilde = resolve_kappa0_state(spec, cfg);
    const Eigen::VectorXd kappa0 = kappa0_cellwise(mesh, spec.kappa_x, spec.law, tilde);
    const SparseOperator A0 = assemble_stiffness(mesh, kappa0);
    const DofVector u0 = spec.initial_state(mesh);

    RunResult out;
    out.traj.nx = mesh.nx;
    out.traj.ny = mesh.ny;
    out.traj.dt = dt;
    out.traj.save_stride = cfg.save_stride;

    CoarseOperators ops;
    {
        detail::PhaseClock clock(out.timings.projection);
        ops = coarse_operators(*basis, Mw, A0, load);
    }
    SplitState state = init_split_state(*basis, M, u0);
    out.traj.states.push_back(prolongate(*basis, state.c1, state.c2));
    out.traj.steps.push_back(0);

    const auto record = [&](int step, const DofVector& uf) {
        if (step % cfg.save_stride == 0 || step == nsteps) {
            out.traj.states.push_back(uf);
            out.traj.steps.push_back(step);
        }
    };
    const auto mark_blowup = [&](int step) {
        out.blew_up = true;
        out.blowup_step = step;
        out.traj.states.push_back(
            DofVector::Constant(mesh.num_nodes(), std::numeric_limits<double>::infinity()));
        out.traj.steps.push_back(step);
    };

    if (cfg.scheme == Scheme::CoarseImplicitNewton) {
        const CoarseImplicitWorkspace ws =
            make_coarse_implicit_workspace(mesh, spec, *basis, M, load);
        Eigen::VectorXd c(state.c1.size() + state.c2.size());
        c << state.c1, state.c2;
        for (int n = 1; n <= nsteps; n++) {
            Eigen::VectorXd cn;
            NewtonReport rep;
            try {
                detail::PhaseClock clock(out.timings.implicit_solve);
                rep = step_coarse_implicit(ws, c, dt, cn, cfg.newton);
            } catch (NewtonDivergence& e) {
                NewtonDivergence ann("step " + std::to_string(n) + ": " + e.what(),
                                     std::move(e.residual_history));
                ann.step = n;
                throw ann;
            }
            out.newton_iters.push_back(rep.iters);
            out.max_newton_iters = std::max(out.max_newton_iters, rep.iters);
            out.all_converged = out.all_converged && rep.converged;
            c = cn;
            record(n, ws.P * c);
        }
        out.final_state.c1 = c.head(state.c1.size());
        out.final_state.c2 = c.tail(state.c2.size());
    } else if (cfg.scheme == Scheme::LinearPartialExplicit) {
        // nonlinearity frozen at the previous step in both sub-equations;
        // the blocks are re-projected and re-factored every step
        for (int n = 1; n <= nsteps; n++) {
            const DofVector uf = prolongate(*basis, state.c1, state.c2);
            if (!detail::state_usable(uf)) {
                mark_blowup(n);
                break;
            }
            CoarseOperators fro = ops;
            {
                SparseOperator A;
                {
                    detail::PhaseClock clock(out.timings.assembly);
                    A = assemble_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, uf);
                }
                detail::PhaseClock clock(out.timings.projection);
                project_operator(*basis, A, fro.A11, fro.A12, fro.A22);
            }
            SplitStepper st;
            {
                detail::PhaseClock clock(out.timings.implicit_solve);
                st = prepare_split_stepper(fro, dt);
                state = step_linear_partial_explicit(st, state, cfg.ein_form);
            }
            record(n, prolongate(*basis, state.c1, state.c2));
        }
        out.final_state = state;
    } else {
        const SplitStepper st = prepare_split_stepper(ops, dt);
        Eigen::VectorXd g1, g2;
        for (int n = 1; n <= nsteps; n++) {
            const DofVector uf = prolongate(*basis, state.c1, state.c2);
            if (!detail::state_usable(uf)) {
                mark_blowup(n);
                break;
            }
            if (cfg.record_energy)
                out.c0_observed =
                    std::max(out.c0_observed, detail::gradient_bound(mesh, spec.kappa_x, uf));
            if (cfg.scheme == Scheme::EinSplitDeim) {
                detail::PhaseClock clock(out.timings.assembly);
                ein_correction_deim(*deim, ops, mesh, spec.kappa_x, spec.law, uf, state, g1,
                                    g2);
            } else {
                detail::PhaseClock clock(out.timings.assembly);
                ein_correction(mesh, spec.kappa_x, spec.law, *basis, A0, uf, g1, g2);
            }
            SplitState next;
            {
                detail::PhaseClock clock(out.timings.implicit_solve);
                next = step_ein_split(st, state, g1, g2, cfg.ein_form);
            }
            state = next;
            const DofVector ufn = prolongate(*basis, state.c1, state.c2);
            if (cfg.record_energy && detail::state_usable(ufn)) {
                out.inc1_m2.push_back(state.inc1.dot(ops.M11 * state.inc1) / spec.mass_weight);
                out.inc2_m2.push_back(state.inc2.dot(ops.M22 * state.inc2) / spec.mass_weight);
                detail::PhaseClock clock(out.timings.assembly);
                const SparseOperator Ak =
                    assemble_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, ufn);
                out.energy_a.push_back(ufn.dot(Ak * ufn));
            }
            record(n, ufn);
        }
        out.final_state = state;
    }

    out.timings.total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

}  // namespace einsplit
