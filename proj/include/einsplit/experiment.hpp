// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "einsplit/deim.hpp"
#include "einsplit/fem.hpp"
#include "einsplit/fine_solver.hpp"
#include "einsplit/media.hpp"
#include "einsplit/mesh.hpp"
#include "einsplit/multiscale.hpp"
#include "einsplit/splitting.hpp"
#include "einsplit/stability.hpp"

namespace einsplit {

struct ErrorSeries
{
    std::vector<int>    steps;
    std::vector<double> times;
    std::vector<double> l2_rel;
    std::vector<double> energy_rel;
    double              l2_avg = 0.0;
    double              energy_avg = 0.0;
    int                 absolute_steps = 0;   // steps where the reference vanished
};

/* Per-step relative errors of the candidate against the reference, in the
 * mass norm and the frozen-coefficient energy norm. The first argument is
 * the reference. Averages run over the saved steps past the initial state. */
inline ErrorSeries
compare(const Trajectory& ref, const Trajectory& cand, const SparseOperator& M,
        const SparseOperator& A0)
{
    if (ref.nx != cand.nx || ref.ny != cand.ny || ref.steps != cand.steps ||
        std::abs(ref.dt - cand.dt) > 1e-14 * std::max(std::abs(ref.dt), 1.0))
        throw std::invalid_argument("trajectories live on different grids");

    ErrorSeries es;
    es.steps = ref.steps;
    double suml = 0.0, sume = 0.0;
    int counted = 0;
    for (std::size_t k = 0; k < ref.states.size(); k++) {
        const DofVector d = ref.states[k] - cand.states[k];
        const double nl = l2_norm(M, ref.states[k]);
        const double ne = energy_norm(A0, ref.states[k]);
        const double el = l2_norm(M, d);
        const double ee = energy_norm(A0, d);
        const bool vanished = nl == 0.0 || ne == 0.0;
        if (vanished) es.absolute_steps++;
        es.times.push_back(ref.steps[k] * ref.dt);
        es.l2_rel.push_back(vanished ? el : el / nl);
        es.energy_rel.push_back(vanished ? ee : ee / ne);
        if (ref.steps[k] > 0) {
            suml += es.l2_rel.back();
            sume += es.energy_rel.back();
            counted++;
        }
    }
    if (counted) {
        es.l2_avg = suml / counted;
        es.energy_avg = sume / counted;
    }
    return es;
}

inline void write_error_series(std::ostream& os, const ErrorSeries& es)
{
    os << "step,time,l2_rel,energy_rel\n";
    os << std::setprecision(12);
    for (std::size_t k = 0; k < es.steps.size(); k++)
        os << es.steps[k] << ',' << es.times[k] << ',' << es.l2_rel[k] << ','
           << es.energy_rel[k] << '\n';
}

inline void save_nodal_field(std::ostream& os, int nx, int ny, const DofVector& u)
{
    if (u.size() != (nx + 1) * (ny + 1))
        throw std::invalid_argument("field size does not match the node grid");
    const auto prec = os.precision(17);
    os << nx << " " << ny << "\n";
    for (int j = 0; j <= ny; j++) {
        for (int i = 0; i <= nx; i++) os << (i ? " " : "") << u[j * (nx + 1) + i];
        os << "\n";
    }
    os.precision(prec);
}

inline const char* scheme_id(Scheme s)
{
    switch (s) {
        case Scheme::FineReference: return "fine";
        case Scheme::CoarseImplicitNewton: return "coarse_ie";
        case Scheme::LinearPartialExplicit: return "split_ie";
        case Scheme::EinSplit: return "ein";
        case Scheme::EinSplitDeim: return "ein_deim";
    }
    throw std::logic_error("unknown scheme");
}

inline Scheme parse_scheme(const std::string& name)
{
    if (name == "fine" || name == "fine_reference") return Scheme::FineReference;
    if (name == "coarse_ie" || name == "no_split_ie" || name == "coarse_implicit")
        return Scheme::CoarseImplicitNewton;
    if (name == "split_ie" || name == "linear_partial_explicit")
        return Scheme::LinearPartialExplicit;
    if (name == "ein" || name == "ein_split") return Scheme::EinSplit;
    if (name == "ein_deim" || name == "ein_split_deim") return Scheme::EinSplitDeim;
    throw std::invalid_argument("unknown scheme '" + name + "'");
}

struct BasisSpec
{
    MultiscaleBasis::Variant variant = MultiscaleBasis::Variant::Nlmc;
    int                     l1 = 1, l2 = 1;
    int                     layers = 4;
    std::string             name;   // defaults to variant plus the counts
};

inline std::string basis_label(const BasisSpec& bs)
{
    if (!bs.name.empty()) return bs.name;
    const bool nlmc = bs.variant == MultiscaleBasis::Variant::Nlmc;
    return (nlmc ? std::string("nlmc") : std::string("enlmc")) + std::to_string(bs.l1) +
           std::to_string(bs.l2);
}

struct ExperimentConfig
{
    ProblemSpec             problem;
    std::vector<Scheme>     schemes;
    std::vector<BasisSpec>  bases;
    double                  deim_eps = 0.9999;
    int                     deim_stride = 5;
    double                  deim_burn_in = 0.25;
    C1Mode                  c1_mode = C1Mode::MaxAbsolute;
    EinForm                 ein_form = EinForm::Analysis;
    SchemeConfig::Kappa0    kappa0_choice = SchemeConfig::Kappa0::InitialState;
    double                  kappa0_value = 0.0;
    std::string             out_dir = "out";
    unsigned                seed = 0;
    int                     save_stride = 1;
    double                  dt_override = 0.0;
    double                  T_override = 0.0;
};

inline ProblemSpec parse_problem(const nlohmann::json& j)
{
    if (j.is_string()) return builtin_spec(j.get<std::string>());
    if (!j.is_object() || !j.contains("builtin"))
        throw std::invalid_argument("problem must be a builtin name or an object with one");
    ProblemSpec spec = builtin_spec(j.at("builtin").get<std::string>());
    if (j.contains("dt")) spec.dt = j.at("dt").get<double>();
    if (j.contains("T")) spec.T = j.at("T").get<double>();
    if (j.contains("u0")) spec.u0_constant = j.at("u0").get<double>();
    if (j.contains("kappa_file")) {
        std::ifstream in(j.at("kappa_file").get<std::string>());
        if (!in) throw std::invalid_argument("cannot open kappa_file");
        PermeabilityField f = load_field(in);
        if (f.nx != spec.nx || f.ny != spec.ny)
            throw std::invalid_argument("kappa_file resolution does not match the problem");
        spec.kappa_x = std::move(f);
    }
    if (j.contains("geometry_file")) {
        std::ifstream in(j.at("geometry_file").get<std::string>());
        if (!in) throw std::invalid_argument("cannot open geometry_file");
        const auto segs = read_geometry(in);
        const double bg = j.value("background", 1.0);
        const MeshHierarchy mesh = spec.hierarchy();
        spec.kappa_x = channelized_field(mesh, segs, bg);
    }
    return spec;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j)
{
    ExperimentConfig cfg;
    if (!j.contains("problem")) throw std::invalid_argument("config needs a problem");
    cfg.problem = parse_problem(j.at("problem"));

    if (!j.contains("schemes") || !j.at("schemes").is_array() || j.at("schemes").empty())
        throw std::invalid_argument("config needs a nonempty scheme list");
    for (const auto& s : j.at("schemes")) cfg.schemes.push_back(parse_scheme(s.get<std::string>()));

    if (j.contains("bases")) {
        for (const auto& b : j.at("bases")) {
            BasisSpec bs;
            const std::string v = b.value("variant", std::string("nlmc"));
            if (v == "nlmc")
                bs.variant = MultiscaleBasis::Variant::Nlmc;
            else if (v == "enlmc")
                bs.variant = MultiscaleBasis::Variant::Enlmc;
            else
                throw std::invalid_argument("unknown basis variant '" + v + "'");
            bs.l1 = b.value("l1", 1);
            bs.l2 = b.value("l2", 1);
            bs.layers = b.value("layers", 4);
            bs.name = b.value("name", std::string());
            if (bs.l1 < 1 || bs.l2 < 1 || bs.layers < 1)
                throw std::invalid_argument("basis counts must be positive");
            cfg.bases.push_back(bs);
        }
    }
    const bool needs_basis = std::any_of(cfg.schemes.begin(), cfg.schemes.end(),
                                         [](Scheme s) { return s != Scheme::FineReference; });
    if (needs_basis && cfg.bases.empty())
        throw std::invalid_argument("coarse schemes need at least one basis");

    if (j.contains("deim")) {
        const auto& d = j.at("deim");
        cfg.deim_eps = d.value("eps", cfg.deim_eps);
        cfg.deim_stride = d.value("stride", cfg.deim_stride);
        cfg.deim_burn_in = d.value("burn_in_fraction", cfg.deim_burn_in);
        if (cfg.deim_stride < 1 || cfg.deim_burn_in <= 0.0 || cfg.deim_burn_in > 1.0)
            throw std::invalid_argument("bad DEIM settings");
    }
    if (j.contains("stability")) {
        const auto& s = j.at("stability");
        const std::string m = s.value("c1_mode", std::string("max"));
        if (m == "max")
            cfg.c1_mode = C1Mode::MaxAbsolute;
        else if (m == "min")
            cfg.c1_mode = C1Mode::MinSigned;
        else
            throw std::invalid_argument("c1_mode must be max or min");
    }
    if (j.contains("ein_form")) {
        const std::string f = j.at("ein_form").get<std::string>();
        if (f == "analysis")
            cfg.ein_form = EinForm::Analysis;
        else if (f == "as_printed")
            cfg.ein_form = EinForm::AsPrinted;
        else
            throw std::invalid_argument("ein_form must be analysis or as_printed");
    }
    if (j.contains("kappa0")) {
        const auto& k = j.at("kappa0");
        if (k.is_string() && k.get<std::string>() == "initial_state") {
            cfg.kappa0_choice = SchemeConfig::Kappa0::InitialState;
        } else if (k.is_number()) {
            cfg.kappa0_choice = SchemeConfig::Kappa0::Constant;
            cfg.kappa0_value = k.get<double>();
        } else {
            throw std::invalid_argument("kappa0 must be 'initial_state' or a number");
        }
    }
    cfg.out_dir = j.value("out", cfg.out_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.save_stride = j.value("save_stride", cfg.save_stride);
    if (cfg.save_stride < 1) throw std::invalid_argument("save_stride must be >= 1");
    cfg.dt_override = j.value("dt", 0.0);
    cfg.T_override = j.value("T", 0.0);
    if (cfg.dt_override > 0.0) cfg.problem.dt = cfg.dt_override;
    if (cfg.T_override > 0.0) cfg.problem.T = cfg.T_override;
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
    nlohmann::json j;
    in >> j;
    return parse_experiment_config(j);
}

struct ExperimentRow
{
    std::string     scheme;
    std::string     basis;
    int             dof1 = 0, dof2 = 0;
    double          l2_avg_pct = 0.0;
    double          energy_avg_pct = 0.0;
    StabilityReport stab;
    bool            has_stab = false;
    PhaseTimings    timings;
    bool            failed = false;
    std::string     error;
};

struct ExperimentResult
{
    std::vector<ExperimentRow> rows;
    double                     reference_seconds = 0.0;
    StabilityReport            reference_stab;   // unused, kept for symmetry
};

namespace detail {

inline std::string fmt(double v)
{
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

}  // namespace detail

inline void write_summary_csv(std::ostream& os, const ExperimentResult& res)
{
    os << "scheme,basis,dof1,dof2,l2_avg_pct,energy_avg_pct,gamma,c1,lambda_max,dt_max,"
          "verdict\n";
    for (const auto& r : res.rows) {
        os << r.scheme << ',' << r.basis << ',' << r.dof1 << ',' << r.dof2 << ',';
        if (r.failed)
            os << "nan,nan,";
        else
            os << detail::fmt(r.l2_avg_pct) << ',' << detail::fmt(r.energy_avg_pct) << ',';
        if (r.has_stab)
            os << detail::fmt(r.stab.gamma) << ',' << detail::fmt(r.stab.c1) << ','
               << detail::fmt(r.stab.lambda_max) << ',' << detail::fmt(r.stab.dt_max) << ','
               << (r.failed ? "error" : (r.stab.pass ? "pass" : "fail"));
        else
            os << "-,-,-,-," << (r.failed ? "error" : "-");
        os << '\n';
    }
}

inline void write_timings_csv(std::ostream& os, const ExperimentResult& res)
{
    os << "scheme,basis,assembly_s,implicit_solve_s,explicit_update_s,projection_s,total_s\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& r : res.rows)
        os << r.scheme << ',' << r.basis << ',' << r.timings.assembly << ','
           << r.timings.implicit_solve << ',' << r.timings.explicit_update << ','
           << r.timings.projection << ',' << r.timings.total << '\n';
}

namespace detail {

inline void dump_snapshots(const std::filesystem::path& dir, const std::string& tag,
                           const Trajectory& traj)
{
    const auto save_at = [&](std::size_t k, const std::string& which) {
        std::ofstream os(dir / ("snapshot_" + tag + "_" + which + ".txt"));
        save_nodal_field(os, traj.nx, traj.ny, traj.states[k]);
    };
    // the early snapshot prefers saved step 2, falling back to the first
    // saved step past the initial state
    std::size_t early = traj.states.size() > 1 ? 1 : 0;
    for (std::size_t k = 0; k < traj.steps.size(); k++)
        if (traj.steps[k] == 2) early = k;
    save_at(early, "early");
    save_at(traj.states.size() - 1, "final");
}

}  // namespace detail

/* Runs the configured scheme-by-basis matrix against one fine reference and
 * writes summary.csv, timings.csv, per-row error histories, and snapshot
 * dumps into the output directory. Per-row failures are recorded and the
 * remaining rows proceed. */
inline ExperimentResult run_experiment(const ExperimentConfig& cfg)
{
    namespace fs = std::filesystem;
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);

    const ProblemSpec& spec = cfg.problem;
    const MeshHierarchy mesh = spec.hierarchy();
    const SparseOperator M = assemble_mass(mesh);
    const SparseOperator Mw = spec.mass_weight * M;

    SchemeConfig base_cfg;
    base_cfg.ein_form = cfg.ein_form;
    base_cfg.kappa0_choice = cfg.kappa0_choice;
    base_cfg.kappa0_value = cfg.kappa0_value;
    base_cfg.save_stride = cfg.save_stride;

    const double tilde = resolve_kappa0_state(spec, base_cfg);
    const Eigen::VectorXd kappa0 = kappa0_cellwise(mesh, spec.kappa_x, spec.law, tilde);
    const SparseOperator A0 = assemble_stiffness(mesh, kappa0);
    const double k0_contrast = kappa0.maxCoeff() / kappa0.minCoeff();

    ExperimentResult res;

    // one fine reference for every row
    SchemeConfig ref_cfg = base_cfg;
    ref_cfg.scheme = Scheme::FineReference;
    RunResult ref = run_scheme(spec, ref_cfg);
    res.reference_seconds = ref.timings.total;

    const double c1 = estimate_c1(spec.law, tilde, ref.traj.states, cfg.c1_mode);

    const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);

    for (const auto& bs : cfg.bases) {
        MultiscaleBasis basis;
        std::string basis_error;
        try {
            basis = bs.variant == MultiscaleBasis::Variant::Nlmc
                        ? build_nlmc_basis(mesh, part, kappa0, bs.layers)
                        : build_enlmc_basis(mesh, part, kappa0, bs.l1, bs.l2, bs.layers);
        } catch (const std::exception& e) {
            basis_error = e.what();
        }

        StabilityReport stab;
        CoarseOperators ops;
        if (basis_error.empty()) {
            const DofVector load = build_load(mesh, M, spec.source);
            ops = coarse_operators(basis, Mw, A0, load);
            const double gamma = subspace_gamma(M, basis);
            const double lam = cfl_bound(ops.A22, ops.M22);
            stab = check(gamma, c1, lam, spec.dt, k0_contrast);
        }

        DeimModel deim;
        bool have_deim = false;
        std::string deim_error;
        const bool wants_deim =
            std::count(cfg.schemes.begin(), cfg.schemes.end(), Scheme::EinSplitDeim) > 0;
        if (wants_deim && basis_error.empty()) {
            try {
                SchemeConfig burn = base_cfg;
                burn.scheme = Scheme::CoarseImplicitNewton;
                burn.nsteps = std::max(2, (int)std::lround(cfg.deim_burn_in * spec.num_steps()));
                burn.save_stride = 1;
                const RunResult warm = run_scheme(spec, burn, &basis);
                const SnapshotSet snaps =
                    collect_snapshots(spec, warm.traj, cfg.deim_stride);
                deim = offline_tensors(pod(snaps, cfg.deim_eps), mesh, basis);
                have_deim = true;
            } catch (const std::exception& e) {
                deim_error = e.what();
            }
        }

        for (Scheme sch : cfg.schemes) {
            if (sch == Scheme::FineReference) continue;   // emitted once below
            ExperimentRow row;
            row.scheme = scheme_id(sch);
            row.basis = basis_label(bs);
            row.dof1 = basis.d1();
            row.dof2 = basis.d2();
            row.stab = stab;
            row.has_stab = basis_error.empty();
            if (!basis_error.empty()) {
                row.failed = true;
                row.error = basis_error;
                res.rows.push_back(row);
                continue;
            }
            if (sch == Scheme::EinSplitDeim && !have_deim) {
                row.failed = true;
                row.error = deim_error.empty() ? "DEIM model unavailable" : deim_error;
                res.rows.push_back(row);
                continue;
            }
            try {
                SchemeConfig rc = base_cfg;
                rc.scheme = sch;
                const RunResult run =
                    run_scheme(spec, rc, &basis, have_deim ? &deim : nullptr);
                row.timings = run.timings;
                if (run.blew_up) {
                    row.l2_avg_pct = std::numeric_limits<double>::infinity();
                    row.energy_avg_pct = std::numeric_limits<double>::infinity();
                    row.error = "blew up at step " + std::to_string(run.blowup_step);
                } else {
                    const ErrorSeries es = compare(ref.traj, run.traj, M, A0);
                    row.l2_avg_pct = 100.0 * es.l2_avg;
                    row.energy_avg_pct = 100.0 * es.energy_avg;
                    std::ofstream ef(out / ("errors_" + row.scheme + "_" + row.basis + ".csv"));
                    write_error_series(ef, es);
                    detail::dump_snapshots(out, row.scheme + "_" + row.basis, run.traj);
                }
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            res.rows.push_back(row);
        }
    }

    if (std::count(cfg.schemes.begin(), cfg.schemes.end(), Scheme::FineReference) > 0) {
        ExperimentRow row;
        row.scheme = scheme_id(Scheme::FineReference);
        row.basis = "-";
        row.dof1 = mesh.num_nodes();
        row.dof2 = 0;
        row.timings.total = ref.timings.total;
        row.timings.implicit_solve = ref.timings.implicit_solve;
        res.rows.push_back(row);
        detail::dump_snapshots(out, "fine", ref.traj);
    }

    {
        std::ofstream sf(out / "summary.csv");
        write_summary_csv(sf, res);
        std::ofstream tf(out / "timings.csv");
        write_timings_csv(tf, res);
    }
    return res;
}

}  // namespace einsplit
