// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "einsplit/einsplit.hpp"

namespace {

using namespace einsplit;

int cmd_run(const std::string& config_path, const std::string& out_override, int save_stride)
{
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (save_stride > 0) cfg.save_stride = save_stride;
    const ExperimentResult res = run_experiment(cfg);
    write_summary_csv(std::cout, res);
    std::cout << "# reference solve: " << res.reference_seconds << " s\n";
    bool any_failed = false;
    for (const auto& r : res.rows) {
        if (!r.error.empty())
            std::cerr << "row " << r.scheme << "/" << r.basis << ": " << r.error << "\n";
        any_failed = any_failed || r.failed;
    }
    return any_failed ? 2 : 0;
}

int cmd_basis(const std::string& config_path, const std::string& out_override)
{
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    std::filesystem::create_directories(cfg.out_dir);
    if (cfg.bases.empty()) {
        std::cerr << "config has no bases\n";
        return 1;
    }

    const MeshHierarchy mesh = cfg.problem.hierarchy();
    SchemeConfig sc;
    sc.kappa0_choice = cfg.kappa0_choice;
    sc.kappa0_value = cfg.kappa0_value;
    const double tilde = resolve_kappa0_state(cfg.problem, sc);
    const Eigen::VectorXd kappa0 = kappa0_cellwise(mesh, cfg.problem.kappa_x, cfg.problem.law, tilde);
    const ContinuumPartition part = partition_continua(mesh, cfg.problem.kappa_x);

    for (const auto& bs : cfg.bases) {
        const MultiscaleBasis basis =
            bs.variant == MultiscaleBasis::Variant::Nlmc
                ? build_nlmc_basis(mesh, part, kappa0, bs.layers)
                : build_enlmc_basis(mesh, part, kappa0, bs.l1, bs.l2, bs.layers);
        const std::string path =
            (std::filesystem::path(cfg.out_dir) / ("basis_" + basis_label(bs) + ".txt")).string();
        std::ofstream os(path);
        save_basis(os, basis);
        std::cout << basis_label(bs) << ": " << basis.d1() << "+" << basis.d2()
                  << " columns, max constraint residual " << basis.max_constraint_residual
                  << ", written to " << path << "\n";
    }
    return 0;
}

int cmd_stability(const std::string& config_path)
{
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (cfg.bases.empty()) {
        std::cerr << "config has no bases\n";
        return 1;
    }

    const ProblemSpec& spec = cfg.problem;
    const MeshHierarchy mesh = spec.hierarchy();
    const SparseOperator M = assemble_mass(mesh);
    const SparseOperator Mw = spec.mass_weight * M;
    SchemeConfig sc;
    sc.kappa0_choice = cfg.kappa0_choice;
    sc.kappa0_value = cfg.kappa0_value;
    const double tilde = resolve_kappa0_state(spec, sc);
    const Eigen::VectorXd kappa0 = kappa0_cellwise(mesh, spec.kappa_x, spec.law, tilde);
    const SparseOperator A0 = assemble_stiffness(mesh, kappa0);
    const double contrast = kappa0.maxCoeff() / kappa0.minCoeff();

    // deviation sampled from a short fine burn-in, a tenth of the horizon
    ProblemSpec burn = spec;
    burn.T = std::max(spec.dt, 0.1 * spec.T);
    const ReferenceRun ref = run_reference(burn, NewtonConfig{}, 1);
    const double c1 = estimate_c1(spec.law, tilde, ref.traj.states, cfg.c1_mode);

    const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);
    const DofVector load = build_load(mesh, M, spec.source);
    for (const auto& bs : cfg.bases) {
        const MultiscaleBasis basis =
            bs.variant == MultiscaleBasis::Variant::Nlmc
                ? build_nlmc_basis(mesh, part, kappa0, bs.layers)
                : build_enlmc_basis(mesh, part, kappa0, bs.l1, bs.l2, bs.layers);
        const CoarseOperators ops = coarse_operators(basis, Mw, A0, load);
        const double gamma = subspace_gamma(M, basis);
        const double lam = cfl_bound(ops.A22, ops.M22);
        const StabilityReport rep = check(gamma, c1, lam, spec.dt, contrast);
        std::cout << "basis " << basis_label(bs) << "\n";
        write_stability_csv(std::cout, rep);
    }
    return 0;
}

int cmd_oracle(const std::string& which)
{
    std::cout.precision(12);
    if (which == "element") {
        std::cout << "unit-square element mass\n"
                  << oracle::element_mass_closed_form(1.0, 1.0) << "\n";
        std::cout << "unit-square element stiffness\n"
                  << oracle::element_stiffness_closed_form(1.0, 1.0) << "\n";
        std::cout << "hx=0.5 hy=0.25 element stiffness\n"
                  << oracle::element_stiffness_closed_form(0.5, 0.25) << "\n";
        return 0;
    }
    if (which == "pod") {
        std::cout << "sigma=(3,2,1) eps=0.92 rank " << oracle::pod_rank({3, 2, 1}, 0.92)
                  << "\n";
        return 0;
    }
    if (which == "continua") {
        const ProblemSpec spec = builtin_spec("example1_desk");
        const MeshHierarchy mesh = spec.hierarchy();
        const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);
        std::cout << "benchmark fracture continua " << part.total_fracture_continua() << "\n";
        return 0;
    }
    if (which == "gamma") {
        const MeshHierarchy mesh = build_hierarchy(8, 8, 2, 2);
        const Eigen::MatrixXd M = oracle::dense_mass(mesh);
        srand(7u);
        const Eigen::MatrixXd P1 = Eigen::MatrixXd::Random(mesh.num_nodes(), 2);
        const Eigen::MatrixXd P2 = Eigen::MatrixXd::Random(mesh.num_nodes(), 2);
        std::cout << "random 2x2 column case gamma " << oracle::dense_gamma(M, P1, P2) << "\n";
        return 0;
    }
    if (which == "deim") {
        Eigen::MatrixXd U(5, 3);
        U << 0.9, 0.1, 0.2, 0.1, 0.8, 0.1, 0.3, 0.2, 0.7, 0.2, 0.4, 0.3, 0.1, 0.1, 0.1;
        const auto idx = oracle::deim_greedy(U);
        std::cout << "greedy rows";
        for (int i : idx) std::cout << " " << i;
        std::cout << "\n";
        return 0;
    }
    if (which == "ein") {
        const ProblemSpec spec = [] {
            ProblemSpec s = builtin_spec("example1_desk");
            s.nx = s.ny = 20;
            s.Nx = s.Ny = 4;
            s.kappa_x = channelized_field(s.hierarchy(), benchmark_channels(s.Lx, s.Ly, 1e4),
                                          1.0);
            s.u0_field = gaussian_nodal_field(s.hierarchy(), 0.31, 0.11, 0.08, 1.0);
            s.source = SourceSpec{};
            s.source.x = 0.31;
            s.source.y = 0.11;
            s.dt = 1e-5;
            s.T = 20e-5;
            return s;
        }();
        const MeshHierarchy mesh = spec.hierarchy();
        const SparseOperator M = assemble_mass(mesh);
        const Eigen::VectorXd kappa0 = kappa0_cellwise(mesh, spec.kappa_x, spec.law, 0.0);
        const SparseOperator A0 = assemble_stiffness(mesh, kappa0);
        const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);
        const MultiscaleBasis basis = build_nlmc_basis(mesh, part, kappa0, 3);
        const DofVector load = build_load(mesh, M, spec.source);
        const CoarseOperators ops = coarse_operators(basis, M, A0, load);

        SchemeConfig rc;
        rc.scheme = Scheme::EinSplit;
        rc.kappa0_choice = SchemeConfig::Kappa0::Constant;
        rc.kappa0_value = 0.0;
        const RunResult run = run_scheme(spec, rc, &basis);

        const SplitState s0 = init_split_state(basis, M, spec.initial_state(mesh));
        const auto correction = [&](const Eigen::VectorXd& c1, const Eigen::VectorXd& c2,
                                    Eigen::VectorXd& g1, Eigen::VectorXd& g2) {
            const DofVector u = prolongate(basis, c1, c2);
            const Eigen::MatrixXd A =
                oracle::dense_nonlinear_stiffness(mesh, spec.kappa_x, spec.law, u);
            const DofVector w = A * u - A0 * u;
            g1 = basis.Psi1.transpose() * w;
            g2 = basis.Psi2.transpose() * w;
        };
        const auto dense = oracle::dense_ein_march(ops.M11, ops.M12, ops.M22, ops.A11,
                                                   ops.A12, ops.A22, ops.f1, ops.f2, s0.c1,
                                                   s0.c2, spec.dt, spec.num_steps(),
                                                   correction, true);
        const DofVector ud = prolongate(basis, dense.back().c1, dense.back().c2);
        const double dev = (run.traj.final_state() - ud).cwiseAbs().maxCoeff();
        std::cout << "dense-march deviation after " << spec.num_steps() << " steps " << dev
                  << "\n";
        return dev < 1e-10 ? 0 : 2;
    }
    std::cerr << "unknown oracle case '" << which
              << "' (element, pod, continua, gamma, deim, ein)\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"nonlinear multiscale diffusion solver suite"};
    app.require_subcommand(1);

    std::string config_path, out_dir, oracle_case;
    int threads = 0, save_stride = 0;
    unsigned seed = 0;

    app.add_option("--threads", threads, "Eigen thread count");

    auto* run = app.add_subcommand("run", "run the experiment matrix from a config");
    run->add_option("config,--config", config_path, "config file")->required();
    run->add_option("--out", out_dir, "output directory override");
    run->add_option("--seed", seed, "random seed override");
    run->add_option("--save-stride", save_stride, "trajectory save stride override");

    auto* basis = app.add_subcommand("basis", "build and dump the multiscale bases");
    basis->add_option("config,--config", config_path, "config file")->required();
    basis->add_option("--out", out_dir, "output directory override");

    auto* stab = app.add_subcommand("stability", "print the time-step diagnostic");
    stab->add_option("config,--config", config_path, "config file")->required();

    auto* orc = app.add_subcommand("oracle", "run a brute-force oracle case");
    orc->add_option("case", oracle_case, "case name")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (threads > 0) Eigen::setNbThreads(threads);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, save_stride);
        if (basis->parsed()) return cmd_basis(config_path, out_dir);
        if (stab->parsed()) return cmd_stability(config_path);
        if (orc->parsed()) return cmd_oracle(oracle_case);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
