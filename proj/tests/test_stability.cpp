// SPDX-License-Identifier: Apache-2.0

#include <random>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "einsplit/einsplit.hpp"

using namespace einsplit;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, unsigned seed)
{
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Eigen::MatrixXd A(rows, cols);
    for (int c = 0; c < cols; c++)
        for (int r = 0; r < rows; r++) A(r, c) = dist(gen);
    return A;
}

MultiscaleBasis basis_from(const Eigen::MatrixXd& P1, const Eigen::MatrixXd& P2)
{
    MultiscaleBasis b;
    b.Psi1 = P1;
    b.Psi2 = P2;
    return b;
}

SparseOperator sparse_identity(int n)
{
    SparseOperator I(n, n);
    I.setIdentity();
    return I;
}

}  // namespace

TEST_CASE("angle between orthogonal component spaces is zero", "[stability]")
{
    const int n = 6;
    Eigen::MatrixXd P1 = Eigen::MatrixXd::Zero(n, 2), P2 = Eigen::MatrixXd::Zero(n, 2);
    P1(0, 0) = 1.0;
    P1(1, 1) = 1.0;
    P2(2, 0) = 1.0;
    P2(3, 1) = 1.0;
    CHECK(subspace_gamma(sparse_identity(n), basis_from(P1, P2)) == 0.0);
}

TEST_CASE("coincident spaces give the degenerate angle", "[stability]")
{
    const Eigen::MatrixXd P = random_matrix(8, 3, 7);
    const double g = subspace_gamma(sparse_identity(8), basis_from(P, P));
    CHECK(g == Catch::Approx(1.0).margin(1e-12));
    CHECK(check(g, 0.1, 1.0, 1e-6).degenerate);
}

TEST_CASE("angle matches the generalized eigenvalue oracle", "[stability]")
{
    const MeshHierarchy mesh = build_hierarchy(4, 3, 1, 1);
    const SparseOperator M = assemble_mass(mesh);
    const Eigen::MatrixXd Md(M);

    const Eigen::MatrixXd P1 = random_matrix(mesh.num_nodes(), 3, 21);
    const Eigen::MatrixXd P2 = random_matrix(mesh.num_nodes(), 4, 22);
    const double got = subspace_gamma(M, basis_from(P1, P2));
    const double want = oracle::dense_gamma(Md, P1, P2);
    CHECK(got == Catch::Approx(want).epsilon(1e-10));
    CHECK(got > 0.0);
    CHECK(got < 1.0);
}

TEST_CASE("angle is a property of the spaces, not the columns", "[stability]")
{
    const MeshHierarchy mesh = build_hierarchy(4, 4, 1, 1);
    const SparseOperator M = assemble_mass(mesh);
    const Eigen::MatrixXd P1 = random_matrix(mesh.num_nodes(), 3, 31);
    const Eigen::MatrixXd P2 = random_matrix(mesh.num_nodes(), 5, 32);

    Eigen::MatrixXd R1 = random_matrix(3, 3, 33) + 3.0 * Eigen::MatrixXd::Identity(3, 3);
    Eigen::MatrixXd R2 = random_matrix(5, 5, 34) + 3.0 * Eigen::MatrixXd::Identity(5, 5);
    const double a = subspace_gamma(M, basis_from(P1, P2));
    const double b = subspace_gamma(M, basis_from(P1 * R1, P2 * R2));
    CHECK(a == Catch::Approx(b).epsilon(1e-10));
}

TEST_CASE("dependent basis columns are refused", "[stability]")
{
    Eigen::MatrixXd P1 = random_matrix(8, 3, 41);
    P1.col(2) = P1.col(0);   // rank deficient Gram block
    const Eigen::MatrixXd P2 = random_matrix(8, 2, 42);
    CHECK_THROWS_WITH(subspace_gamma(sparse_identity(8), basis_from(P1, P2)),
                      Catch::Matchers::ContainsSubstring("dependent basis columns"));
}

TEST_CASE("coefficient deviation estimate", "[stability]")
{
    const NonlinearLaw law = NonlinearLaw::exp_law(1.0);

    const std::vector<DofVector> one{DofVector::Constant(4, 0.1)};
    CHECK(estimate_c1(law, 0.0, one) == Catch::Approx(std::exp(0.1) - 1.0));
    CHECK(estimate_c1(law, 0.0, one, C1Mode::MinSigned) ==
          Catch::Approx(std::exp(0.1) - 1.0));

    DofVector mixed(2);
    mixed << -0.2, 0.1;
    const std::vector<DofVector> states{mixed};
    CHECK(estimate_c1(law, 0.0, states) == Catch::Approx(1.0 - std::exp(-0.2)));
    CHECK(estimate_c1(law, 0.0, states, C1Mode::MinSigned) ==
          Catch::Approx(std::exp(-0.2) - 1.0));

    // deviations are relative to the frozen coefficient
    CHECK(estimate_c1(law, 0.5, one) ==
          Catch::Approx(std::abs(std::exp(0.1) - std::exp(0.5)) / std::exp(0.5)));

    CHECK_THROWS_AS(estimate_c1(law, 0.0, {}), std::invalid_argument);
}

TEST_CASE("explicit step bound from the coarse pencil", "[stability]")
{
    CHECK(cfl_bound(Eigen::MatrixXd(), Eigen::MatrixXd()) == 0.0);

    Eigen::MatrixXd A(1, 1), M(1, 1);
    A << 2.0;
    M << 4.0;
    CHECK(cfl_bound(A, M) == Catch::Approx(0.5));

    const Eigen::Vector3d da(1.0, 8.0, 3.0), dm(1.0, 2.0, 1.0);
    CHECK(cfl_bound(da.asDiagonal(), dm.asDiagonal()) == Catch::Approx(4.0));

    Eigen::MatrixXd bad(2, 2);
    bad.setIdentity();
    CHECK_THROWS_AS(cfl_bound(bad, M), std::invalid_argument);

    // no Rayleigh quotient exceeds the reported maximum
    const Eigen::MatrixXd G = random_matrix(6, 6, 51);
    const Eigen::MatrixXd S = G * G.transpose() + 6.0 * Eigen::MatrixXd::Identity(6, 6);
    const Eigen::MatrixXd H = random_matrix(6, 6, 52);
    const Eigen::MatrixXd T = H * H.transpose() + 6.0 * Eigen::MatrixXd::Identity(6, 6);
    const double lam = cfl_bound(S, T);
    for (unsigned seed = 0; seed < 20; seed++) {
        const Eigen::VectorXd v = random_matrix(6, 1, 100 + seed);
        CHECK(v.dot(S * v) / v.dot(T * v) <= lam * (1.0 + 1e-12));
    }
}

TEST_CASE("step threshold and verdict", "[stability]")
{
    const StabilityReport rep = check(0.5, 0.25, 10.0, 0.03);
    CHECK(rep.dt_max == Catch::Approx(0.0375));
    CHECK(rep.dt_max_tight == Catch::Approx(0.01875));
    CHECK(rep.pass);
    CHECK_FALSE(rep.degenerate);

    CHECK_FALSE(check(0.5, 0.25, 10.0, 0.04).pass);

    const StabilityReport sat = check(0.2, 1.0, 10.0, 1e-9);
    CHECK(sat.dt_max == 0.0);
    CHECK_FALSE(sat.pass);

    const StabilityReport free = check(0.2, 0.1, 0.0, 1e9);
    CHECK(std::isinf(free.dt_max));
    CHECK(free.pass);

    const StabilityReport deg = check(1.0, 0.1, 10.0, 1e-9);
    CHECK(deg.degenerate);
    CHECK_FALSE(deg.pass);
}

TEST_CASE("stability report serialization", "[stability]")
{
    std::stringstream ss;
    write_stability_csv(ss, check(0.5, 0.25, 10.0, 0.03));
    std::string line;
    std::getline(ss, line);
    CHECK(line == "gamma,c1,lambda_max,dt_max,dt,verdict");
    std::getline(ss, line);
    CHECK(line.find("pass") != std::string::npos);

    std::stringstream sf;
    write_stability_csv(sf, check(0.5, 0.25, 10.0, 10.0));
    std::getline(sf, line);
    std::getline(sf, line);
    CHECK(line.find("fail") != std::string::npos);
}

TEST_CASE("energy boundedness certificate", "[stability]")
{
    // one step, every ingredient chosen so the bound is hand-computable
    const std::vector<double> i1{0.2}, i2{0.3}, ea{0.4};
    const LemmaCheck lc =
        lemma_energy_check(0.5, 0.1, 1.0, i1, i2, ea, 3.0, 2.0, 4.0, 0.25, 1.0);
    const double e = 0.5 * 0.5 * (0.2 + 0.3) / 0.1 + 0.5 * 0.4;
    CHECK(lc.log_max_energy == Catch::Approx(std::log(e)));
    const double d = 2.0 * 3.0 / 4.0;
    const double ct = 1.0 * (2.0 / 0.5 + 2.0 / 0.5);
    CHECK(lc.log_bound == Catch::Approx(d * d / (2.0 * 0.5) + std::log(1.0 + ct * 0.25)));
    CHECK(lc.bounded);
    CHECK(lc.argmax_step == 1);

    // an exploding series breaks the certificate
    const std::vector<double> big{1.0, 5.0, 1e30};
    const LemmaCheck bad =
        lemma_energy_check(0.5, 0.1, 1.0, big, big, big, 1.0, 1.0, 1.0, 0.0, 1.0);
    CHECK_FALSE(bad.bounded);
    CHECK(bad.argmax_step == 3);

    CHECK_THROWS_AS(lemma_energy_check(0.5, 0.1, 1.0, {1.0}, {}, {}, 1, 1, 1, 0, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(lemma_energy_check(1.0, 0.1, 1.0, i1, i2, ea, 1, 1, 1, 0, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(lemma_energy_check(0.5, 0.1, 1.0, i1, i2, ea, 1, 1, 0.0, 0, 1),
                    std::invalid_argument);
}

TEST_CASE("measured quantities certify a compliant run", "[stability]")
{
    // small benchmark-style run well inside the threshold
    ProblemSpec spec;
    spec.nx = spec.ny = 10;
    spec.Nx = spec.Ny = 2;
    spec.kappa_x = channelized_field(10, 10, 1.0, 1.0, benchmark_channels(1.0, 1.0, 1e2));
    spec.law = NonlinearLaw::exp_law(1.0);
    spec.source.x = 0.3;
    spec.source.y = 0.1;
    spec.dt = 1e-5;
    spec.T = 2e-4;

    const MeshHierarchy mesh = spec.hierarchy();
    const MultiscaleBasis basis = build_nlmc_basis(
        mesh, partition_continua(mesh, spec.kappa_x), spec.kappa_x.values, 1);
    const SparseOperator M = assemble_mass(mesh);
    const double gamma = subspace_gamma(M, basis);

    const SparseOperator A0 = assemble_stiffness(
        mesh, kappa0_cellwise(mesh, spec.kappa_x, spec.law, 0.0));
    const DofVector load = build_load(mesh, M, spec.source);
    const CoarseOperators ops = coarse_operators(basis, M, A0, load);
    const double lam = cfl_bound(ops.A22, ops.M22);
    CHECK(lam > 0.0);

    // pick the step from the measured threshold, then certify the run
    REQUIRE(gamma < 1.0 - 1e-10);
    const double dt = std::min(1e-5, 0.25 * (1.0 - gamma) / lam);
    const int nsteps = 20;

    SchemeConfig cfg;
    cfg.scheme = Scheme::EinSplit;
    cfg.record_energy = true;
    cfg.dt = dt;
    cfg.nsteps = nsteps;
    const RunResult run = run_scheme(spec, cfg, &basis);
    REQUIRE_FALSE(run.blew_up);

    const double c1 = estimate_c1(spec.law, 0.0, run.traj.states);
    CHECK(c1 < 1.0);
    const StabilityReport rep = check(gamma, c1, lam, dt);
    CHECK(rep.pass);

    // the load vector holds moments, so the source density's squared norm
    // needs the inverse mass
    const double fm2 = load.dot(solve_spd(M, load));
    NonlinearLaw sweep = spec.law;
    sweep.u_min = -1.0;
    sweep.u_max = 1.0;
    const LemmaCheck lc = lemma_energy_check(
        gamma, dt, dt * nsteps, run.inc1_m2, run.inc2_m2, run.energy_a,
        run.c0_observed, empirical_lipschitz(sweep), sweep.value(-1.0), fm2, 0.0);
    CHECK(lc.bounded);
}
