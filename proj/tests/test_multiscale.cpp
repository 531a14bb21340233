// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <catch2/catch_amalgamated.hpp>

#include "einsplit/einsplit.hpp"

using namespace einsplit;

namespace {

PermeabilityField uniform_field(const MeshHierarchy& mesh, double value)
{
    PermeabilityField f;
    f.nx = mesh.nx;
    f.ny = mesh.ny;
    f.values = Eigen::VectorXd::Constant(mesh.num_cells(), value);
    return f;
}

// moment of a basis column against one auxiliary function, via a mass
// matrix assembled only over the function's support cells
double moment(const MeshHierarchy& mesh, const AuxFunction& f, const Eigen::VectorXd& psi)
{
    Eigen::VectorXd w = Eigen::VectorXd::Zero(mesh.num_cells());
    for (int c : f.cells) w[c] = 1.0;
    const SparseOperator Mf = assemble_mass(mesh, w);
    Eigen::VectorXd a = Eigen::VectorXd::Zero(mesh.num_nodes());
    for (size_t l = 0; l < f.nodes.size(); l++) a[f.nodes[l]] = f.values[l];
    return a.dot(Mf * psi);
}

}  // namespace

TEST_CASE("uniform fields carry no fracture continua", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(8, 8, 2, 2);
    const ContinuumPartition part = partition_continua(mesh, uniform_field(mesh, 5.0));
    CHECK(part.total_fracture_continua() == 0);
    for (const auto& blk : part.blocks) CHECK(blk.matrix_cells.size() == 16);
}

TEST_CASE("partition threshold validation", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(8, 8, 2, 2);
    const PermeabilityField f =
        channelized_field(mesh, {{0.0, 0.5, 1.0, 0.5, 1, 1e4}});
    CHECK_THROWS_AS(partition_continua(mesh, f, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(partition_continua(mesh, f, 1e5), std::invalid_argument);

    // the default threshold is the geometric mean of the range
    const ContinuumPartition part = partition_continua(mesh, f);
    CHECK(part.threshold == Catch::Approx(std::sqrt(1e4)));

    PermeabilityField wrong = f;
    wrong.values = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(partition_continua(mesh, wrong), std::invalid_argument);
}

TEST_CASE("one channel gives one continuum per crossed block", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(8, 8, 2, 2);
    const PermeabilityField f =
        channelized_field(mesh, {{0.0, 0.5, 1.0, 0.5, 1, 1e4}});
    const ContinuumPartition part = partition_continua(mesh, f);
    CHECK(part.total_fracture_continua() == 2);

    // the channel row sits in the upper block row only
    CHECK(part.blocks[0].fracture_continua.empty());
    CHECK(part.blocks[1].fracture_continua.empty());
    CHECK(part.blocks[2].fracture_continua.size() == 1);
    CHECK(part.blocks[3].fracture_continua.size() == 1);
}

TEST_CASE("benchmark geometry has the published continuum count", "[multiscale]")
{
    const ProblemSpec spec = builtin_spec("example1");
    const MeshHierarchy mesh = spec.hierarchy();
    const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);
    CHECK(part.total_fracture_continua() == 26);

    // the desk-scale analog preserves the count
    const ProblemSpec desk = builtin_spec("example1_desk");
    const ContinuumPartition dpart = partition_continua(desk.hierarchy(), desk.kappa_x);
    CHECK(dpart.total_fracture_continua() == 26);
}

TEST_CASE("flood fill agrees with a bfs oracle", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(20, 20, 4, 4);
    const PermeabilityField f =
        channelized_field(mesh, benchmark_channels(1.0, 1.0, 1e4));
    const ContinuumPartition part = partition_continua(mesh, f);

    for (int b = 0; b < mesh.num_blocks(); b++) {
        CellSet frac;
        for (int c : mesh.cells_of_block(b))
            if (f.values[c] >= part.threshold) frac.push_back(c);
        const auto comps = oracle::bfs_components(mesh, frac);
        REQUIRE(comps.size() == part.blocks[b].fracture_continua.size());

        std::set<CellSet> got, want;
        for (auto cs : part.blocks[b].fracture_continua) {
            std::sort(cs.begin(), cs.end());
            got.insert(cs);
        }
        for (auto cs : comps) {
            std::sort(cs.begin(), cs.end());
            want.insert(cs);
        }
        CHECK(got == want);
    }
}

TEST_CASE("indicator auxiliary space mirrors the partition", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(20, 20, 4, 4);
    const PermeabilityField f =
        channelized_field(mesh, benchmark_channels(1.0, 1.0, 1e4));
    const ContinuumPartition part = partition_continua(mesh, f);
    const AuxiliarySpace aux = nlmc_aux_space(mesh, part);

    REQUIRE((int)aux.blocks.size() == mesh.num_blocks());
    for (int b = 0; b < mesh.num_blocks(); b++) {
        CHECK(aux.blocks[b].fracture.size() == part.blocks[b].fracture_continua.size());
        CHECK(aux.blocks[b].matrix.size() == 1);
        for (const auto& fn : aux.blocks[b].fracture)
            CHECK(fn.values.isConstant(1.0));
    }
}

TEST_CASE("spectral auxiliary functions on a uniform block", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(8, 8, 2, 2);
    const PermeabilityField f = uniform_field(mesh, 3.0);
    const Eigen::VectorXd kappa0 = f.values;
    const CellSet cells = mesh.cells_of_block(0);

    const auto fns = spectral_cellset(mesh, cells, kappa0, 3);
    REQUIRE(fns.size() == 3);

    // natural conditions: the first mode is constant with a null eigenvalue
    CHECK(fns[0].eigenvalue < 1e-8 * fns[1].eigenvalue);
    const double v0 = fns[0].values[0];
    CHECK((fns[0].values.array() - v0).abs().maxCoeff() < 1e-8 * std::abs(v0));
    CHECK(fns[0].eigenvalue <= fns[1].eigenvalue);
    CHECK(fns[1].eigenvalue <= fns[2].eigenvalue);

    // eigenvalues scale with the coefficient
    const auto scaled = spectral_cellset(mesh, cells, (10.0 * kappa0).eval(), 3);
    CHECK(scaled[1].eigenvalue == Catch::Approx(10.0 * fns[1].eigenvalue));

    CHECK(spectral_cellset(mesh, {}, kappa0, 3).empty());
    CHECK(spectral_cellset(mesh, cells, kappa0, 0).empty());
}

TEST_CASE("nlmc dof counts on the benchmark geometry", "[multiscale]")
{
    const ProblemSpec spec = builtin_spec("example1");
    const MeshHierarchy mesh = spec.hierarchy();
    const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);
    const AuxiliarySpace aux = nlmc_aux_space(mesh, part);

    int d1 = 0, d2 = 0;
    for (const auto& b : aux.blocks) {
        d1 += (int)b.fracture.size();
        d2 += (int)b.matrix.size();
    }
    CHECK(d1 == 26);
    CHECK(d2 == 100);
}

TEST_CASE("enlmc dof counts follow the published table", "[multiscale]")
{
    const ProblemSpec spec = builtin_spec("example1");
    const MeshHierarchy mesh = spec.hierarchy();
    const ContinuumPartition part = partition_continua(mesh, spec.kappa_x);
    const Eigen::VectorXd kappa0 = spec.kappa_x.values;

    const AuxiliarySpace a3 = enlmc_aux_space(mesh, part, kappa0, 3, 3);
    int d1 = 0, d2 = 0;
    for (const auto& b : a3.blocks) {
        d1 += (int)b.fracture.size();
        d2 += (int)b.matrix.size();
    }
    CHECK(d1 == 78);
    CHECK(d2 == 300);

    const AuxiliarySpace a4 = enlmc_aux_space(mesh, part, kappa0, 4, 4);
    d1 = d2 = 0;
    for (const auto& b : a4.blocks) {
        d1 += (int)b.fracture.size();
        d2 += (int)b.matrix.size();
    }
    CHECK(d1 == 104);
    CHECK(d2 == 400);
}

TEST_CASE("nlmc basis satisfies its moment constraints", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(20, 20, 4, 4);
    const PermeabilityField f =
        channelized_field(mesh, benchmark_channels(1.0, 1.0, 1e4));
    const ContinuumPartition part = partition_continua(mesh, f);
    const AuxiliarySpace aux = nlmc_aux_space(mesh, part);
    const int layers = 2;
    const MultiscaleBasis basis = build_nlmc_basis(mesh, part, f.values, layers);

    CHECK(basis.max_constraint_residual <= 1e-8);
    CHECK(basis.variant == MultiscaleBasis::Variant::Nlmc);
    CHECK(basis.d2() == mesh.num_blocks());

    // verify the kronecker pattern independently for one fracture column
    REQUIRE(basis.d1() > 0);
    const int col = basis.d1() / 2;
    const auto tag = basis.tags1[col];
    const OversampleRegion region = oversample_region(mesh, tag.block, layers);
    const std::set<int> inside(region.blocks.begin(), region.blocks.end());
    const Eigen::VectorXd psi = basis.Psi1.col(col);

    for (int b : region.blocks) {
        for (size_t k = 0; k < aux.blocks[b].fracture.size(); k++) {
            const double want = (b == tag.block && (int)k + 1 == tag.m) ? 1.0 : 0.0;
            CHECK(moment(mesh, aux.blocks[b].fracture[k], psi) ==
                  Catch::Approx(want).margin(1e-8));
        }
        CHECK(moment(mesh, aux.blocks[b].matrix[0], psi) == Catch::Approx(0.0).margin(1e-8));
    }
}

TEST_CASE("basis columns vanish outside their oversampled region", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(20, 20, 4, 4);
    const PermeabilityField f =
        channelized_field(mesh, benchmark_channels(1.0, 1.0, 1e4));
    const ContinuumPartition part = partition_continua(mesh, f);
    const MultiscaleBasis basis = build_nlmc_basis(mesh, part, f.values, 1);

    for (int col = 0; col < basis.d2(); col++) {
        const auto tag = basis.tags2[col];
        const OversampleRegion region = oversample_region(mesh, tag.block, 1);
        std::vector<uint8_t> inside(mesh.num_nodes(), 0);
        for (int n : region.nodes) inside[n] = 1;
        for (int n = 0; n < mesh.num_nodes(); n++)
            if (!inside[n]) REQUIRE(basis.Psi2.col(col)[n] == 0.0);
    }
}

TEST_CASE("basis decays toward its global limit as layers grow", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(12, 12, 6, 6);
    const PermeabilityField f =
        channelized_field(mesh, {{0.0, 0.5, 1.0, 0.5, 1, 1e3}});
    const ContinuumPartition part = partition_continua(mesh, f);

    // layers = 6 covers the whole domain, giving the unlocalized limit
    const MultiscaleBasis glob = build_nlmc_basis(mesh, part, f.values, 6);
    const SparseOperator A0 = assemble_stiffness(mesh, f.values);

    double prev = -1.0;
    for (int layers : {1, 2, 3}) {
        const MultiscaleBasis loc = build_nlmc_basis(mesh, part, f.values, layers);
        double err = 0.0;
        for (int col = 0; col < loc.d1(); col++)
            err = std::max(err, energy_norm(A0, loc.Psi1.col(col) - glob.Psi1.col(col)));
        if (prev >= 0.0) CHECK(err <= prev * (1.0 + 1e-12));
        prev = err;
    }
}

TEST_CASE("basis is invariant under coefficient rescaling", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(12, 12, 3, 3);
    const PermeabilityField f =
        channelized_field(mesh, {{0.0, 0.5, 1.0, 0.5, 1, 1e4}});
    const ContinuumPartition part = partition_continua(mesh, f);

    const MultiscaleBasis a = build_nlmc_basis(mesh, part, f.values, 2);
    const MultiscaleBasis b = build_nlmc_basis(mesh, part, (7.5 * f.values).eval(), 2);
    CHECK((a.Psi1 - b.Psi1).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((a.Psi2 - b.Psi2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("enlmc spectral constraints hold", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(20, 20, 4, 4);
    const PermeabilityField f =
        channelized_field(mesh, benchmark_channels(1.0, 1.0, 1e4));
    const ContinuumPartition part = partition_continua(mesh, f);
    const MultiscaleBasis basis = build_enlmc_basis(mesh, part, f.values, 2, 2, 2);

    CHECK(basis.max_constraint_residual <= 1e-8);
    CHECK(basis.variant == MultiscaleBasis::Variant::Enlmc);
    CHECK(basis.d2() == 2 * mesh.num_blocks());

    // tags count the spectral modes per block
    std::map<int, int> per_block;
    for (const auto& t : basis.tags2) per_block[t.block]++;
    for (const auto& [blk, count] : per_block) CHECK(count == 2);
}

TEST_CASE("coarse operators are galerkin projections", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(10, 10, 2, 2);
    const SparseOperator M = assemble_mass(mesh);
    const SparseOperator A = assemble_stiffness(mesh, Eigen::VectorXd::Ones(mesh.num_cells()));
    const DofVector load = DofVector::LinSpaced(mesh.num_nodes(), 0.0, 1.0);

    std::mt19937 gen(17);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    MultiscaleBasis basis;
    basis.Psi1.resize(mesh.num_nodes(), 3);
    basis.Psi2.resize(mesh.num_nodes(), 4);
    for (int c = 0; c < 3; c++)
        for (int r = 0; r < mesh.num_nodes(); r++) basis.Psi1(r, c) = dist(gen);
    for (int c = 0; c < 4; c++)
        for (int r = 0; r < mesh.num_nodes(); r++) basis.Psi2(r, c) = dist(gen);

    const CoarseOperators ops = coarse_operators(basis, M, A, load);
    const Eigen::MatrixXd Md(M), Ad(A);
    CHECK((ops.M11 - basis.Psi1.transpose() * Md * basis.Psi1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.M12 - basis.Psi1.transpose() * Md * basis.Psi2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.M22 - basis.Psi2.transpose() * Md * basis.Psi2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.A11 - basis.Psi1.transpose() * Ad * basis.Psi1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.A12 - basis.Psi1.transpose() * Ad * basis.Psi2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.A22 - basis.Psi2.transpose() * Ad * basis.Psi2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.f1 - basis.Psi1.transpose() * load).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ops.f2 - basis.Psi2.transpose() * load).cwiseAbs().maxCoeff() < 1e-12);

    const Eigen::VectorXd c1 = Eigen::VectorXd::LinSpaced(3, 1.0, 3.0);
    const Eigen::VectorXd c2 = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
    const DofVector u = prolongate(basis, c1, c2);
    CHECK((u - basis.Psi1 * c1 - basis.Psi2 * c2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("basis file round trip", "[multiscale]")
{
    const MeshHierarchy mesh = build_hierarchy(10, 10, 2, 2);
    const PermeabilityField f =
        channelized_field(mesh, {{0.0, 0.5, 1.0, 0.5, 1, 1e4}});
    const ContinuumPartition part = partition_continua(mesh, f);
    const MultiscaleBasis basis = build_enlmc_basis(mesh, part, f.values, 2, 2, 1);

    std::stringstream ss;
    save_basis(ss, basis);
    const MultiscaleBasis back = load_basis(ss);
    CHECK(back.variant == basis.variant);
    CHECK(back.layers == basis.layers);
    REQUIRE(back.d1() == basis.d1());
    REQUIRE(back.d2() == basis.d2());
    CHECK((back.Psi1 - basis.Psi1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.Psi2 - basis.Psi2).cwiseAbs().maxCoeff() == 0.0);
    for (int c = 0; c < basis.d1(); c++) {
        CHECK(back.tags1[c].block == basis.tags1[c].block);
        CHECK(back.tags1[c].m == basis.tags1[c].m);
    }

    std::stringstream junk("3 2 mystery 1\n");
    CHECK_THROWS_AS(load_basis(junk), std::runtime_error);
}
