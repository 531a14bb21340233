// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include "einsplit/fem.hpp"
#include "einsplit/media.hpp"
#include "einsplit/multiscale.hpp"

namespace einsplit {

struct StabilityReport
{
    double gamma = 0.0;
    double c1 = 0.0;
    double lambda_max = 0.0;
    double dt_max = 0.0;
    double dt_max_tight = 0.0;   // the factor-2 stricter threshold
    double dt = 0.0;
    double kappa0_contrast = 1.0;
    bool   pass = false;
    bool   degenerate = false;   // coincident component spaces
};

/* Largest cosine between the two component spaces in the mass inner product,
 * i.e. the top singular value of L1^{-1} M12 L2^{-T} with Mii = Li Li^T. */
inline double subspace_gamma(const SparseOperator& M, const MultiscaleBasis& basis)
{
    const Eigen::MatrixXd MP2 = M * basis.Psi2;
    const Eigen::MatrixXd M11 = basis.Psi1.transpose() * (M * basis.Psi1);
    const Eigen::MatrixXd M12 = basis.Psi1.transpose() * MP2;
    const Eigen::MatrixXd M22 = basis.Psi2.transpose() * MP2;

    const Eigen::LLT<Eigen::MatrixXd> L1(M11), L2(M22);
    if (L1.info() != Eigen::Success || L2.info() != Eigen::Success)
        throw std::runtime_error("dependent basis columns, Gram block not SPD");

    Eigen::MatrixXd B = L1.matrixL().solve(M12);
    B = L2.matrixL().solve(B.transpose()).transpose();
    const double s = Eigen::BDCSVD<Eigen::MatrixXd>(B).singularValues()(0);
    return std::clamp(s, 0.0, 1.0);
}

enum class C1Mode
{
    MaxAbsolute,   // the bound the energy argument actually uses
    MinSigned      // the statement as printed
};

inline double estimate_c1(const NonlinearLaw& law, double tilde_u,
                          const std::vector<DofVector>& states,
                          C1Mode mode = C1Mode::MaxAbsolute)
{
    if (states.empty()) throw std::invalid_argument("no state samples");
    const double base = kappa_u(law, tilde_u);

    bool first = true;
    double c1 = 0.0;
    for (const auto& u : states) {
        for (Eigen::Index k = 0; k < u.size(); k++) {
            const double dev = (kappa_u(law, u[k]) - base) / base;
            if (mode == C1Mode::MaxAbsolute) {
                c1 = std::max(c1, std::abs(dev));
            } else {
                c1 = first ? dev : std::min(c1, dev);
                first = false;
            }
        }
    }
    return c1;
}

/* Largest generalized eigenvalue of the frozen stiffness against the mass on
 * the second component space. Dense solve; the coarse blocks are small. */
inline double cfl_bound(const Eigen::MatrixXd& A22, const Eigen::MatrixXd& M22)
{
    if (A22.rows() == 0) return 0.0;
    if (A22.rows() != M22.rows() || A22.cols() != A22.rows())
        throw std::invalid_argument("pencil blocks disagree");
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(A22, M22,
                                                                 Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw std::runtime_error("pencil breakdown");
    return std::max(0.0, es.eigenvalues().maxCoeff());
}

inline StabilityReport check(double gamma, double c1, double lambda_max, double dt,
                             double kappa0_contrast = 1.0)
{
    StabilityReport rep;
    rep.gamma = gamma;
    rep.c1 = c1;
    rep.lambda_max = lambda_max;
    rep.dt = dt;
    rep.kappa0_contrast = kappa0_contrast;
    rep.degenerate = gamma >= 1.0 - 1e-10;

    const double inf = std::numeric_limits<double>::infinity();
    if (c1 >= 1.0) {
        rep.dt_max = 0.0;
        rep.dt_max_tight = 0.0;
    } else if (lambda_max <= 0.0) {
        rep.dt_max = inf;
        rep.dt_max_tight = inf;
    } else {
        rep.dt_max = (1.0 - gamma) * (1.0 - c1) / lambda_max;
        rep.dt_max_tight = 0.5 * rep.dt_max;
    }
    rep.pass = !rep.degenerate && c1 < 1.0 && dt <= rep.dt_max;
    return rep;
}

inline void write_stability_csv(std::ostream& os, const StabilityReport& rep)
{
    os << "gamma,c1,lambda_max,dt_max,dt,verdict\n";
    os << rep.gamma << ',' << rep.c1 << ',' << rep.lambda_max << ',' << rep.dt_max << ','
       << rep.dt << ',' << (rep.pass ? "pass" : "fail") << '\n';
}

struct LemmaCheck
{
    double log_max_energy = 0.0;
    double log_bound = 0.0;
    bool   bounded = false;
    int    argmax_step = -1;
};

/* Discrete energy boundedness test, carried out in log space since the
 * Gronwall factor can overflow. Per-step energy is
 *   (gamma/2)(|du1|_M^2 + |du2|_M^2)/dt + (1/2) u'A(kappa(u))u
 * and the bound is exp(D^2 T / (2(1-gamma))) (E0 + C_T |f|_M^2) with
 * D = lip c0 / ku_min and C_T = T (2/(1-gamma) + 2/gamma). */
inline LemmaCheck
lemma_energy_check(double gamma, double dt, double T, const std::vector<double>& inc1_m2,
                   const std::vector<double>& inc2_m2, const std::vector<double>& energy_a,
                   double c0, double lip, double ku_min, double f_m_norm2, double e0)
{
    if (inc1_m2.size() != inc2_m2.size() || inc1_m2.size() != energy_a.size())
        throw std::invalid_argument("energy series disagree in length");
    if (gamma >= 1.0) throw std::invalid_argument("degenerate angle");
    if (ku_min <= 0.0) throw std::invalid_argument("coefficient lower bound must be positive");

    LemmaCheck out;
    double emax = 0.0;
    for (std::size_t n = 0; n < inc1_m2.size(); n++) {
        const double e = 0.5 * gamma * (inc1_m2[n] + inc2_m2[n]) / dt + 0.5 * energy_a[n];
        if (e > emax) {
            emax = e;
            out.argmax_step = static_cast<int>(n) + 1;
        }
    }
    const double d = lip * c0 / ku_min;
    const double ct = T * (2.0 / (1.0 - gamma) + 2.0 / std::max(gamma, 1e-3));
    out.log_max_energy = std::log(std::max(emax, 1e-300));
    out.log_bound =
        d * d * T / (2.0 * (1.0 - gamma)) + std::log(std::max(e0 + ct * f_m_norm2, 1e-300));
    out.bounded = out.log_max_energy <= out.log_bound;
    return out;
}

}  // namespace einsplit
