// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "einsplit/mesh.hpp"

namespace einsplit {

/* Scalar state dependence of the diffusion coefficient. The compressible
 * variant is a reference density times an exponential in pressure; any
 * viscosity divisor is folded into the cellwise field instead so the law
 * evaluates to the density itself at the reference state. */
struct NonlinearLaw
{
    enum class Kind { Unit, Exp, Compressible };

    Kind   kind = Kind::Unit;
    double beta = 1.0;                            // Exp
    double c = 0.0, rho_ref = 1.0, u_ref = 0.0;   // Compressible
    double u_min = 0.0, u_max = 1.0;              // diagnostic sweep bounds

    static NonlinearLaw unit() { return {}; }

    static NonlinearLaw exp_law(double beta)
    {
        NonlinearLaw l;
        l.kind = Kind::Exp;
        l.beta = beta;
        return l;
    }

    static NonlinearLaw compressible(double c, double rho_ref, double u_ref)
    {
        NonlinearLaw l;
        l.kind = Kind::Compressible;
        l.c = c;
        l.rho_ref = rho_ref;
        l.u_ref = u_ref;
        l.u_max = 2.0 * u_ref;
        return l;
    }

    double value(double s) const
    {
        switch (kind) {
            case Kind::Unit: return 1.0;
            case Kind::Exp: return std::exp(beta * s);
            default: return rho_ref * std::exp(c * (s - u_ref));
        }
    }

    double slope(double s) const
    {
        switch (kind) {
            case Kind::Unit: return 0.0;
            case Kind::Exp: return beta * std::exp(beta * s);
            default: return c * rho_ref * std::exp(c * (s - u_ref));
        }
    }
};

inline double kappa_u(const NonlinearLaw& law, double s)
{
    if (!std::isfinite(s))
        throw std::domain_error("state value is not finite");
    return law.value(s);
}

/* Largest sampled difference quotient of the law over its diagnostic sweep. */
inline double empirical_lipschitz(const NonlinearLaw& law, int samples = 1001)
{
    if (samples < 2 || law.u_max <= law.u_min)
        throw std::invalid_argument("lipschitz sweep needs a proper interval");
    const double h = (law.u_max - law.u_min) / (samples - 1);
    double lip = 0.0, prev = law.value(law.u_min);
    for (int k = 1; k < samples; k++) {
        const double cur = law.value(law.u_min + k * h);
        lip = std::max(lip, std::abs(cur - prev) / h);
        prev = cur;
    }
    return lip;
}

struct PermeabilityField
{
    int             nx = 0, ny = 0;
    Eigen::VectorXd values;   // per fine cell, row-major with y outer

    double value(int cell) const { return values[cell]; }
    double contrast() const { return values.maxCoeff() / values.minCoeff(); }
};

inline void save_field(std::ostream& os, const PermeabilityField& f)
{
    os << f.nx << " " << f.ny << "\n";
    for (int j = 0; j < f.ny; j++) {
        for (int i = 0; i < f.nx; i++)
            os << (i ? " " : "") << f.values[j * f.nx + i];
        os << "\n";
    }
}

inline PermeabilityField load_field(std::istream& is)
{
    PermeabilityField f;
    if (!(is >> f.nx >> f.ny) || f.nx <= 0 || f.ny <= 0)
        throw std::runtime_error("bad field header");
    f.values.resize(f.nx * f.ny);
    for (int k = 0; k < f.nx * f.ny; k++)
        if (!(is >> f.values[k]))
            throw std::runtime_error("field file ended early");
    return f;
}

/* Channel segments are axis-aligned strips a fixed number of cells wide;
 * anything oblique falls back to a center-distance test. */
struct ChannelSegment
{
    double x0, y0, x1, y1;
    int    width;
    double value;
};

inline std::vector<ChannelSegment> read_geometry(std::istream& is)
{
    std::vector<ChannelSegment> segs;
    std::string line;
    while (std::getline(is, line)) {
        const auto h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        ChannelSegment s;
        if (ls >> s.x0 >> s.y0 >> s.x1 >> s.y1 >> s.width >> s.value)
            segs.push_back(s);
    }
    return segs;
}

inline void write_geometry(std::ostream& os, const std::vector<ChannelSegment>& segs)
{
    for (const auto& s : segs)
        os << s.x0 << " " << s.y0 << " " << s.x1 << " " << s.y1 << " " << s.width
           << " " << s.value << "\n";
}

inline PermeabilityField
channelized_field(int nx, int ny, double Lx, double Ly,
                  const std::vector<ChannelSegment>& segs, double background = 1.0)
{
    PermeabilityField f;
    f.nx = nx;
    f.ny = ny;
    f.values = Eigen::VectorXd::Constant(nx * ny, background);
    const double hx = Lx / nx, hy = Ly / ny;
    const auto iround = [](double x) { return (int)std::llround(x); };

    for (const auto& s : segs) {
        if (s.width <= 0)
            throw std::invalid_argument("segment width must be positive");
        if (std::abs(s.y1 - s.y0) < 1e-12) {
            const int j = std::min((int)(s.y0 / hy), ny - 1);
            const int i0 = std::max(0, iround(s.x0 / hx));
            const int i1 = std::min(nx, iround(s.x1 / hx));
            for (int jj = j; jj < std::min(j + s.width, ny); jj++)
                for (int i = i0; i < i1; i++)
                    f.values[jj * nx + i] = s.value;
        } else if (std::abs(s.x1 - s.x0) < 1e-12) {
            const int i = std::min((int)(s.x0 / hx), nx - 1);
            const int j0 = std::max(0, iround(s.y0 / hy));
            const int j1 = std::min(ny, iround(s.y1 / hy));
            for (int ii = i; ii < std::min(i + s.width, nx); ii++)
                for (int j = j0; j < j1; j++)
                    f.values[j * nx + ii] = s.value;
        } else {
            const double half = 0.5 * s.width * std::min(hx, hy);
            const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
            const double len2 = dx * dx + dy * dy;
            for (int c = 0; c < nx * ny; c++) {
                const double px = (c % nx + 0.5) * hx - s.x0;
                const double py = (c / nx + 0.5) * hy - s.y0;
                const double t = std::clamp((px * dx + py * dy) / len2, 0.0, 1.0);
                const double rx = px - t * dx, ry = py - t * dy;
                if (rx * rx + ry * ry <= half * half) f.values[c] = s.value;
            }
        }
    }
    return f;
}

inline PermeabilityField
channelized_field(const MeshHierarchy& mesh, const std::vector<ChannelSegment>& segs,
                  double background = 1.0)
{
    return channelized_field(mesh.nx, mesh.ny, mesh.Lx, mesh.Ly, segs, background);
}

inline Eigen::VectorXd cell_average(const MeshHierarchy& mesh, const Eigen::VectorXd& u)
{
    Eigen::VectorXd avg(mesh.num_cells());
    for (int c = 0; c < mesh.num_cells(); c++) {
        const auto n = mesh.cell_nodes(c);
        avg[c] = 0.25 * (u[n[0]] + u[n[1]] + u[n[2]] + u[n[3]]);
    }
    return avg;
}

// full coefficient kappa_x * kappa_u at the cell-averaged state
inline Eigen::VectorXd
kappa_cellwise(const MeshHierarchy& mesh, const PermeabilityField& field,
               const NonlinearLaw& law, const Eigen::VectorXd& u)
{
    Eigen::VectorXd k = cell_average(mesh, u);
    for (int c = 0; c < mesh.num_cells(); c++)
        k[c] = field.values[c] * law.value(k[c]);
    return k;
}

// frozen coefficient kappa_x * kappa_u(tilde_u) used by the damping operator
inline Eigen::VectorXd
kappa0_cellwise(const MeshHierarchy& mesh, const PermeabilityField& field,
                const NonlinearLaw& law, double tilde_u)
{
    return field.values * law.value(tilde_u);
}

struct SourceSpec
{
    enum class Kind { PointNode, NodalField };

    Kind            kind = Kind::PointNode;
    double          x = 0.0, y = 0.0;   // point location, snapped to the nearest node
    double          magnitude = 1.0;
    Eigen::VectorXd field;              // nodal density for NodalField
};

enum class BoundaryKind { ZeroFlux, FixedValue };

struct BoundarySpec
{
    BoundaryKind    kind = BoundaryKind::ZeroFlux;
    Eigen::VectorXd values;   // nodal; only boundary entries are read
};

enum class MassLumpingLaw { Frozen, ChainRule };

struct ProblemSpec
{
    std::string name;

    int    nx = 0, ny = 0, Nx = 0, Ny = 0;
    double Lx = 1.0, Ly = 1.0;

    PermeabilityField kappa_x;
    NonlinearLaw      law;
    SourceSpec        source;
    BoundarySpec      boundary;

    double          u0_constant = 0.0;
    Eigen::VectorXd u0_field;   // overrides the constant when nonempty

    double         mass_weight = 1.0;   // effective scalar mass coefficient
    double         porosity = 1.0;      // only read by the chain-rule mass variant
    MassLumpingLaw mass_lumping_law = MassLumpingLaw::Frozen;

    double dt = 0.0;
    double T = 0.0;

    int num_steps() const { return (int)std::llround(T / dt); }

    MeshHierarchy hierarchy() const { return build_hierarchy(nx, ny, Nx, Ny, Lx, Ly); }

    Eigen::VectorXd initial_state(const MeshHierarchy& mesh) const
    {
        if (u0_field.size() > 0) {
            if (u0_field.size() != mesh.num_nodes())
                throw std::invalid_argument("initial field size mismatch");
            return u0_field;
        }
        return Eigen::VectorXd::Constant(mesh.num_nodes(), u0_constant);
    }
};

inline std::vector<ChannelSegment>
benchmark_channels(double Lx, double Ly, double value)
{
    return {{0.0, 0.25 * Ly, Lx, 0.25 * Ly, 1, value},
            {0.0, 0.75 * Ly, Lx, 0.75 * Ly, 1, value},
            {0.55 * Lx, 0.25 * Ly, 0.55 * Lx, 0.95 * Ly, 1, value}};
}

inline Eigen::VectorXd
gaussian_nodal_field(const MeshHierarchy& mesh, double cx, double cy, double sigma,
                     double amplitude)
{
    Eigen::VectorXd g(mesh.num_nodes());
    for (int n = 0; n < mesh.num_nodes(); n++) {
        const double dx = mesh.node_x(n) - cx, dy = mesh.node_y(n) - cy;
        g[n] = amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
    return g;
}

/* Canned problem setups. The two full-scale ones follow the published
 * configurations; the desk variants shrink the grid and horizon so the
 * whole pipeline runs in seconds. Channel layouts are regenerated
 * stand-ins with the same contrast. */
inline ProblemSpec builtin_spec(const std::string& name)
{
    ProblemSpec s;
    s.name = name;

    if (name == "example1" || name == "example1_desk") {
        const bool desk = name != "example1";
        s.nx = s.ny = desk ? 50 : 100;
        s.Nx = s.Ny = 10;
        s.kappa_x = channelized_field(s.nx, s.ny, 1.0, 1.0, benchmark_channels(1.0, 1.0, 1e4));
        s.law = NonlinearLaw::exp_law(1.0);
        s.u0_constant = 0.0;
        if (desk) {
            // smooth injection keeps the best coarse approximation below 1%
            const auto mesh = s.hierarchy();
            s.source.kind = SourceSpec::Kind::NodalField;
            s.source.field = gaussian_nodal_field(mesh, 0.31, 0.11, 0.08, 45.0);
            s.dt = 1e-5;
            s.T = 0.04;
        } else {
            s.source.kind = SourceSpec::Kind::PointNode;
            s.source.x = 0.31;
            s.source.y = 0.11;
            s.source.magnitude = 1.0;
            s.dt = 5e-5;
            s.T = 0.1;
        }
        return s;
    }

    if (name == "example2" || name == "example2_desk") {
        const bool desk = name != "example2";
        s.nx = s.ny = desk ? 50 : 100;
        s.Nx = s.Ny = 10;
        s.Lx = s.Ly = 64.0;
        // channel values in millidarcy, folded with the viscosity divisor
        const double perm_scale = 1e-15 / 5e-3;
        s.kappa_x = channelized_field(s.nx, s.ny, s.Lx, s.Ly,
                                      benchmark_channels(s.Lx, s.Ly, 1e3));
        s.kappa_x.values *= perm_scale;
        s.law = NonlinearLaw::compressible(1e-8, 850.0, 2e7);
        s.u0_constant = 2.16e7;
        s.porosity = 500.0;
        s.mass_lumping_law = MassLumpingLaw::Frozen;
        s.mass_weight = s.porosity * s.law.c * s.law.value(s.u0_constant);
        const auto mesh = s.hierarchy();
        s.source.kind = SourceSpec::Kind::NodalField;
        s.source.field = gaussian_nodal_field(mesh, 0.31 * s.Lx, 0.11 * s.Ly,
                                              0.08 * s.Lx, 0.3);
        s.dt = 0.6048;
        s.T = desk ? 302.4 : 1512.0;
        return s;
    }

    throw std::invalid_argument("unknown builtin problem: " + name);
}

}  // namespace einsplit
