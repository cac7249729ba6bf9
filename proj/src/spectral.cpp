#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <vector>

#include "pdenet/data_gen.hpp"

namespace pdenet {
namespace {

// The FFTW planner is not thread-safe; execution with the new-array
// interface is.
std::mutex& planner_mutex()
{
    static std::mutex mu;
    return mu;
}

} // namespace

LinearPde LinearPde::standard()
{
    LinearPde pde;
    pde.a = [](double x, double y) {
        return 0.5 * (std::cos(y) + x * (2.0 * std::numbers::pi - x) * std::sin(x)) + 0.6;
    };
    pde.b = [](double x, double y) { return 2.0 * (std::cos(y) + std::sin(x)) + 0.8; };
    pde.c = 0.2;
    pde.d = 0.3;
    return pde;
}

struct SpectralSolver::Impl {
    Grid2D grid;
    double c = 0;
    double d = 0;
    std::vector<double> a;
    std::vector<double> b;
    double max_a = 0;
    double max_b = 0;
    int nxc = 0; // complex row length nx/2+1
    std::vector<double> kx;
    std::vector<double> ky;
    std::vector<double> kx1; // first-derivative wavenumbers, Nyquist zeroed
    std::vector<double> ky1;
    fftw_plan fwd = nullptr;
    fftw_plan inv = nullptr;
    std::vector<double> work;
    std::vector<std::complex<double>> uh;
    std::vector<std::complex<double>> tmp;
    std::vector<double> ux;
    std::vector<double> uy;
    std::vector<double> lap;
    std::vector<double> k1, k2, k3, k4, stage;
};

SpectralSolver::SpectralSolver(const Grid2D& grid, const LinearPde& pde) : impl_(std::make_unique<Impl>())
{
    if (grid.boundary != Boundary::Periodic) {
        throw SizeMismatchError("the spectral solver needs a periodic grid");
    }
    grid.validate();
    auto& m = *impl_;
    m.grid = grid;
    m.c = pde.c;
    m.d = pde.d;
    const std::size_t n = grid.size();
    m.a.resize(n);
    m.b.resize(n);
    for (int j = 0; j < grid.ny; ++j) {
        for (int i = 0; i < grid.nx; ++i) {
            const std::size_t idx = static_cast<std::size_t>(j) * grid.nx + i;
            m.a[idx] = pde.a ? pde.a(grid.x(i), grid.y(j)) : 0.0;
            m.b[idx] = pde.b ? pde.b(grid.x(i), grid.y(j)) : 0.0;
            m.max_a = std::max(m.max_a, std::abs(m.a[idx]));
            m.max_b = std::max(m.max_b, std::abs(m.b[idx]));
        }
    }
    m.nxc = grid.nx / 2 + 1;
    const double sx = 2.0 * std::numbers::pi / grid.lx;
    const double sy = 2.0 * std::numbers::pi / grid.ly;
    for (int i = 0; i < m.nxc; ++i) {
        m.kx.push_back(sx * i);
        m.kx1.push_back(grid.nx % 2 == 0 && i == grid.nx / 2 ? 0.0 : sx * i);
    }
    for (int j = 0; j < grid.ny; ++j) {
        const int w = j <= grid.ny / 2 ? j : j - grid.ny;
        m.ky.push_back(sy * w);
        m.ky1.push_back(grid.ny % 2 == 0 && j == grid.ny / 2 ? 0.0 : sy * w);
    }
    const std::size_t nc = static_cast<std::size_t>(m.nxc) * grid.ny;
    m.work.resize(n);
    m.uh.resize(nc);
    m.tmp.resize(nc);
    m.ux.resize(n);
    m.uy.resize(n);
    m.lap.resize(n);
    for (auto* v : {&m.k1, &m.k2, &m.k3, &m.k4, &m.stage}) {
        v->resize(n);
    }
    std::lock_guard lock(planner_mutex());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    m.fwd = fftw_plan_dft_r2c_2d(grid.ny, grid.nx, m.work.data(), reinterpret_cast<fftw_complex*>(m.uh.data()),
                                 flags);
    m.inv = fftw_plan_dft_c2r_2d(grid.ny, grid.nx, reinterpret_cast<fftw_complex*>(m.tmp.data()), m.work.data(),
                                 flags | FFTW_DESTROY_INPUT);
    if (!m.fwd || !m.inv) {
        throw Error("FFTW planning failed");
    }
}

SpectralSolver::~SpectralSolver()
{
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(impl_->fwd);
    fftw_destroy_plan(impl_->inv);
}

int SpectralSolver::auto_substeps(double dt) const
{
    const auto& m = *impl_;
    const double kx = m.kx.back();
    double ky = 0.0;
    for (double k : m.ky) {
        ky = std::max(ky, std::abs(k));
    }
    const double lambda = m.c * kx * kx + m.d * ky * ky + m.max_a * kx + m.max_b * ky;
    // RK4 reaches about 2.8 on the negative real axis and 2.8 on the imaginary axis
    return std::max(1, static_cast<int>(std::ceil(dt * lambda / 2.5)));
}

void SpectralSolver::rhs(std::span<const double> u, std::span<double> out)
{
    auto& m = *impl_;
    const Grid2D& g = m.grid;
    const std::size_t n = g.size();
    const double norm = 1.0 / static_cast<double>(n);
    std::copy(u.begin(), u.end(), m.work.begin());
    fftw_execute_dft_r2c(m.fwd, m.work.data(), reinterpret_cast<fftw_complex*>(m.uh.data()));

    auto inverse = [&](auto&& mult, std::vector<double>& dst) {
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < m.nxc; ++i) {
                const std::size_t idx = static_cast<std::size_t>(j) * m.nxc + i;
                m.tmp[idx] = mult(i, j) * m.uh[idx] * norm;
            }
        }
        fftw_execute_dft_c2r(m.inv, reinterpret_cast<fftw_complex*>(m.tmp.data()), dst.data());
    };
    const std::complex<double> I(0.0, 1.0);
    inverse([&](int i, int) { return I * m.kx1[i]; }, m.ux);
    inverse([&](int, int j) { return I * m.ky1[j]; }, m.uy);
    inverse([&](int i, int j) { return std::complex<double>(-(m.c * m.kx[i] * m.kx[i] + m.d * m.ky[j] * m.ky[j])); },
            m.lap);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = m.a[k] * m.ux[k] + m.b[k] * m.uy[k] + m.lap[k];
    }
}

void SpectralSolver::rk4_step(std::span<double> u, double h)
{
    auto& m = *impl_;
    const std::size_t n = u.size();
    rhs(u, m.k1);
    for (std::size_t k = 0; k < n; ++k) m.stage[k] = u[k] + 0.5 * h * m.k1[k];
    rhs(m.stage, m.k2);
    for (std::size_t k = 0; k < n; ++k) m.stage[k] = u[k] + 0.5 * h * m.k2[k];
    rhs(m.stage, m.k3);
    for (std::size_t k = 0; k < n; ++k) m.stage[k] = u[k] + h * m.k3[k];
    rhs(m.stage, m.k4);
    for (std::size_t k = 0; k < n; ++k) {
        u[k] += h / 6.0 * (m.k1[k] + 2.0 * m.k2[k] + 2.0 * m.k3[k] + m.k4[k]);
    }
}

Trajectory solve_linear_convdiff(const Field& u0, double t_end, double dt, const SpectralOptions& opts)
{
    if (!(dt > 0.0) || t_end < 0.0) {
        throw SizeMismatchError("need dt > 0 and t_end >= 0");
    }
    SpectralSolver solver(u0.grid(), opts.pde);
    const int frames = static_cast<int>(std::lround(t_end / dt));
    const int sub = opts.substeps > 0 ? opts.substeps : solver.auto_substeps(dt);
    const double h = dt / sub;
    Trajectory traj;
    traj.dt = dt;
    traj.fields.reserve(static_cast<std::size_t>(frames) + 1);
    traj.fields.push_back(u0);
    Field u = u0;
    for (int f = 1; f <= frames; ++f) {
        for (int s = 0; s < sub; ++s) {
            solver.rk4_step(u.values(), h);
        }
        if (!u.all_finite()) {
            throw BlowUpError("spectral solver produced non-finite values at frame " + std::to_string(f), f);
        }
        traj.fields.push_back(u);
    }
    return traj;
}

} // namespace pdenet
