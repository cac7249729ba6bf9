#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pdenet/field.hpp"

namespace pdenet {

enum class Envelope { None, DirichletPolynomial };

struct InitSpec {
    int n_max = 9;
    double amplitude_std = 0.14142135623730950488; // sqrt(1/50)
    Envelope envelope = Envelope::None;
};

/// Time-ordered frames at spacing dt, all on one grid.
struct Trajectory {
    std::vector<Field> fields;
    double dt = 0.01;
    bool noisy = false;

    [[nodiscard]] const Grid2D& grid() const { return fields.front().grid(); }
    [[nodiscard]] int frames() const noexcept { return static_cast<int>(fields.size()); }
    /// Throws SizeMismatchError on an empty sequence, mixed grids or dt <= 0.
    void validate() const;
};

/// sum_{|k|,|l| <= n_max} lambda cos(kx+ly) + gamma sin(kx+ly), amplitudes
/// N(0, amplitude_std^2) drawn in (k, l, lambda, gamma) order, optionally times
/// x(2pi-x) y(2pi-y) / (2pi)^4 (scaled to the grid extents).
Field sample_initial_condition(const InitSpec& spec, const Grid2D& grid, std::mt19937_64& rng);

/// Adds level * M * W to every stored value, W standard normal and M the
/// maximum of u over the whole sequence. Nodes on a Dirichlet boundary ring
/// stay zero.
Trajectory add_noise(const Trajectory& traj, double level, std::mt19937_64& rng);

/// u_t = a u_x + b u_y + c u_xx + d u_yy on a periodic grid.
struct LinearPde {
    std::function<double(double, double)> a;
    std::function<double(double, double)> b;
    double c = 0.2;
    double d = 0.3;

    static LinearPde standard();
};

struct SpectralOptions {
    LinearPde pde = LinearPde::standard();
    /// RK4 steps per stored frame; 0 picks the smallest count that keeps the
    /// highest resolved wavenumbers inside the stability region.
    int substeps = 0;
};

/// Pseudo-spectral in space, classical RK4 in time; stores t = 0, dt, ..., t_end.
Trajectory solve_linear_convdiff(const Field& u0, double t_end, double dt, const SpectralOptions& opts = {});

/// Same integrator for callers that need the stepper without bookkeeping.
class SpectralSolver {
  public:
    SpectralSolver(const Grid2D& grid, const LinearPde& pde);
    ~SpectralSolver();
    SpectralSolver(const SpectralSolver&) = delete;
    SpectralSolver& operator=(const SpectralSolver&) = delete;

    /// du/dt for the state u.
    void rhs(std::span<const double> u, std::span<double> out);
    void rk4_step(std::span<double> u, double h);
    /// Substeps per interval dt chosen by SpectralOptions::substeps == 0.
    [[nodiscard]] int auto_substeps(double dt) const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// u_t = c Laplace(u) + amplitude sin(u) with zero boundary values.
struct NonlinearOptions {
    double c = 0.3;
    double source_amplitude = 15.0;
    /// Forward Euler step bound; the step used is frame_dt / ceil(frame_dt / max_dt).
    double max_dt = 0.0009;
    /// Output injection factor (100x100 -> 50x50 by default); 1 keeps the grid.
    int restrict_factor = 2;
};

/// Forward Euler with the 5-point Laplacian on a Dirichlet grid; stores every
/// frame_dt, restricted by opts.restrict_factor.
Trajectory solve_nonlinear_diffusion(const Field& u0, double t_end, double frame_dt,
                                     const NonlinearOptions& opts = {});

enum class PdeKind { Linear, Nonlinear };

std::string to_string(PdeKind k);
PdeKind pde_kind_from_string(const std::string& s);

struct DataSpec {
    PdeKind kind = PdeKind::Linear;
    /// Grid the equation is solved on (before restriction).
    Grid2D grid{};
    InitSpec init{};
    double t_end = 0.2;
    double dt = 0.01;
    double noise_level = 0.01;
    SpectralOptions spectral{};
    NonlinearOptions nonlinear{};

    /// Standard setups: 50x50 periodic with n_max 9, or 100x100 Dirichlet with
    /// n_max 6 and the polynomial envelope.
    static DataSpec linear_default();
    static DataSpec nonlinear_default();
};

struct Dataset {
    std::vector<Trajectory> clean;
    std::vector<Trajectory> noisy;
};

/// count trajectories on [0, t_end]. Sample i draws from its own stream seeded
/// by (seed, i), so results do not depend on the thread count.
Dataset make_dataset(const DataSpec& spec, int count, std::uint64_t seed);

/// One clean/noisy pair, identical to entry `index` of make_dataset.
void make_sample(const DataSpec& spec, std::uint64_t seed, int index, Trajectory& clean, Trajectory& noisy);

/// Random stream for sample `index` of a dataset with this seed.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);

struct TrajectoryMeta {
    std::string kind = "linear";
    std::uint64_t seed = 0;
    int n_max = 9;
    double noise_level = 0.0;
    int index = 0;
};

/// Writes t{index}.pdf1 for every frame plus meta.json.
void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj, const TrajectoryMeta& meta);
Trajectory read_trajectory(const std::filesystem::path& dir, TrajectoryMeta* meta = nullptr);

} // namespace pdenet
