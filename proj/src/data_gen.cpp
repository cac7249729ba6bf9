#include "pdenet/data_gen.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>

#include "pdenet/json_io.hpp"

namespace pdenet {

void Trajectory::validate() const
{
    if (fields.empty()) {
        throw SizeMismatchError("empty trajectory");
    }
    if (!(dt > 0.0)) {
        throw SizeMismatchError("trajectory dt must be positive");
    }
    for (const auto& f : fields) {
        if (f.grid() != fields.front().grid()) {
            throw SizeMismatchError("trajectory frames live on different grids");
        }
    }
}

Field sample_initial_condition(const InitSpec& spec, const Grid2D& grid, std::mt19937_64& rng)
{
    if (spec.n_max < 1) {
        throw SizeMismatchError("n_max must be at least 1");
    }
    if (spec.envelope == Envelope::None && grid.boundary != Boundary::Periodic) {
        throw SizeMismatchError("a Dirichlet grid needs the polynomial envelope");
    }
    const int N = spec.n_max;
    const int K = 2 * N + 1;
    // cos/sin tables: tab[(k+N)*nx + i] for x, likewise for y
    std::vector<double> cx(static_cast<std::size_t>(K) * grid.nx), sx(cx.size());
    std::vector<double> cy(static_cast<std::size_t>(K) * grid.ny), sy(cy.size());
    const double wx = 2.0 * std::numbers::pi / grid.lx;
    const double wy = 2.0 * std::numbers::pi / grid.ly;
    for (int k = -N; k <= N; ++k) {
        for (int i = 0; i < grid.nx; ++i) {
            const double t = k * wx * grid.x(i);
            cx[static_cast<std::size_t>(k + N) * grid.nx + i] = std::cos(t);
            sx[static_cast<std::size_t>(k + N) * grid.nx + i] = std::sin(t);
        }
        for (int j = 0; j < grid.ny; ++j) {
            const double t = k * wy * grid.y(j);
            cy[static_cast<std::size_t>(k + N) * grid.ny + j] = std::cos(t);
            sy[static_cast<std::size_t>(k + N) * grid.ny + j] = std::sin(t);
        }
    }

    std::normal_distribution<double> amp(0.0, 1.0);
    Field u(grid);
    // per x-mode k, accumulate coefficient rows over y first
    std::vector<double> A(grid.ny), B(grid.ny); // u += cos(kx) A(y) + sin(kx) B(y)
    for (int k = -N; k <= N; ++k) {
        std::fill(A.begin(), A.end(), 0.0);
        std::fill(B.begin(), B.end(), 0.0);
        for (int l = -N; l <= N; ++l) {
            const double lam = spec.amplitude_std * amp(rng);
            const double gam = spec.amplitude_std * amp(rng);
            const double* cyl = &cy[static_cast<std::size_t>(l + N) * grid.ny];
            const double* syl = &sy[static_cast<std::size_t>(l + N) * grid.ny];
            // lam cos(kx+ly) + gam sin(kx+ly)
            //  = cos(kx) (lam cos ly + gam sin ly) + sin(kx) (gam cos ly - lam sin ly)
            for (int j = 0; j < grid.ny; ++j) {
                A[j] += lam * cyl[j] + gam * syl[j];
                B[j] += gam * cyl[j] - lam * syl[j];
            }
        }
        const double* cxk = &cx[static_cast<std::size_t>(k + N) * grid.nx];
        const double* sxk = &sx[static_cast<std::size_t>(k + N) * grid.nx];
        for (int j = 0; j < grid.ny; ++j) {
            for (int i = 0; i < grid.nx; ++i) {
                u(i, j) += cxk[i] * A[j] + sxk[i] * B[j];
            }
        }
    }

    if (spec.envelope == Envelope::DirichletPolynomial) {
        const double scale = 1.0 / (grid.lx * grid.lx * grid.ly * grid.ly);
        for (int j = 0; j < grid.ny; ++j) {
            const double y = grid.y(j);
            for (int i = 0; i < grid.nx; ++i) {
                const double x = grid.x(i);
                u(i, j) *= x * (grid.lx - x) * y * (grid.ly - y) * scale;
            }
        }
    }
    return u;
}

Trajectory add_noise(const Trajectory& traj, double level, std::mt19937_64& rng)
{
    if (level < 0.0) {
        throw SizeMismatchError("noise level must be non-negative");
    }
    traj.validate();
    Trajectory out = traj;
    out.noisy = true;
    if (level == 0.0) {
        return out;
    }
    double M = -std::numeric_limits<double>::infinity();
    for (const auto& f : traj.fields) {
        M = std::max(M, f.max());
    }
    const double sigma = level * M;
    std::normal_distribution<double> w(0.0, 1.0);
    const Grid2D& g = traj.grid();
    for (auto& f : out.fields) {
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 0; i < g.nx; ++i) {
                const double noise = sigma * w(rng);
                if (!g.on_boundary_ring(i, j)) {
                    f(i, j) += noise;
                }
            }
        }
    }
    return out;
}

Trajectory solve_nonlinear_diffusion(const Field& u0, double t_end, double frame_dt, const NonlinearOptions& opts)
{
    const Grid2D& g = u0.grid();
    if (g.boundary != Boundary::Dirichlet) {
        throw SizeMismatchError("the nonlinear solver needs a Dirichlet grid");
    }
    if (!(frame_dt > 0.0) || !(opts.max_dt > 0.0) || t_end < 0.0) {
        throw SizeMismatchError("need frame_dt > 0, max_dt > 0 and t_end >= 0");
    }
    const int sub = static_cast<int>(std::ceil(frame_dt / opts.max_dt - 1e-9));
    const double h = frame_dt / sub;
    const double ix2 = 1.0 / (g.dx() * g.dx());
    const double iy2 = 1.0 / (g.dy() * g.dy());
    const int frames = static_cast<int>(std::lround(t_end / frame_dt));
    const int nx = g.nx;
    const int ny = g.ny;

    Field u = u0;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            if (g.on_boundary_ring(i, j)) {
                u(i, j) = 0.0;
            }
        }
    }
    Field next(g);

    Trajectory traj;
    traj.dt = frame_dt;
    traj.fields.reserve(static_cast<std::size_t>(frames) + 1);
    auto store = [&](const Field& f) {
        traj.fields.push_back(opts.restrict_factor == 1 ? f : restrict(f, opts.restrict_factor));
    };
    store(u);
    const double* U = u.values().data();
    double* V = next.values().data();
    for (int f = 1; f <= frames; ++f) {
        for (int s = 0; s < sub; ++s) {
            for (int j = 1; j < ny; ++j) {
                const double* row = U + static_cast<std::size_t>(j) * nx;
                const double* up = j + 1 < ny ? row + nx : nullptr;
                const double* dn = row - nx;
                double* out = V + static_cast<std::size_t>(j) * nx;
                for (int i = 1; i < nx; ++i) {
                    const double right = i + 1 < nx ? row[i + 1] : 0.0;
                    const double top = up ? up[i] : 0.0;
                    const double lap = (right + row[i - 1] - 2.0 * row[i]) * ix2 + (top + dn[i] - 2.0 * row[i]) * iy2;
                    out[i] = row[i] + h * (opts.c * lap + opts.source_amplitude * std::sin(row[i]));
                }
            }
            std::swap(u, next);
            U = u.values().data();
            V = next.values().data();
        }
        if (!u.all_finite()) {
            throw BlowUpError("nonlinear solver produced non-finite values at frame " + std::to_string(f), f);
        }
        store(u);
    }
    return traj;
}

std::string to_string(PdeKind k) { return k == PdeKind::Linear ? "linear" : "nonlinear"; }

PdeKind pde_kind_from_string(const std::string& s)
{
    if (s == "linear") {
        return PdeKind::Linear;
    }
    if (s == "nonlinear") {
        return PdeKind::Nonlinear;
    }
    throw ConfigError("unknown kind '" + s + "' (expected linear or nonlinear)");
}

DataSpec DataSpec::linear_default() { return DataSpec{}; }

DataSpec DataSpec::nonlinear_default()
{
    DataSpec s;
    s.kind = PdeKind::Nonlinear;
    s.grid = Grid2D{100, 100, 2.0 * std::numbers::pi, 2.0 * std::numbers::pi, Boundary::Dirichlet};
    s.init.n_max = 6;
    s.init.envelope = Envelope::DirichletPolynomial;
    return s;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

void make_sample(const DataSpec& spec, std::uint64_t seed, int index, Trajectory& clean, Trajectory& noisy)
{
    auto rng = sample_rng(seed, static_cast<std::uint64_t>(index));
    const Field u0 = sample_initial_condition(spec.init, spec.grid, rng);
    clean = spec.kind == PdeKind::Linear ? solve_linear_convdiff(u0, spec.t_end, spec.dt, spec.spectral)
                                         : solve_nonlinear_diffusion(u0, spec.t_end, spec.dt, spec.nonlinear);
    noisy = add_noise(clean, spec.noise_level, rng);
}

Dataset make_dataset(const DataSpec& spec, int count, std::uint64_t seed)
{
    if (count < 1) {
        throw SizeMismatchError("dataset count must be at least 1");
    }
    Dataset ds;
    ds.clean.resize(static_cast<std::size_t>(count));
    ds.noisy.resize(static_cast<std::size_t>(count));
    std::exception_ptr failure;
    std::mutex mu;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < count; ++i) {
        try {
            make_sample(spec, seed, i, ds.clean[static_cast<std::size_t>(i)], ds.noisy[static_cast<std::size_t>(i)]);
        } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return ds;
}

void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj, const TrajectoryMeta& meta)
{
    traj.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    for (int f = 0; f < traj.frames(); ++f) {
        write_pdf1(dir / ("t" + std::to_string(f) + ".pdf1"), traj.fields[static_cast<std::size_t>(f)]);
    }
    Json j{{"format", "pdenet-trajectory"},
           {"version", 1},
           {"kind", meta.kind},
           {"seed", meta.seed},
           {"index", meta.index},
           {"n_max", meta.n_max},
           {"noise_level", meta.noise_level},
           {"noisy", traj.noisy},
           {"dt", traj.dt},
           {"frames", traj.frames()},
           {"grid", grid_to_json(traj.grid())}};
    write_json_file(dir / "meta.json", j);
}

Trajectory read_trajectory(const std::filesystem::path& dir, TrajectoryMeta* meta)
{
    const Json j = read_json_file(dir / "meta.json");
    Trajectory traj;
    int frames = 0;
    Grid2D g;
    try {
        traj.dt = j.at("dt").get<double>();
        traj.noisy = j.value("noisy", false);
        frames = j.at("frames").get<int>();
        g = grid_from_json(j.at("grid"));
        if (meta) {
            meta->kind = j.value("kind", std::string("linear"));
            meta->seed = j.value("seed", std::uint64_t{0});
            meta->index = j.value("index", 0);
            meta->n_max = j.value("n_max", 0);
            meta->noise_level = j.value("noise_level", 0.0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(dir.string() + "/meta.json: " + e.what());
    }
    for (int f = 0; f < frames; ++f) {
        Field u = read_pdf1(dir / ("t" + std::to_string(f) + ".pdf1"), g.lx, g.ly);
        if (u.grid() != g) {
            throw IoError(dir.string() + ": frame " + std::to_string(f) + " does not match meta.json grid");
        }
        traj.fields.push_back(std::move(u));
    }
    traj.validate();
    return traj;
}

} // namespace pdenet
