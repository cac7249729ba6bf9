#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include <omp.h>

#include "pdenet/lbfgs.hpp"
#include "pdenet/training.hpp"

using namespace pdenet;
using std::numbers::pi;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng, double sd = 1.0)
{
    std::normal_distribution<double> nd(0.0, sd);
    std::vector<double> v(n);
    for (double& x : v) x = nd(rng);
    return v;
}

Field random_field(const Grid2D& g, std::mt19937_64& rng, double sd)
{
    Field f(g);
    const auto v = randn(g.size(), rng, sd);
    std::copy(v.begin(), v.end(), f.values().begin());
    if (g.boundary == Boundary::Dirichlet) {
        for (int i = 0; i < g.nx; ++i) f(i, 0) = 0.0;
        for (int j = 0; j < g.ny; ++j) f(0, j) = 0.0;
    }
    return f;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

BlockConfig tiny_config(Boundary bd, bool source)
{
    BlockConfig c;
    c.grid = Grid2D{8, 8, 2 * pi, 2 * pi, bd};
    c.filter_size = 5;
    c.max_order = 2;
    c.control_x = 3;
    c.control_y = 3;
    c.zeroth_order_term = !source;
    c.source = source;
    c.dt = 0.01;
    return c;
}

} // namespace

TEST_CASE("lbfgs on a convex quadratic")
{
    const int n = 10;
    std::vector<double> diag(n);
    for (int i = 0; i < n; ++i) diag[i] = 1.0 + i;
    // rotate so the Hessian is not diagonal: A = Q D Q^T with a Householder Q
    std::mt19937_64 rng(1);
    auto v = randn(n, rng);
    double vn = 0.0;
    for (double x : v) vn += x * x;
    auto A = std::vector<double>(n * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) {
                const double qik = (i == k) - 2 * v[i] * v[k] / vn;
                const double qjk = (j == k) - 2 * v[j] * v[k] / vn;
                s += qik * diag[k] * qjk;
            }
            A[i * n + j] = s;
        }
    const auto b = randn(n, rng);
    const Objective f = [&](std::span<const double> x, std::span<double> g) {
        double val = 0.0;
        for (int i = 0; i < n; ++i) {
            double ax = 0.0;
            for (int j = 0; j < n; ++j) ax += A[i * n + j] * x[j];
            g[i] = ax - b[i];
            val += 0.5 * x[i] * ax - b[i] * x[i];
        }
        return val;
    };
    LbfgsOptions o;
    o.max_iterations = 30;
    o.rel_tol = 0.0;
    const auto r = lbfgs_minimize(f, std::vector<double>(n, 0.0), o);
    CHECK(r.status == LbfgsStatus::GradientTolerance);
    CHECK(r.grad_norm < 1e-8);
    CHECK(r.iterations <= 30);
    for (std::size_t k = 1; k < r.history.size(); ++k) CHECK(r.history[k].f <= r.history[k - 1].f);

    SUBCASE("starting at the minimum returns immediately")
    {
        const auto again = lbfgs_minimize(f, r.x, o);
        CHECK(again.iterations == 0);
        CHECK(again.evaluations == 1);
        CHECK(again.x == r.x);
    }
}

TEST_CASE("lbfgs on Rosenbrock")
{
    const Objective f = [](std::span<const double> x, std::span<double> g) {
        const double a = 1 - x[0];
        const double b = x[1] - x[0] * x[0];
        g[0] = -2 * a - 400 * x[0] * b;
        g[1] = 200 * b;
        return a * a + 100 * b * b;
    };
    LbfgsOptions o;
    o.rel_tol = 0.0;
    o.grad_tol = 1e-10;
    const auto r = lbfgs_minimize(f, {-1.2, 1.0}, o);
    CHECK(std::abs(r.x[0] - 1.0) < 1e-5);
    CHECK(std::abs(r.x[1] - 1.0) < 1e-5);
    CHECK(r.status == LbfgsStatus::GradientTolerance);
}

TEST_CASE("lbfgs returns best-so-far on a failing line search")
{
    // gradient that lies: never a descent direction in practice
    const Objective f = [](std::span<const double> x, std::span<double> g) {
        g[0] = -1.0;
        return x[0] * x[0];
    };
    const auto r = lbfgs_minimize(f, {1.0}, {});
    CHECK(r.status == LbfgsStatus::LineSearchFailed);
    CHECK(r.f <= 1.0);
}

TEST_CASE("loss vanishes at exact labels")
{
    const BlockConfig cfg = tiny_config(Boundary::Periodic, false);
    DeltaTBlock b(cfg);
    std::mt19937_64 rng(2);
    std::vector<Pair> batch;
    for (int k = 0; k < 3; ++k) {
        Field u = random_field(cfg.grid, rng, 1.0);
        batch.push_back({u, u});
    }
    std::vector<double> g(static_cast<std::size_t>(b.param_count()));
    // identity dynamics, label = input
    CHECK(batch_loss(b, batch, 2).loss == 0.0);
    CHECK(batch_loss_grad(b, batch, 2, g).loss == 0.0);
    for (double v : g) CHECK(v == 0.0);

    b.set_params(randn(g.size(), rng, 0.1));
    for (Pair& p : batch) p.label = PDENet(b, 3).forward(p.input);
    CHECK(batch_loss(b, batch, 3).loss == doctest::Approx(0.0).scale(1.0));
    CHECK(batch_loss_grad(b, batch, 3, g).loss == doctest::Approx(0.0).scale(1.0));
    double gn = 0.0;
    for (double v : g) gn += v * v;
    CHECK(std::sqrt(gn) < 1e-10);
}

TEST_CASE("gradient matches finite differences for every parameter group")
{
    for (Boundary bd : {Boundary::Periodic, Boundary::Dirichlet}) {
        const BlockConfig cfg = tiny_config(bd, true);
        DeltaTBlock b(cfg);
        const int P = b.param_count();
        struct Group {
            const char* name;
            int lo;
            int hi;
        };
        const Group groups[] = {{"filters", 0, b.filter_param_count()},
                                {"coefficients", b.filter_param_count(), b.source_param_offset()},
                                {"source", b.source_param_offset(), P}};
        std::mt19937_64 rng(100 + static_cast<int>(bd));
        for (int depth = 1; depth <= 3; ++depth) {
            for (int point = 0; point < 10; ++point) {
                CAPTURE(to_string(bd));
                CAPTURE(depth);
                CAPTURE(point);
                auto p = randn(static_cast<std::size_t>(P), rng, 0.3);
                // the source is only C0 at its nodes: deeper nets start inside
                // one piece so intermediate states do not cross a kink
                const double sd = depth == 1 ? 6.0 : 0.2;
                std::vector<Pair> batch;
                for (int k = 0; k < 2; ++k) {
                    batch.push_back({random_field(cfg.grid, rng, sd), random_field(cfg.grid, rng, sd)});
                }
                b.set_params(p);
                std::vector<double> g(static_cast<std::size_t>(P));
                const auto lr = batch_loss_grad(b, batch, depth, g, 1e10, 1);
                REQUIRE_FALSE(lr.blew_up);
                CHECK(lr.loss == doctest::Approx(batch_loss(b, batch, depth).loss).epsilon(1e-12));
                for (const Group& grp : groups) {
                    const std::string group_name = grp.name;
                    CAPTURE(group_name);
                    double num = 0.0;
                    double den = 0.0;
                    for (int k = grp.lo; k < grp.hi; ++k) {
                        const double h = 1e-4 * std::max(1.0, std::abs(p[k]));
                        auto at = [&](double off) {
                            auto q = p;
                            q[k] = p[k] + off;
                            b.set_params(q);
                            return batch_loss(b, batch, depth).loss;
                        };
                        // fourth-order central difference
                        const double fd = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
                        num += (fd - g[k]) * (fd - g[k]);
                        den += fd * fd;
                    }
                    b.set_params(p);
                    REQUIRE(den > 0.0);
                    CHECK(std::sqrt(num / den) < 1e-5);
                }
            }
        }
    }
}

TEST_CASE("duplicated samples count twice")
{
    const BlockConfig cfg = tiny_config(Boundary::Periodic, false);
    DeltaTBlock b(cfg);
    std::mt19937_64 rng(7);
    b.set_params(randn(static_cast<std::size_t>(b.param_count()), rng, 0.1));
    const Pair a{random_field(cfg.grid, rng, 1.0), random_field(cfg.grid, rng, 1.0)};
    const Pair c{random_field(cfg.grid, rng, 1.0), random_field(cfg.grid, rng, 1.0)};
    const std::size_t P = static_cast<std::size_t>(b.param_count());
    std::vector<double> ga(P);
    std::vector<double> gc(P);
    std::vector<double> gacc(P);
    const std::vector<Pair> only_a{a};
    const std::vector<Pair> only_c{c};
    const std::vector<Pair> acc{a, c, c};
    const double la = batch_loss_grad(b, only_a, 2, ga).loss;
    const double lc = batch_loss_grad(b, only_c, 2, gc).loss;
    const double lacc = batch_loss_grad(b, acc, 2, gacc).loss;
    CHECK(lacc == doctest::Approx(la + 2 * lc).epsilon(1e-13));
    for (std::size_t k = 0; k < P; ++k) CHECK(gacc[k] == doctest::Approx(ga[k] + 2 * gc[k]).epsilon(1e-10).scale(1e-12));
}

TEST_CASE("gradient does not depend on the thread count")
{
    const BlockConfig cfg = tiny_config(Boundary::Dirichlet, true);
    DeltaTBlock b(cfg);
    std::mt19937_64 rng(8);
    b.set_params(randn(static_cast<std::size_t>(b.param_count()), rng, 0.1));
    std::vector<Pair> batch;
    for (int k = 0; k < 21; ++k) batch.push_back({random_field(cfg.grid, rng, 2.0), random_field(cfg.grid, rng, 2.0)});
    const std::size_t P = static_cast<std::size_t>(b.param_count());
    std::vector<double> g1(P);
    std::vector<double> g3(P);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const double l1 = batch_loss_grad(b, batch, 2, g1).loss;
    omp_set_num_threads(3);
    const double l3 = batch_loss_grad(b, batch, 2, g3).loss;
    omp_set_num_threads(saved);
    CHECK(l1 == l3);
    CHECK(g1 == g3);
}

TEST_CASE("blow-up gives the penalty")
{
    const BlockConfig cfg = tiny_config(Boundary::Periodic, false);
    DeltaTBlock b(cfg);
    std::vector<double> huge(9, 1e300);
    b.set_coefficient(b.term_index({2, 0}), huge);
    std::mt19937_64 rng(9);
    const std::vector<Pair> batch{{random_field(cfg.grid, rng, 1.0), random_field(cfg.grid, rng, 1.0)}};
    std::vector<double> g(static_cast<std::size_t>(b.param_count()), 1.0);
    const auto r = batch_loss_grad(b, batch, 3, g, 1e10);
    CHECK(r.blew_up);
    CHECK(r.loss == 1e10);
    for (double v : g) CHECK(v == 0.0);
    CHECK(batch_loss(b, batch, 3).blew_up);
}

TEST_CASE("pairs and sources")
{
    DataSpec spec = DataSpec::linear_default();
    spec.grid = Grid2D{16, 16, 2 * pi, 2 * pi, Boundary::Periodic};
    spec.init.n_max = 3;
    OnTheFlySource all(spec, 3, 2, PairOffsets::All);
    CHECK(all.frames() == 21);
    const auto p1 = all.pairs(1, 4);
    CHECK(p1.size() == 2 * 17);
    OnTheFlySource rnd(spec, 3, 2, PairOffsets::Random);
    const auto p2 = rnd.pairs(1, 4);
    CHECK(p2.size() == 2);
    CHECK(rnd.seen_values().size() == 2 * spec.grid.size());
    // same stage, same pairs
    OnTheFlySource rnd2(spec, 3, 2, PairOffsets::Random);
    const auto p3 = rnd2.pairs(1, 4);
    CHECK(max_abs_diff(p2[1].input, p3[1].input) == 0.0);
    CHECK(max_abs_diff(p2[1].label, p3[1].label) == 0.0);

    Trajectory clean;
    Trajectory noisy;
    make_sample(spec, 3, 2, clean, noisy);
    // stage 1 of a batch-2 source starts at sample 2
    bool found = false;
    for (int i = 0; i + 4 < noisy.frames(); ++i) {
        found = found || (max_abs_diff(noisy.fields[i], p1[0].input) == 0.0 &&
                          max_abs_diff(noisy.fields[i + 4], p1[0].label) == 0.0);
    }
    CHECK(found);
    std::vector<Trajectory> short_set{Trajectory{{clean.fields[0], clean.fields[1]}, 0.01, false}};
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(make_pairs(short_set, 2, PairOffsets::All, rng), SizeMismatchError);
}

TEST_CASE("train config json round trip")
{
    TrainConfig c;
    c.batch_size = 5;
    c.offsets = PairOffsets::Random;
    c.lbfgs.max_iterations = 17;
    c.seed = 99;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(pair_offsets_from_string("some"), ConfigError);
}

namespace {

DataSpec small_linear_spec()
{
    DataSpec spec = DataSpec::linear_default();
    spec.grid = Grid2D{16, 16, 2 * pi, 2 * pi, Boundary::Periodic};
    spec.init.n_max = 3;
    return spec;
}

BlockConfig small_block(FilterMode mode)
{
    BlockConfig c = BlockConfig::linear_default();
    c.grid = Grid2D{16, 16, 2 * pi, 2 * pi, Boundary::Periodic};
    c.filter_size = 5;
    c.max_order = 2;
    c.control_x = 4;
    c.control_y = 4;
    c.mode = mode;
    return c;
}

TrainConfig small_train()
{
    TrainConfig t;
    t.batch_size = 3;
    t.max_depth = 2;
    t.offsets = PairOffsets::Random;
    t.lbfgs.max_iterations = 15;
    t.seed = 4;
    return t;
}

} // namespace

TEST_CASE("layer-wise training")
{
    const auto dir = std::filesystem::temp_directory_path() / "pdenet_train_test";
    std::filesystem::remove_all(dir);

    SUBCASE("constrained: monotone, constraints kept, deterministic")
    {
        OnTheFlySource src(small_linear_spec(), 1, 3, PairOffsets::Random);
        const auto r = train_to_directory(src, small_block(FilterMode::Constrained), small_train(), dir / "a");
        REQUIRE(r.stages.size() == 3);
        CHECK(r.stages[0].depth == 0);
        for (const auto& st : r.stages) {
            CHECK(st.final_loss <= st.initial_loss);
            for (std::size_t k = 1; k < st.best_loss.size(); ++k) CHECK(st.best_loss[k] <= st.best_loss[k - 1]);
        }
        CHECK(r.stages[1].final_loss < r.stages[1].initial_loss);
        for (int f = 0; f < r.net.block.filter_count(); ++f)
            CHECK(r.net.block.pattern(f).violations(moment_matrix(r.net.block.filter(f)), 1e-10).empty());
        CHECK(r.net.depth == 2);
        for (int d = 0; d <= 2; ++d) CHECK(std::filesystem::exists(dir / "a" / ("checkpoint_depth" + std::to_string(d) + ".json")));
        const auto warm = load_checkpoint(dir / "a" / "checkpoint_depth0.json");
        CHECK(warm.block.filter_param_count() == 0);
        std::ifstream csv(dir / "a" / "metrics.csv");
        std::string header;
        std::getline(csv, header);
        CHECK(header == "depth,iteration,loss,grad_norm,wall_seconds");

        OnTheFlySource src2(small_linear_spec(), 1, 3, PairOffsets::Random);
        train_to_directory(src2, small_block(FilterMode::Constrained), small_train(), dir / "b");
        for (int d = 0; d <= 2; ++d) {
            const auto name = "checkpoint_depth" + std::to_string(d) + ".json";
            CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
        }
    }
    SUBCASE("frozen keeps the filters")
    {
        OnTheFlySource src(small_linear_spec(), 1, 3, PairOffsets::Random);
        const auto r = train_to_directory(src, small_block(FilterMode::Frozen), small_train(), dir / "f");
        const auto a = load_checkpoint(dir / "f" / "checkpoint_depth1.json");
        const auto b = load_checkpoint(dir / "f" / "checkpoint_depth2.json");
        CHECK(a.block.filter_param_count() == 0);
        for (int f = 0; f < a.block.filter_count(); ++f) {
            CHECK(max_abs_diff(a.block.filter(f), b.block.filter(f)) == 0.0);
            const Order o = f == 0 ? Order{0, 0} : a.block.orders()[f - 1];
            CHECK(max_abs_diff(a.block.filter(f), frozen_filter(o, 5)) < 1e-12);
        }
        CHECK(r.stages.size() == 3);
    }
    SUBCASE("freed skips the warm-up")
    {
        OnTheFlySource src(small_linear_spec(), 1, 3, PairOffsets::Random);
        const auto r = train_layerwise(src, small_block(FilterMode::Freed), small_train());
        REQUIRE(r.stages.size() == 2);
        CHECK(r.stages[0].depth == 1);
        CHECK(r.net.block.filter_param_count() == 7 * 25);
    }
    std::filesystem::remove_all(dir);
}
