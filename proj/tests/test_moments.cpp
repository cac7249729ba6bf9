#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "pdenet/field.hpp"
#include "pdenet/moments.hpp"

using namespace pdenet;
using std::numbers::pi;

namespace {

Filter random_filter(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    Filter q(n);
    for (double& v : q.weights()) v = nd(rng);
    return q;
}

MomentMatrix random_moments(int n, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    MomentMatrix m(n);
    for (double& v : m.values()) v = nd(rng);
    return m;
}

// Direct summation, used as the reference for the Vandermonde factorization.
double direct_moment(const Filter& q, int p, int s)
{
    double acc = 0.0;
    double pf = 1.0;
    double sf = 1.0;
    for (int i = 2; i <= p; ++i) pf *= i;
    for (int i = 2; i <= s; ++i) sf *= i;
    for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
        for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
            acc += std::pow(k1, p) * std::pow(k2, s) * q.at(k1, k2);
        }
    }
    return acc / (pf * sf);
}

Filter haar(std::vector<double> rows)
{
    // displayed with rows = k2, columns = k1, origin at (0,0)
    for (double& v : rows) v *= 0.25;
    return Filter(2, 0, std::move(rows));
}

} // namespace

TEST_CASE("moments of the delta filter")
{
    const auto m = moment_matrix(Filter::delta(5));
    for (int p = 0; p < 5; ++p) {
        for (int s = 0; s < 5; ++s) {
            CHECK(m(p, s) == doctest::Approx(p == 0 && s == 0 ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("moments of the central difference in x")
{
    Filter q(3);
    q.at(-1, 0) = -0.5;
    q.at(1, 0) = 0.5;
    const auto m = moment_matrix(q);
    for (int p = 0; p < 3; ++p) {
        for (int s = 0; s < 3; ++s) {
            if (p + s <= 2) {
                CHECK(m(p, s) == doctest::Approx(p == 1 && s == 0 ? 1.0 : 0.0));
            }
        }
    }
}

TEST_CASE("moment matrix agrees with direct summation and is linear")
{
    std::mt19937_64 rng(3);
    for (int n : {3, 5, 7}) {
        const Filter a = random_filter(n, rng);
        const Filter b = random_filter(n, rng);
        const auto ma = moment_matrix(a);
        const auto mb = moment_matrix(b);
        for (int p = 0; p < n; ++p) {
            for (int s = 0; s < n; ++s) {
                CHECK(ma(p, s) == doctest::Approx(direct_moment(a, p, s)).epsilon(1e-12));
            }
        }
        Filter c(n);
        for (std::size_t i = 0; i < c.weights().size(); ++i) {
            c.weights()[i] = 2.5 * a.weights()[i] - 0.75 * b.weights()[i];
        }
        const auto mc = moment_matrix(c);
        for (std::size_t i = 0; i < mc.values().size(); ++i) {
            CHECK(mc.values()[i] == doctest::Approx(2.5 * ma.values()[i] - 0.75 * mb.values()[i]));
        }
    }
}

TEST_CASE("moment round trip is exact to 1e-12")
{
    std::mt19937_64 rng(11);
    for (int n : {3, 5, 7}) {
        for (int rep = 0; rep < 20; ++rep) {
            const Filter q = random_filter(n, rng);
            CHECK(max_abs_diff(filter_from_moments(moment_matrix(q)), q) < 1e-12);

            const MomentMatrix m = random_moments(n, rng);
            const auto back = moment_matrix(filter_from_moments(m));
            double err = 0.0;
            for (std::size_t i = 0; i < m.values().size(); ++i) {
                err = std::max(err, std::abs(back.values()[i] - m.values()[i]));
            }
            CHECK(err < 1e-12);
        }
    }
}

TEST_CASE("filter_from_moments matches the full linear system")
{
    std::mt19937_64 rng(5);
    for (int n : {3, 5, 7}) {
        const MomentMatrix m = random_moments(n, rng);
        const auto expect = oracle::filter_from_moment_system(n, std::vector<double>(m.values().begin(), m.values().end()));
        const Filter q = filter_from_moments(m);
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(q.weights()[i] == doctest::Approx(expect[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("3x3 filter with only the (1,0) moment is the central difference")
{
    MomentMatrix m(3);
    m(1, 0) = 1.0;
    const Filter q = filter_from_moments(m);
    for (int k2 = -1; k2 <= 1; ++k2) {
        for (int k1 = -1; k1 <= 1; ++k1) {
            const double expect = k2 == 0 ? 0.5 * k1 : 0.0;
            CHECK(q.at(k1, k2) == doctest::Approx(expect).scale(1.0));
        }
    }
}

TEST_CASE("averaging moments give a weight-sum of one")
{
    std::mt19937_64 rng(8);
    auto pat = ConstraintPattern::averaging(5);
    std::normal_distribution<double> nd;
    std::vector<double> free(static_cast<std::size_t>(pat.free_count()));
    for (double& v : free) v = nd(rng);
    const Filter q = constrained_parameterization(pat, free);
    double sum = 0.0;
    for (double v : q.weights()) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("frozen filters")
{
    CHECK(max_abs_diff(frozen_filter({0, 0}, 3), Filter::delta(3)) < 1e-14);

    const Filter dxx = frozen_filter({2, 0}, 3);
    CHECK(dxx.at(-1, 0) == doctest::Approx(1.0));
    CHECK(dxx.at(0, 0) == doctest::Approx(-2.0));
    CHECK(dxx.at(1, 0) == doctest::Approx(1.0));
    for (int k1 = -1; k1 <= 1; ++k1) {
        CHECK(std::abs(dxx.at(k1, -1)) < 1e-14);
        CHECK(std::abs(dxx.at(k1, 1)) < 1e-14);
    }

    MomentMatrix m(5);
    m(1, 2) = 1.0;
    const auto expect = oracle::filter_from_moment_system(5, std::vector<double>(m.values().begin(), m.values().end()));
    const Filter q = frozen_filter({1, 2}, 5);
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(q.weights()[i] == doctest::Approx(expect[i]).scale(1.0));
    }

    CHECK_THROWS_AS(frozen_filter({3, 0}, 3), ConstraintError);
    CHECK_THROWS_AS(frozen_filter({1, 1}, 4), SizeMismatchError);
}

TEST_CASE("sum rules of the Haar and Sobel-type filters")
{
    const Filter h10 = haar({1, -1, 1, -1});
    const auto r10 = sum_rule_order(h10);
    REQUIRE(r10.alpha);
    CHECK(*r10.alpha == Order{1, 0});
    REQUIRE(r10.total);
    CHECK(*r10.total == std::pair{2, 2});

    const Filter h11 = haar({1, -1, -1, 1});
    const auto r11 = sum_rule_order(h11);
    REQUIRE(r11.alpha);
    CHECK(*r11.alpha == Order{1, 1});
    REQUIRE(r11.total);
    CHECK(*r11.total == std::pair{3, 3});

    const Filter sobel = Filter::centered(3, {1, 0, -1, 2, 0, -2, 1, 0, -1});
    const auto rs = sum_rule_order(sobel);
    REQUIRE(rs.alpha);
    CHECK(*rs.alpha == Order{1, 0});
    REQUIRE(rs.total);
    CHECK(*rs.total == std::pair{3, 2});
}

TEST_CASE("Haar high-pass filters approximate scaled derivatives")
{
    // h[-.] convolved with u, against the stated derivative multiples
    auto err_at = [](int n) {
        const Grid2D g{n, n, 2 * pi, 2 * pi, Boundary::Periodic};
        const Field u = Field::sample(g, [](double x, double y) { return std::sin(x) * std::cos(2 * y); });
        const Field ux = Field::sample(g, [](double x, double y) { return std::cos(x) * std::cos(2 * y); });
        Field d = circular_convolve(u, haar({1, -1, 1, -1}).reversed());
        const Field expect = (0.5 * g.dx()) * ux;
        return max_abs_diff(d, -1.0 * expect) / g.dx();
    };
    const double e1 = err_at(64);
    const double e2 = err_at(128);
    CHECK(e1 < 0.1);
    CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("sum rules of frozen filters")
{
    for (int n : {3, 5, 7}) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; i + j < n; ++j) {
                const auto r = sum_rule_order(frozen_filter({i, j}, n), 1e-9);
                REQUIRE(r.alpha);
                CHECK(*r.alpha == Order{i, j});
                if (r.total) {
                    CHECK(r.total->first >= n);
                    CHECK(r.total->second == i + j + 1);
                }
            }
        }
    }
}

TEST_CASE("sum rule detection reports ambiguity")
{
    const Filter q = frozen_filter({1, 0}, 3);
    Filter both = frozen_filter({0, 1}, 3);
    for (std::size_t i = 0; i < both.weights().size(); ++i) both.weights()[i] += q.weights()[i];
    const auto r = sum_rule_order(both);
    CHECK_FALSE(r.alpha);
    CHECK(r.diagnostic.find("ambiguous") != std::string::npos);

    const auto zero = sum_rule_order(Filter(3));
    CHECK_FALSE(zero.alpha);
    CHECK_FALSE(zero.diagnostic.empty());
}

TEST_CASE("constraint patterns")
{
    const auto d10 = ConstraintPattern::derivative({1, 0}, 3);
    CHECK(d10.free_count() == 6);
    CHECK(*d10.entry(1, 0) == 1.0);
    CHECK(*d10.entry(0, 0) == 0.0);
    CHECK(*d10.entry(0, 1) == 0.0);
    CHECK_FALSE(d10.entry(1, 1));
    CHECK_FALSE(d10.entry(2, 0));

    const auto d11 = ConstraintPattern::derivative({1, 1}, 5);
    CHECK(d11.free_count() == 25 - 6);
    CHECK(ConstraintPattern::derivative({0, 0}, 5) == ConstraintPattern::averaging(5));
    CHECK(ConstraintPattern::averaging(7).free_count() == 48);
    CHECK(ConstraintPattern::frozen({2, 1}, 5).free_count() == 0);
    CHECK(ConstraintPattern::unconstrained(5).free_count() == 25);
    CHECK_THROWS_AS(ConstraintPattern::derivative({2, 1}, 3), ConstraintError);
}

TEST_CASE("constrained parameterization satisfies the fixed moments for any free values")
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd;
    for (int n : {3, 5, 7}) {
        for (int i = 0; i < n; ++i) {
            for (int j = 0; i + j < n; ++j) {
                const auto pat = ConstraintPattern::derivative({i, j}, n);
                std::vector<double> free(static_cast<std::size_t>(pat.free_count()));
                for (double& v : free) v = nd(rng);
                const Filter q = constrained_parameterization(pat, free);
                CHECK(pat.violations(moment_matrix(q), 1e-10).empty());
                const auto recovered = free_values_of(pat, moment_matrix(q));
                for (std::size_t f = 0; f < free.size(); ++f) {
                    CHECK(recovered[f] == doctest::Approx(free[f]).epsilon(1e-9));
                }
            }
        }
    }
}

TEST_CASE("fully fixed pattern reproduces the frozen filter")
{
    const auto pat = ConstraintPattern::frozen({2, 1}, 5);
    const Filter q = constrained_parameterization(pat, {});
    CHECK(max_abs_diff(q, frozen_filter({2, 1}, 5)) < 1e-13);
    const std::vector<double> extra{1.0};
    CHECK_THROWS_AS(constrained_parameterization(pat, extra), SizeMismatchError);
}

TEST_CASE("pullback_free is the adjoint of the free-value map")
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    const auto pat = ConstraintPattern::derivative({1, 1}, 5);
    const std::size_t nf = static_cast<std::size_t>(pat.free_count());
    std::vector<double> f0(nf), df(nf), dw(25), grad(nf);
    for (double& v : f0) v = nd(rng);
    for (double& v : df) v = nd(rng);
    for (double& v : dw) v = nd(rng);
    std::vector<double> f1 = f0;
    for (std::size_t i = 0; i < nf; ++i) f1[i] += df[i];
    const Filter q0 = constrained_parameterization(pat, f0);
    const Filter q1 = constrained_parameterization(pat, f1);
    double lhs = 0.0;
    for (std::size_t i = 0; i < 25; ++i) lhs += dw[i] * (q1.weights()[i] - q0.weights()[i]);
    pullback_free(pat, dw, grad);
    double rhs = 0.0;
    for (std::size_t i = 0; i < nf; ++i) rhs += grad[i] * df[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("(1,0) constrained 5x5 filter with zero free moments is exact on low-degree polynomials")
{
    const auto pat = ConstraintPattern::derivative({1, 0}, 5);
    const std::vector<double> zeros(static_cast<std::size_t>(pat.free_count()), 0.0);
    const Filter q = constrained_parameterization(pat, zeros);
    const Grid2D g{40, 40, 4.0, 4.0, Boundary::Dirichlet};
    for (int deg = 1; deg <= 3; ++deg) {
        const Field u = Field::sample(g, [deg](double x, double y) { return std::pow(x, deg) * (1.0 + 0.0 * y); });
        const Field d = apply_derivative(u, q, {1, 0});
        for (int j = 3; j < g.ny - 3; ++j) {
            for (int i = 3; i < g.nx - 3; ++i) {
                CHECK(d(i, j) == doctest::Approx(deg * std::pow(g.x(i), deg - 1)).epsilon(1e-8));
            }
        }
    }
}

TEST_CASE("frozen filters are exact on monomials at interior nodes")
{
    const Grid2D g{30, 30, 3.0, 3.0, Boundary::Dirichlet};
    const int n = 5;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; i + j < n; ++j) {
            const Filter q = frozen_filter({i, j}, n);
            for (int a = 0; a < n; ++a) {
                for (int b = 0; b < n; ++b) {
                    const Field u = Field::sample(g, [a, b](double x, double y) { return std::pow(x, a) * std::pow(y, b); });
                    const Field d = apply_derivative(u, q, {i, j});
                    auto deriv = [&](double x, double y) {
                        if (a < i || b < j) return 0.0;
                        double c = 1.0;
                        for (int t = 0; t < i; ++t) c *= a - t;
                        for (int t = 0; t < j; ++t) c *= b - t;
                        return c * std::pow(x, a - i) * std::pow(y, b - j);
                    };
                    double err = 0.0;
                    double mag = 1.0;
                    for (int jj = 3; jj < g.ny - 3; ++jj) {
                        for (int ii = 3; ii < g.nx - 3; ++ii) {
                            const double e = deriv(g.x(ii), g.y(jj));
                            err = std::max(err, std::abs(d(ii, jj) - e));
                            mag = std::max(mag, std::abs(e));
                        }
                    }
                    CHECK(err / mag < 1e-7);
                }
            }
        }
    }
}

TEST_CASE("apply_derivative")
{
    const Grid2D g{64, 64, 2 * pi, 2 * pi, Boundary::Periodic};

    SUBCASE("constant input gives zero for nonzero order")
    {
        const Field c = Field::sample(g, [](double, double) { return 3.7; });
        for (Order o : {Order{1, 0}, Order{0, 1}, Order{2, 0}, Order{1, 1}}) {
            CHECK(apply_derivative(c, frozen_filter(o, 5), o).max_abs() < 1e-9);
        }
    }

    SUBCASE("(0,1) of sin(x) vanishes")
    {
        const Field u = Field::sample(g, [](double x, double) { return std::sin(x); });
        CHECK(apply_derivative(u, frozen_filter({0, 1}, 3), {0, 1}).max_abs() < 1e-12);
    }

    SUBCASE("(1,1) of sin(x+y) converges at second order")
    {
        std::vector<double> h, err;
        for (int n : {16, 32, 64, 128}) {
            const Grid2D gn{n, n, 2 * pi, 2 * pi, Boundary::Periodic};
            const Field u = Field::sample(gn, [](double x, double y) { return std::sin(x + y); });
            const Field exact = Field::sample(gn, [](double x, double y) { return -std::sin(x + y); });
            h.push_back(gn.dx());
            err.push_back(max_abs_diff(apply_derivative(u, frozen_filter({1, 1}, 3), {1, 1}), exact));
        }
        CHECK(oracle::loglog_slope(h, err) == doctest::Approx(2.0).epsilon(0.1));
    }

    SUBCASE("violated pattern names the offending moments")
    {
        Filter bad = frozen_filter({1, 0}, 3);
        bad.at(0, 0) += 0.1;
        try {
            (void)apply_derivative(Field(g), bad, {1, 0});
            FAIL("expected ConstraintError");
        } catch (const ConstraintError& e) {
            CHECK(std::string(e.what()).find("(0,0)") != std::string::npos);
        }
    }
}

TEST_CASE("convergence order of frozen filters follows their sum rules")
{
    auto fx = [](double x, double y) { return std::sin(x) * std::cos(y); };
    auto deriv = [](Order o, double x, double y) {
        auto d1 = [](int k, double t) {
            switch (k % 4) {
            case 0: return std::sin(t);
            case 1: return std::cos(t);
            case 2: return -std::sin(t);
            default: return -std::cos(t);
            }
        };
        auto d2 = [](int k, double t) {
            switch (k % 4) {
            case 0: return std::cos(t);
            case 1: return -std::sin(t);
            case 2: return -std::cos(t);
            default: return std::sin(t);
            }
        };
        return d1(o.i, x) * d2(o.j, y);
    };
    for (int n : {3, 5, 7}) {
        for (Order o : {Order{1, 0}, Order{0, 1}, Order{1, 1}, Order{2, 0}}) {
            const Filter q = frozen_filter(o, n);
            const auto rules = sum_rule_order(q, 1e-9);
            REQUIRE(rules.total);
            const double predicted = rules.total->first - o.total();
            std::vector<double> h, err;
            for (int m : {24, 32, 48, 64}) {
                const Grid2D g{m, m, 2 * pi, 2 * pi, Boundary::Periodic};
                const Field u = Field::sample(g, fx);
                const Field exact = Field::sample(g, [&](double x, double y) { return deriv(o, x, y); });
                h.push_back(g.dx());
                err.push_back(max_abs_diff(apply_derivative(u, q, o), exact));
            }
            CAPTURE(n);
            CAPTURE(to_string(o));
            CHECK(std::abs(oracle::loglog_slope(h, err) - predicted) < 0.25);
        }
    }
}

TEST_CASE("describe prints weights and moments")
{
    const std::string s = describe(frozen_filter({1, 0}, 3));
    CHECK(s.find("weights") != std::string::npos);
    CHECK(s.find("moments") != std::string::npos);
}
