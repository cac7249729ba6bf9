#include "pdenet/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace pdenet {

std::string to_string(LbfgsStatus s)
{
    switch (s) {
    case LbfgsStatus::GradientTolerance:
        return "gradient_tolerance";
    case LbfgsStatus::RelativeTolerance:
        return "relative_tolerance";
    case LbfgsStatus::MaxIterations:
        return "max_iterations";
    case LbfgsStatus::LineSearchFailed:
        return "line_search_failed";
    }
    return "unknown";
}

namespace {

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

struct Point {
    double a = 0.0;
    double f = 0.0;
    double d = 0.0; // directional derivative
    std::vector<double> x;
    std::vector<double> g;
};

// Minimizer of the cubic through (a, fa, da), (b, fb, db); NaN when undefined.
double cubic_min(const Point& p, const Point& q)
{
    const double d1 = p.d + q.d - 3 * (p.f - q.f) / (p.a - q.a);
    const double disc = d1 * d1 - p.d * q.d;
    if (!(disc >= 0.0)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const double d2 = std::copysign(std::sqrt(disc), q.a - p.a);
    return q.a - (q.a - p.a) * (q.d + d2 - d1) / (q.d - p.d + 2 * d2);
}

class LineSearch {
  public:
    LineSearch(const Objective& f, const LbfgsOptions& o, std::span<const double> x, std::span<const double> dir,
               int& evals)
        : f_(f), o_(o), x_(x), dir_(dir), evals_(evals)
    {
    }

    Point eval(double a)
    {
        Point p;
        p.a = a;
        p.x.resize(x_.size());
        p.g.resize(x_.size());
        for (std::size_t i = 0; i < x_.size(); ++i) {
            p.x[i] = x_[i] + a * dir_[i];
        }
        p.f = f_(p.x, p.g);
        p.d = dot(p.g, dir_);
        ++evals_;
        return p;
    }

    /// Strong-Wolfe step; returns false with the best sufficient-decrease point
    /// (if any) in out.
    bool run(const Point& p0, double a1, Point& out)
    {
        Point prev = p0;
        double a = a1;
        for (int k = 0; k < o_.max_line_search; ++k) {
            Point p = eval(a);
            if (!std::isfinite(p.f) || p.f > p0.f + o_.c1 * a * p0.d || (k > 0 && p.f >= prev.f)) {
                return zoom(p0, prev, p, out, o_.max_line_search - k - 1);
            }
            if (std::abs(p.d) <= -o_.c2 * p0.d) {
                out = std::move(p);
                return true;
            }
            if (p.d >= 0) {
                return zoom(p0, p, prev, out, o_.max_line_search - k - 1);
            }
            prev = std::move(p);
            a *= 2.0;
        }
        out = std::move(prev);
        return out.a > 0.0;
    }

  private:
    bool zoom(const Point& p0, Point lo, Point hi, Point& out, int budget)
    {
        for (int k = 0; k < budget; ++k) {
            const double lo_a = std::min(lo.a, hi.a);
            const double hi_a = std::max(lo.a, hi.a);
            const double w = hi_a - lo_a;
            double a = std::isfinite(hi.f) ? cubic_min(lo, hi) : std::numeric_limits<double>::quiet_NaN();
            if (!(a > lo_a + 0.1 * w && a < hi_a - 0.1 * w)) {
                a = 0.5 * (lo.a + hi.a);
            }
            Point p = eval(a);
            if (!std::isfinite(p.f) || p.f > p0.f + o_.c1 * a * p0.d || p.f >= lo.f) {
                hi = std::move(p);
            } else {
                if (std::abs(p.d) <= -o_.c2 * p0.d) {
                    out = std::move(p);
                    return true;
                }
                if (p.d * (hi.a - lo.a) >= 0) {
                    hi = lo;
                }
                lo = std::move(p);
            }
            if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, lo.a)) {
                break;
            }
        }
        // lo always satisfies sufficient decrease when it moved off zero
        out = std::move(lo);
        return false;
    }

    const Objective& f_;
    const LbfgsOptions& o_;
    std::span<const double> x_;
    std::span<const double> dir_;
    int& evals_;
};

} // namespace

LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& opts,
                           const std::function<void(const LbfgsIterate&)>& on_iterate)
{
    const std::size_t n = x0.size();
    LbfgsResult r;
    Point cur;
    cur.x = std::move(x0);
    cur.g.assign(n, 0.0);
    cur.f = f(cur.x, cur.g);
    r.evaluations = 1;
    auto record = [&](int it) {
        const LbfgsIterate rec{it, cur.f, std::sqrt(dot(cur.g, cur.g)), r.evaluations};
        r.history.push_back(rec);
        if (on_iterate) {
            on_iterate(rec);
        }
        return rec.grad_norm;
    };
    double gnorm = record(0);
    r.status = LbfgsStatus::MaxIterations;

    std::deque<std::vector<double>> S;
    std::deque<std::vector<double>> Y;
    std::deque<double> rho;
    std::vector<double> dir(n);
    std::vector<double> alpha(static_cast<std::size_t>(opts.memory));

    for (int it = 1; it <= opts.max_iterations; ++it) {
        if (gnorm < opts.grad_tol) {
            r.status = LbfgsStatus::GradientTolerance;
            break;
        }
        // two-loop recursion
        for (std::size_t i = 0; i < n; ++i) {
            dir[i] = -cur.g[i];
        }
        const std::size_t m = S.size();
        for (std::size_t k = m; k-- > 0;) {
            alpha[k] = rho[k] * dot(S[k], dir);
            for (std::size_t i = 0; i < n; ++i) {
                dir[i] -= alpha[k] * Y[k][i];
            }
        }
        if (m > 0) {
            const double gamma = dot(S[m - 1], Y[m - 1]) / dot(Y[m - 1], Y[m - 1]);
            for (double& v : dir) {
                v *= gamma;
            }
        }
        for (std::size_t k = 0; k < m; ++k) {
            const double beta = rho[k] * dot(Y[k], dir);
            for (std::size_t i = 0; i < n; ++i) {
                dir[i] += S[k][i] * (alpha[k] - beta);
            }
        }
        cur.a = 0.0;
        cur.d = dot(cur.g, dir);
        if (!(cur.d < 0.0)) {
            // lost descent; restart from steepest descent
            S.clear();
            Y.clear();
            rho.clear();
            for (std::size_t i = 0; i < n; ++i) {
                dir[i] = -cur.g[i];
            }
            cur.d = -gnorm * gnorm;
        }
        const double a1 = m == 0 ? std::min(1.0, 1.0 / gnorm) : 1.0;
        LineSearch ls(f, opts, cur.x, dir, r.evaluations);
        Point next;
        const bool ok = ls.run(cur, a1, next);
        if (!ok && !(next.a > 0.0 && next.f < cur.f)) {
            r.status = LbfgsStatus::LineSearchFailed;
            break;
        }
        std::vector<double> s(n);
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = next.x[i] - cur.x[i];
            y[i] = next.g[i] - cur.g[i];
        }
        const double sy = dot(s, y);
        const double f_prev = cur.f;
        cur = std::move(next);
        r.iterations = it;
        gnorm = record(it);
        if (sy > 1e-12 * std::sqrt(dot(s, s) * dot(y, y))) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > opts.memory) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }
        if (!ok) {
            // accepted a decrease without the curvature condition; carry on but
            // stop if the search keeps failing to make progress
            if (std::abs(f_prev - cur.f) <= opts.rel_tol * std::max(std::abs(f_prev), std::abs(cur.f))) {
                r.status = LbfgsStatus::LineSearchFailed;
                break;
            }
            continue;
        }
        if (gnorm < opts.grad_tol) {
            r.status = LbfgsStatus::GradientTolerance;
            break;
        }
        if (std::abs(f_prev - cur.f) <= opts.rel_tol * std::max(std::abs(f_prev), std::abs(cur.f))) {
            r.status = LbfgsStatus::RelativeTolerance;
            break;
        }
    }
    r.x = std::move(cur.x);
    r.f = cur.f;
    r.grad_norm = gnorm;
    return r;
}

} // namespace pdenet
