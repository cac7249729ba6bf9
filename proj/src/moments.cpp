#include "pdenet/moments.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>

namespace pdenet {
namespace {

double factorial(int p)
{
    double f = 1.0;
    for (int i = 2; i <= p; ++i) {
        f *= i;
    }
    return f;
}

double ipow(double base, int e)
{
    double r = 1.0;
    for (int i = 0; i < e; ++i) {
        r *= base;
    }
    return r;
}

} // namespace

std::string to_string(Order o) { return "(" + std::to_string(o.i) + "," + std::to_string(o.j) + ")"; }

MomentBasis::MomentBasis(int n) : n_(n), v_(n, n), vl_(n, n)
{
    const int r = (n - 1) / 2;
    for (int p = 0; p < n; ++p) {
        for (int a = 0; a < n; ++a) {
            vl_(p, a) = static_cast<long double>(ipow(a - r, p)) / static_cast<long double>(factorial(p));
        }
    }
    vl_inv_ = vl_.fullPivLu().inverse();
    v_ = vl_.cast<double>();
    v_inv_ = vl_inv_.cast<double>();
}

const MomentBasis& MomentBasis::get(int n)
{
    if (n <= 0 || n % 2 == 0) {
        throw SizeMismatchError("moment basis needs an odd filter size, got " + std::to_string(n));
    }
    static std::mutex mu;
    static std::map<int, std::unique_ptr<MomentBasis>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) {
        slot.reset(new MomentBasis(n));
    }
    return *slot;
}

MomentMatrix MomentBasis::moments(const Filter& q) const
{
    LMatrix w(n_, n_);
    for (int b = 0; b < n_; ++b) {
        for (int a = 0; a < n_; ++a) {
            w(a, b) = q.weights()[static_cast<std::size_t>(b) * n_ + a];
        }
    }
    const LMatrix m = vl_ * w * vl_.transpose();
    MomentMatrix out(n_);
    for (int p = 0; p < n_; ++p) {
        for (int s = 0; s < n_; ++s) {
            out(p, s) = static_cast<double>(m(p, s));
        }
    }
    return out;
}

Filter MomentBasis::filter(const MomentMatrix& m) const
{
    LMatrix mm(n_, n_);
    for (int p = 0; p < n_; ++p) {
        for (int s = 0; s < n_; ++s) {
            mm(p, s) = m(p, s);
        }
    }
    const LMatrix w = vl_inv_ * mm * vl_inv_.transpose();
    Filter q(n_);
    for (int b = 0; b < n_; ++b) {
        for (int a = 0; a < n_; ++a) {
            q.weights()[static_cast<std::size_t>(b) * n_ + a] = static_cast<double>(w(a, b));
        }
    }
    return q;
}

MomentMatrix MomentBasis::pullback(std::span<const double> dweights) const
{
    LMatrix dw(n_, n_);
    for (int b = 0; b < n_; ++b) {
        for (int a = 0; a < n_; ++a) {
            dw(a, b) = dweights[static_cast<std::size_t>(b) * n_ + a];
        }
    }
    const LMatrix dm = vl_inv_.transpose() * dw * vl_inv_;
    MomentMatrix out(n_);
    for (int p = 0; p < n_; ++p) {
        for (int s = 0; s < n_; ++s) {
            out(p, s) = static_cast<double>(dm(p, s));
        }
    }
    return out;
}

MomentMatrix moment_matrix(const Filter& q)
{
    if (q.is_centered()) {
        return MomentBasis::get(q.n()).moments(q);
    }
    const int n = q.n();
    MomentMatrix m(n);
    for (int p = 0; p < n; ++p) {
        for (int s = 0; s < n; ++s) {
            double acc = 0.0;
            for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
                for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
                    acc += ipow(k1, p) * ipow(k2, s) * q.at(k1, k2);
                }
            }
            m(p, s) = acc / (factorial(p) * factorial(s));
        }
    }
    return m;
}

Filter filter_from_moments(const MomentMatrix& m) { return MomentBasis::get(m.n()).filter(m); }

SumRuleOrder sum_rule_order(const Filter& q, double tol)
{
    SumRuleOrder out;
    if (!(tol > 0.0)) {
        throw ConstraintError("sum_rule_order needs tol > 0");
    }
    const int max_order = 2 * q.n() + 2;

    auto nonzero_at = [&](int order) {
        std::vector<Order> hits;
        for (int p = order; p >= 0; --p) {
            const int s = order - p;
            double mom = 0.0;
            double mag = 0.0;
            for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
                for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
                    const double t = ipow(k1, p) * ipow(k2, s) * q.at(k1, k2);
                    mom += t;
                    mag += std::abs(t);
                }
            }
            if (std::abs(mom) > tol * std::max(1.0, mag)) {
                hits.push_back({p, s});
            }
        }
        return hits;
    };

    int order = 0;
    for (; order <= max_order; ++order) {
        const auto hits = nonzero_at(order);
        if (hits.empty()) {
            continue;
        }
        if (hits.size() > 1) {
            std::ostringstream os;
            os << "ambiguous: " << hits.size() << " nonzero moments of order " << order << ":";
            for (const auto& h : hits) {
                os << ' ' << to_string(h);
            }
            out.diagnostic = os.str();
            return out;
        }
        out.alpha = hits.front();
        break;
    }
    if (!out.alpha) {
        out.diagnostic = "all moments up to order " + std::to_string(max_order) + " vanish";
        return out;
    }
    for (int k = order + 1; k <= max_order; ++k) {
        if (!nonzero_at(k).empty()) {
            out.total = std::make_pair(k, order + 1);
            return out;
        }
    }
    out.diagnostic = "no nonzero moment above order " + std::to_string(order) + " up to " +
                     std::to_string(max_order);
    return out;
}

Filter frozen_filter(Order order, int n)
{
    if (n <= 0 || n % 2 == 0) {
        throw SizeMismatchError("frozen filter needs odd size, got " + std::to_string(n));
    }
    if (order.i < 0 || order.j < 0 || order.total() >= n) {
        throw ConstraintError("derivative " + to_string(order) + " is not representable on a " +
                              std::to_string(n) + "x" + std::to_string(n) + " filter");
    }
    MomentMatrix m(n);
    m(order.i, order.j) = 1.0;
    return filter_from_moments(m);
}

ConstraintPattern ConstraintPattern::derivative(Order order, int n)
{
    if (order.i < 0 || order.j < 0 || order.total() >= n) {
        throw ConstraintError("derivative " + to_string(order) + " is not representable on a " +
                              std::to_string(n) + "x" + std::to_string(n) + " filter");
    }
    if (order.total() == 0) {
        return averaging(n);
    }
    ConstraintPattern pat(n);
    for (int p = 0; p < n; ++p) {
        for (int s = 0; s < n; ++s) {
            if (p + s <= order.total()) {
                pat.fix(p, s, (p == order.i && s == order.j) ? 1.0 : 0.0);
            }
        }
    }
    return pat;
}

ConstraintPattern ConstraintPattern::averaging(int n)
{
    ConstraintPattern pat(n);
    pat.fix(0, 0, 1.0);
    return pat;
}

ConstraintPattern ConstraintPattern::frozen(Order order, int n)
{
    if (order.i < 0 || order.j < 0 || order.total() >= n) {
        throw ConstraintError("derivative " + to_string(order) + " is not representable on a " +
                              std::to_string(n) + "x" + std::to_string(n) + " filter");
    }
    ConstraintPattern pat(n);
    for (int p = 0; p < n; ++p) {
        for (int s = 0; s < n; ++s) {
            pat.fix(p, s, (p == order.i && s == order.j) ? 1.0 : 0.0);
        }
    }
    return pat;
}

ConstraintPattern ConstraintPattern::unconstrained(int n) { return ConstraintPattern(n); }

int ConstraintPattern::free_count() const noexcept
{
    int c = 0;
    for (const auto& e : entries_) {
        c += e.has_value() ? 0 : 1;
    }
    return c;
}

std::vector<int> ConstraintPattern::free_indices() const
{
    std::vector<int> idx;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!entries_[i]) {
            idx.push_back(static_cast<int>(i));
        }
    }
    return idx;
}

std::vector<Order> ConstraintPattern::violations(const MomentMatrix& m, double tol) const
{
    if (m.n() != n_) {
        throw SizeMismatchError("pattern and moment matrix differ in size");
    }
    std::vector<Order> bad;
    for (int p = 0; p < n_; ++p) {
        for (int s = 0; s < n_; ++s) {
            const auto& e = entry(p, s);
            if (e && std::abs(m(p, s) - *e) > tol) {
                bad.push_back({p, s});
            }
        }
    }
    return bad;
}

Filter constrained_parameterization(const ConstraintPattern& pattern, std::span<const double> free_values)
{
    const int n = pattern.n();
    if (static_cast<int>(free_values.size()) != pattern.free_count()) {
        throw SizeMismatchError("pattern has " + std::to_string(pattern.free_count()) + " free entries, got " +
                                std::to_string(free_values.size()) + " values");
    }
    MomentMatrix m(n);
    std::size_t f = 0;
    for (int p = 0; p < n; ++p) {
        for (int s = 0; s < n; ++s) {
            const auto& e = pattern.entry(p, s);
            m(p, s) = e ? *e : free_values[f++];
        }
    }
    return filter_from_moments(m);
}

std::vector<double> free_values_of(const ConstraintPattern& pattern, const MomentMatrix& m)
{
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(pattern.free_count()));
    for (int idx : pattern.free_indices()) {
        out.push_back(m.values()[static_cast<std::size_t>(idx)]);
    }
    return out;
}

void pullback_free(const ConstraintPattern& pattern, std::span<const double> dweights, std::span<double> dfree)
{
    const MomentMatrix dm = MomentBasis::get(pattern.n()).pullback(dweights);
    std::size_t f = 0;
    for (int idx : pattern.free_indices()) {
        dfree[f++] = dm.values()[static_cast<std::size_t>(idx)];
    }
}

double derivative_scale(const Grid2D& grid, Order order)
{
    return 1.0 / (ipow(grid.dx(), order.i) * ipow(grid.dy(), order.j));
}

Field apply_derivative(const Field& u, const Filter& q, Order order)
{
    const auto pattern = ConstraintPattern::derivative(order, q.n());
    const auto bad = pattern.violations(moment_matrix(q));
    if (!bad.empty()) {
        std::string msg = "filter does not satisfy the " + to_string(order) + " moment pattern; violated:";
        for (const auto& b : bad) {
            msg += " " + to_string(b);
        }
        throw ConstraintError(msg);
    }
    Field out = correlate(u, q);
    out *= derivative_scale(u.grid(), order);
    return out;
}

std::string describe(const Filter& q)
{
    std::ostringstream os;
    os << std::setprecision(6) << std::scientific;
    os << "weights (rows k2=" << q.lo() << ".." << q.hi() << ", cols k1):\n";
    for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
        for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
            os << std::setw(15) << q.at(k1, k2);
        }
        os << '\n';
    }
    const MomentMatrix m = moment_matrix(q);
    os << "moments (rows p = x-order, cols s = y-order):\n";
    for (int p = 0; p < m.n(); ++p) {
        for (int s = 0; s < m.n(); ++s) {
            os << std::setw(15) << m(p, s);
        }
        os << '\n';
    }
    return os.str();
}

} // namespace pdenet
