#include "pdenet/filter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pdenet {

Filter::Filter(int n) : n_(n), lo_(-(n - 1) / 2), w_(static_cast<std::size_t>(n) * n, 0.0)
{
    if (n <= 0 || n % 2 == 0) {
        throw SizeMismatchError("centered filter needs odd positive size, got " + std::to_string(n));
    }
}

Filter::Filter(int n, int lo, std::vector<double> weights) : n_(n), lo_(lo), w_(std::move(weights))
{
    if (n <= 0 || w_.size() != static_cast<std::size_t>(n) * n) {
        throw SizeMismatchError("filter of side " + std::to_string(n) + " given " + std::to_string(w_.size()) +
                                " weights");
    }
}

Filter Filter::centered(int n, std::vector<double> weights)
{
    if (n % 2 == 0) {
        throw SizeMismatchError("centered filter needs odd size, got " + std::to_string(n));
    }
    return Filter(n, -(n - 1) / 2, std::move(weights));
}

Filter Filter::delta(int n)
{
    Filter q(n);
    q.at(0, 0) = 1.0;
    return q;
}

int Filter::radius() const noexcept { return std::max(std::abs(lo_), std::abs(hi())); }

Filter Filter::reversed() const
{
    Filter out(n_, -hi(), std::vector<double>(w_.size()));
    for (int k2 = lo_; k2 <= hi(); ++k2) {
        for (int k1 = lo_; k1 <= hi(); ++k1) {
            out.at(-k1, -k2) = at(k1, k2);
        }
    }
    return out;
}

Filter& Filter::operator*=(double s)
{
    for (double& v : w_) {
        v *= s;
    }
    return *this;
}

double max_abs_diff(const Filter& a, const Filter& b)
{
    if (a.n() != b.n() || a.lo() != b.lo()) {
        throw SizeMismatchError("filters differ in size or origin");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.weights().size(); ++i) {
        m = std::max(m, std::abs(a.weights()[i] - b.weights()[i]));
    }
    return m;
}

} // namespace pdenet
