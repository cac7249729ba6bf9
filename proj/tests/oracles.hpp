#pragma once

// Test-only reference computations, independent of the library code paths.

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

/// Gaussian elimination with partial pivoting on a dense row-major system.
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b)
{
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) {
                piv = r;
            }
        }
        if (std::abs(a[piv * n + c]) < 1e-300) {
            throw std::runtime_error("singular system");
        }
        if (piv != c) {
            for (std::size_t k = 0; k < n; ++k) {
                std::swap(a[c * n + k], a[piv * n + k]);
            }
            std::swap(b[c], b[piv]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r * n + c] / a[c * n + c];
            for (std::size_t k = c; k < n; ++k) {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t k = i + 1; k < n; ++k) {
            acc -= a[i * n + k] * x[k];
        }
        x[i] = acc / a[i * n + i];
    }
    return x;
}

/// Solves the full n^2 x n^2 moment system sum_k k1^p k2^s q[k] / (p! s!) = m(p,s)
/// for a centered n x n filter. m is indexed p*n+s; the result uses the
/// x-fast filter layout ((k2+r)*n + (k1+r)).
inline std::vector<double> filter_from_moment_system(int n, const std::vector<double>& m)
{
    const int r = (n - 1) / 2;
    const std::size_t N = static_cast<std::size_t>(n) * n;
    std::vector<double> a(N * N);
    auto fact = [](int p) {
        double f = 1;
        for (int i = 2; i <= p; ++i) f *= i;
        return f;
    };
    for (int p = 0; p < n; ++p) {
        for (int s = 0; s < n; ++s) {
            const std::size_t row = static_cast<std::size_t>(p) * n + s;
            for (int k2 = -r; k2 <= r; ++k2) {
                for (int k1 = -r; k1 <= r; ++k1) {
                    const std::size_t col = static_cast<std::size_t>(k2 + r) * n + (k1 + r);
                    a[row * N + col] = std::pow(k1, p) * std::pow(k2, s) / (fact(p) * fact(s));
                }
            }
        }
    }
    return solve_dense(std::move(a), m);
}

/// Least-squares slope of log(err) against log(h).
inline double loglog_slope(const std::vector<double>& h, const std::vector<double>& err)
{
    const std::size_t n = h.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = std::log(h[i]);
        const double y = std::log(err[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace oracle
