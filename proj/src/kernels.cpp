#include "pdenet/kernels.hpp"

#include <algorithm>
#include <string>

namespace pdenet::kernels {
namespace {

void check(std::span<const double> a, Shape s, const Filter& q)
{
    if (a.size() != static_cast<std::size_t>(s.nx) * s.ny) {
        throw SizeMismatchError("kernel input has " + std::to_string(a.size()) + " values, grid needs " +
                                std::to_string(s.nx * s.ny));
    }
    if (q.n() > s.nx || q.n() > s.ny) {
        throw SizeMismatchError("filter of side " + std::to_string(q.n()) + " larger than grid " +
                                std::to_string(s.nx) + "x" + std::to_string(s.ny));
    }
}

int wrap(int i, int n) noexcept
{
    int r = i % n;
    return r < 0 ? r + n : r;
}

// Sample with the boundary rule applied; zero outside a Dirichlet domain.
double fetch(std::span<const double> u, Shape s, int i, int j) noexcept
{
    if (s.boundary == Boundary::Periodic) {
        return u[static_cast<std::size_t>(wrap(j, s.ny)) * s.nx + wrap(i, s.nx)];
    }
    if (i < 0 || i >= s.nx || j < 0 || j >= s.ny) {
        return 0.0;
    }
    return u[static_cast<std::size_t>(j) * s.nx + i];
}

std::vector<double>& scratch(std::size_t n)
{
    thread_local std::vector<double> buf;
    if (buf.size() < n) {
        buf.resize(n);
    }
    return buf;
}

} // namespace

void pad(std::span<const double> u, Shape s, int r, std::span<double> padded)
{
    const int stride = s.nx + 2 * r;
    for (int j = -r; j < s.ny + r; ++j) {
        double* row = padded.data() + static_cast<std::size_t>(j + r) * stride;
        const bool row_inside = j >= 0 && j < s.ny;
        if (s.boundary == Boundary::Dirichlet && !row_inside) {
            std::fill(row, row + stride, 0.0);
            continue;
        }
        const double* src = u.data() + static_cast<std::size_t>(wrap(j, s.ny)) * s.nx;
        std::copy(src, src + s.nx, row + r);
        for (int i = -r; i < 0; ++i) {
            row[i + r] = s.boundary == Boundary::Periodic ? src[wrap(i, s.nx)] : 0.0;
        }
        for (int i = s.nx; i < s.nx + r; ++i) {
            row[i + r] = s.boundary == Boundary::Periodic ? src[wrap(i, s.nx)] : 0.0;
        }
    }
}

void convolve(std::span<const double> u, Shape s, const Filter& q, std::span<double> out)
{
    check(u, s, q);
    const int r = q.radius();
    const int stride = s.nx + 2 * r;
    auto& buf = scratch(static_cast<std::size_t>(stride) * (s.ny + 2 * r));
    pad(u, s, r, buf);
    const double* P = buf.data();
    const int n = q.n();
    const int lo = q.lo();
    const double* w = q.weights().data();

#pragma omp parallel for schedule(static)
    for (int j = 0; j < s.ny; ++j) {
        double* o = out.data() + static_cast<std::size_t>(j) * s.nx;
        std::fill(o, o + s.nx, 0.0);
        for (int b = 0; b < n; ++b) {
            const int k2 = lo + b;
            const double* prow = P + static_cast<std::size_t>(j - k2 + r) * stride + r;
            for (int a = 0; a < n; ++a) {
                const int k1 = lo + a;
                const double wk = w[b * n + a];
                if (wk == 0.0) {
                    continue;
                }
                const double* src = prow - k1;
#pragma omp simd
                for (int i = 0; i < s.nx; ++i) {
                    o[i] += wk * src[i];
                }
            }
        }
    }
}

void convolve_reference(std::span<const double> u, Shape s, const Filter& q, std::span<double> out)
{
    check(u, s, q);
    for (int j = 0; j < s.ny; ++j) {
        for (int i = 0; i < s.nx; ++i) {
            double acc = 0.0;
            for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
                for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
                    acc += q.at(k1, k2) * fetch(u, s, i - k1, j - k2);
                }
            }
            out[static_cast<std::size_t>(j) * s.nx + i] = acc;
        }
    }
}

void convolve_adjoint(std::span<const double> g, Shape s, const Filter& q, std::span<double> out,
                      bool accumulate)
{
    check(g, s, q);
    const int r = q.radius();
    const int stride = s.nx + 2 * r;
    auto& buf = scratch(static_cast<std::size_t>(stride) * (s.ny + 2 * r));
    pad(g, s, r, buf);
    const double* P = buf.data();
    const int n = q.n();
    const int lo = q.lo();
    const double* w = q.weights().data();

#pragma omp parallel for schedule(static)
    for (int j = 0; j < s.ny; ++j) {
        double* o = out.data() + static_cast<std::size_t>(j) * s.nx;
        if (!accumulate) {
            std::fill(o, o + s.nx, 0.0);
        }
        for (int b = 0; b < n; ++b) {
            const int k2 = lo + b;
            const double* prow = P + static_cast<std::size_t>(j + k2 + r) * stride + r;
            for (int a = 0; a < n; ++a) {
                const int k1 = lo + a;
                const double wk = w[b * n + a];
                if (wk == 0.0) {
                    continue;
                }
                const double* src = prow + k1;
#pragma omp simd
                for (int i = 0; i < s.nx; ++i) {
                    o[i] += wk * src[i];
                }
            }
        }
    }
}

void convolve_adjoint_reference(std::span<const double> g, Shape s, const Filter& q,
                                std::span<double> out, bool accumulate)
{
    check(g, s, q);
    for (int j = 0; j < s.ny; ++j) {
        for (int i = 0; i < s.nx; ++i) {
            double acc = 0.0;
            for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
                for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
                    acc += q.at(k1, k2) * fetch(g, s, i + k1, j + k2);
                }
            }
            double& o = out[static_cast<std::size_t>(j) * s.nx + i];
            o = accumulate ? o + acc : acc;
        }
    }
}

void filter_gradient(std::span<const double> g, std::span<const double> u, Shape s, const Filter& q,
                     double scale, std::span<double> dq)
{
    check(u, s, q);
    check(g, s, q);
    const int r = q.radius();
    const int stride = s.nx + 2 * r;
    auto& buf = scratch(static_cast<std::size_t>(stride) * (s.ny + 2 * r));
    pad(u, s, r, buf);
    const double* P = buf.data();
    const int n = q.n();
    const int lo = q.lo();

#pragma omp parallel for schedule(static)
    for (int t = 0; t < n * n; ++t) {
        const int k1 = lo + t % n;
        const int k2 = lo + t / n;
        double acc = 0.0;
        for (int j = 0; j < s.ny; ++j) {
            const double* gr = g.data() + static_cast<std::size_t>(j) * s.nx;
            const double* src = P + static_cast<std::size_t>(j - k2 + r) * stride + r - k1;
#pragma omp simd reduction(+ : acc)
            for (int i = 0; i < s.nx; ++i) {
                acc += gr[i] * src[i];
            }
        }
        dq[t] += scale * acc;
    }
}

void filter_gradient_reference(std::span<const double> g, std::span<const double> u, Shape s,
                               const Filter& q, double scale, std::span<double> dq)
{
    check(u, s, q);
    for (int k2 = q.lo(); k2 <= q.hi(); ++k2) {
        for (int k1 = q.lo(); k1 <= q.hi(); ++k1) {
            double acc = 0.0;
            for (int j = 0; j < s.ny; ++j) {
                for (int i = 0; i < s.nx; ++i) {
                    acc += g[static_cast<std::size_t>(j) * s.nx + i] * fetch(u, s, i - k1, j - k2);
                }
            }
            dq[static_cast<std::size_t>(k2 - q.lo()) * q.n() + (k1 - q.lo())] += scale * acc;
        }
    }
}

} // namespace pdenet::kernels
