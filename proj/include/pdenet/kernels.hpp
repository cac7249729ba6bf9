#pragma once

// Stencil kernels shared by the forward model and its adjoint.
//
// Every kernel exists twice: a `*_reference` version written as the plain
// quadruple loop with index wrapping, kept for tests and benchmarks, and the
// production version which pads once and runs contiguous row updates,
// parallelized over rows with OpenMP. Inside an enclosing parallel region
// (batch evaluation) the inner pragmas run serially.

#include <span>

#include "pdenet/field.hpp"
#include "pdenet/filter.hpp"

namespace pdenet::kernels {

struct Shape {
    int nx;
    int ny;
    Boundary boundary;
};

/// out[x] = sum_k q[k] u[x-k].
void convolve(std::span<const double> u, Shape s, const Filter& q, std::span<double> out);
void convolve_reference(std::span<const double> u, Shape s, const Filter& q, std::span<double> out);

/// Adjoint of convolve with respect to u: out[x] = sum_k q[k] g[x+k].
/// Accumulates into out when accumulate is set.
void convolve_adjoint(std::span<const double> g, Shape s, const Filter& q, std::span<double> out,
                      bool accumulate = false);
void convolve_adjoint_reference(std::span<const double> g, Shape s, const Filter& q,
                                std::span<double> out, bool accumulate = false);

/// Adjoint of convolve with respect to q: dq[k] += scale * sum_x g[x] u[x-k].
/// dq uses the layout of q.weights().
void filter_gradient(std::span<const double> g, std::span<const double> u, Shape s, const Filter& q,
                     double scale, std::span<double> dq);
void filter_gradient_reference(std::span<const double> g, std::span<const double> u, Shape s,
                               const Filter& q, double scale, std::span<double> dq);

/// Copy of u with a halo of width r; out-of-domain cells wrap (periodic) or
/// are zero (Dirichlet). Row stride is nx + 2r.
void pad(std::span<const double> u, Shape s, int r, std::span<double> padded);

} // namespace pdenet::kernels
