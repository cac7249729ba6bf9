#pragma once

#include <compare>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pdenet/field.hpp"
#include "pdenet/filter.hpp"

namespace pdenet {

/// Derivative multi-index: i is the order in x, j the order in y.
struct Order {
    int i = 0;
    int j = 0;

    [[nodiscard]] int total() const noexcept { return i + j; }
    friend auto operator<=>(const Order&, const Order&) = default;
};

std::string to_string(Order o);

/// Factorial-scaled discrete moments of an n x n filter.
///
/// Entry (p, s) is (1/(p! s!)) sum_k k1^p k2^s q[k], i.e. the "(p,s)-moment".
/// Indices are zero-based moment orders; p runs along x.
class MomentMatrix {
  public:
    MomentMatrix() = default;
    explicit MomentMatrix(int n) : n_(n), m_(static_cast<std::size_t>(n) * n, 0.0) {}

    [[nodiscard]] int n() const noexcept { return n_; }
    double& operator()(int p, int s) { return m_[static_cast<std::size_t>(p) * n_ + s]; }
    double operator()(int p, int s) const { return m_[static_cast<std::size_t>(p) * n_ + s]; }
    [[nodiscard]] std::span<const double> values() const noexcept { return m_; }
    [[nodiscard]] std::span<double> values() noexcept { return m_; }

  private:
    int n_ = 0;
    std::vector<double> m_;
};

/// The fixed linear bijection between centered n x n filters and their moment
/// matrices: M = V W V^T with V(p, a) = k_a^p / p! and k_a = a - (n-1)/2.
/// One immutable instance per size, shared across threads.
class MomentBasis {
  public:
    static const MomentBasis& get(int n);

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] const Eigen::MatrixXd& forward() const noexcept { return v_; }
    [[nodiscard]] const Eigen::MatrixXd& inverse() const noexcept { return v_inv_; }

    [[nodiscard]] MomentMatrix moments(const Filter& q) const;
    [[nodiscard]] Filter filter(const MomentMatrix& m) const;
    /// Gradient with respect to moments given the gradient with respect to
    /// weights (Filter layout): V^{-T} dW V^{-1}.
    [[nodiscard]] MomentMatrix pullback(std::span<const double> dweights) const;

  private:
    // products are formed in extended precision; the double copies are for callers
    using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    explicit MomentBasis(int n);
    int n_;
    Eigen::MatrixXd v_;
    Eigen::MatrixXd v_inv_;
    LMatrix vl_;
    LMatrix vl_inv_;
};

MomentMatrix moment_matrix(const Filter& q);

/// The unique centered filter whose moment matrix is m (m.n() odd).
Filter filter_from_moments(const MomentMatrix& m);

struct SumRuleOrder {
    std::optional<Order> alpha;
    /// (K, J+1) for "total sum rules of order K\{J+1}".
    std::optional<std::pair<int, int>> total;
    std::string diagnostic;
};

/// Order of sum rules of q, detected on raw moments sum_k k^beta q[k] with
/// |moment| <= tol * max(1, sum_k |k^beta q[k]|) counted as vanishing.
/// Works for any filter origin.
SumRuleOrder sum_rule_order(const Filter& q, double tol = 1e-10);

/// Finite-difference stencil with every moment fixed: (order)-moment 1, rest 0.
Filter frozen_filter(Order order, int n);

/// Per-entry status of a moment matrix: fixed to a value, or free.
class ConstraintPattern {
  public:
    ConstraintPattern() = default;
    explicit ConstraintPattern(int n) : n_(n), entries_(static_cast<std::size_t>(n) * n) {}

    /// Moments with p+s <= i+j fixed: 1 at (i,j), 0 elsewhere. For (0,0) this
    /// is the averaging pattern.
    static ConstraintPattern derivative(Order order, int n);
    /// (0,0)-moment fixed to 1, all others free.
    static ConstraintPattern averaging(int n);
    /// Every entry fixed; realizes frozen_filter.
    static ConstraintPattern frozen(Order order, int n);
    /// Every entry free.
    static ConstraintPattern unconstrained(int n);

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] const std::optional<double>& entry(int p, int s) const
    {
        return entries_[static_cast<std::size_t>(p) * n_ + s];
    }
    void fix(int p, int s, double v) { entries_[static_cast<std::size_t>(p) * n_ + s] = v; }
    void release(int p, int s) { entries_[static_cast<std::size_t>(p) * n_ + s].reset(); }

    [[nodiscard]] int free_count() const noexcept;
    /// Flat moment indices (p*n + s) of the free entries, in storage order.
    [[nodiscard]] std::vector<int> free_indices() const;
    /// Fixed entries whose value in m differs by more than tol.
    [[nodiscard]] std::vector<Order> violations(const MomentMatrix& m, double tol = 1e-10) const;

    friend bool operator==(const ConstraintPattern&, const ConstraintPattern&) = default;

  private:
    int n_ = 0;
    std::vector<std::optional<double>> entries_;
};

/// Moment matrix built from the pattern's fixed values and free_values (in
/// free_indices() order), mapped to weight space.
Filter constrained_parameterization(const ConstraintPattern& pattern, std::span<const double> free_values);

/// Values of m at the pattern's free entries.
std::vector<double> free_values_of(const ConstraintPattern& pattern, const MomentMatrix& m);

/// d(loss)/d(free values) from d(loss)/d(weights); the map is constant.
void pullback_free(const ConstraintPattern& pattern, std::span<const double> dweights, std::span<double> dfree);

/// 1 / (dx^i dy^j).
double derivative_scale(const Grid2D& grid, Order order);

/// sum_k q[k] u[x+k] / (dx^i dy^j), approximating d^{i+j}u/dx^i dy^j.
/// Throws ConstraintError when q does not satisfy the derivative pattern.
Field apply_derivative(const Field& u, const Filter& q, Order order);

/// Human-readable dump of weights and moment matrix.
std::string describe(const Filter& q);

} // namespace pdenet
