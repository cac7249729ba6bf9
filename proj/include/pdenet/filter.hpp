#pragma once

#include <span>
#include <vector>

#include "pdenet/errors.hpp"

namespace pdenet {

/// Square convolution kernel q[k1,k2] over offsets k in [lo, lo+n-1]^2.
///
/// k1 is the x-offset, k2 the y-offset. Weights are stored with k1 as the
/// fast index, the same layout as Field. Learned filters are centered
/// (lo = -(n-1)/2, n odd); other origins exist for test vectors such as the
/// 2x2 Haar bank.
class Filter {
  public:
    Filter() = default;
    /// Zero centered filter; n must be odd.
    explicit Filter(int n);
    Filter(int n, int lo, std::vector<double> weights);

    static Filter centered(int n, std::vector<double> weights);
    static Filter delta(int n);

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] int lo() const noexcept { return lo_; }
    [[nodiscard]] int hi() const noexcept { return lo_ + n_ - 1; }
    [[nodiscard]] bool is_centered() const noexcept { return n_ % 2 == 1 && lo_ == -(n_ - 1) / 2; }
    /// Largest |k| in either direction.
    [[nodiscard]] int radius() const noexcept;

    [[nodiscard]] std::span<const double> weights() const noexcept { return w_; }
    [[nodiscard]] std::span<double> weights() noexcept { return w_; }

    double& at(int k1, int k2) { return w_[static_cast<std::size_t>(k2 - lo_) * n_ + (k1 - lo_)]; }
    [[nodiscard]] double at(int k1, int k2) const
    {
        return w_[static_cast<std::size_t>(k2 - lo_) * n_ + (k1 - lo_)];
    }

    /// q[-k]: offsets become [-hi, -lo].
    [[nodiscard]] Filter reversed() const;

    Filter& operator*=(double s);

  private:
    int n_ = 0;
    int lo_ = 0;
    std::vector<double> w_;
};

double max_abs_diff(const Filter& a, const Filter& b);

} // namespace pdenet
