#pragma once

#include <cstddef>
#include <filesystem>
#include <numbers>
#include <span>
#include <vector>

#include "pdenet/errors.hpp"

namespace pdenet {

class Filter;

enum class Boundary : unsigned char { Periodic = 0, Dirichlet = 1 };

/// Regular 2D grid over [0,lx) x [0,ly).
///
/// Node (i,j) sits at (i*dx, j*dy). On Dirichlet grids node index 0 is the
/// boundary x=0 (resp. y=0) and the node one past the last stored index is
/// the boundary x=lx; both carry the value zero, only the first is stored.
/// This keeps dx = lx/nx for both boundary kinds and makes injection from a
/// 2n grid onto an n grid land on shared nodes.
struct Grid2D {
    int nx = 50;
    int ny = 50;
    double lx = 2.0 * std::numbers::pi;
    double ly = 2.0 * std::numbers::pi;
    Boundary boundary = Boundary::Periodic;

    [[nodiscard]] double dx() const noexcept { return lx / nx; }
    [[nodiscard]] double dy() const noexcept { return ly / ny; }
    [[nodiscard]] double x(int i) const noexcept { return i * dx(); }
    [[nodiscard]] double y(int j) const noexcept { return j * dy(); }
    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(nx) * ny; }
    [[nodiscard]] bool on_boundary_ring(int i, int j) const noexcept
    {
        return boundary == Boundary::Dirichlet && (i == 0 || j == 0);
    }

    /// Throws SizeMismatchError unless nx, ny > 0 and the extents are positive.
    void validate() const;

    friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

/// Values sampled on a Grid2D, row-major with x as the fast axis.
class Field {
  public:
    Field() = default;
    explicit Field(Grid2D grid);
    Field(Grid2D grid, std::vector<double> values);

    /// Samples f(x, y) at every node.
    template <typename F>
    static Field sample(const Grid2D& grid, F&& f)
    {
        Field out(grid);
        for (int j = 0; j < grid.ny; ++j) {
            for (int i = 0; i < grid.nx; ++i) {
                out(i, j) = f(grid.x(i), grid.y(j));
            }
        }
        return out;
    }

    [[nodiscard]] const Grid2D& grid() const noexcept { return grid_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] std::span<double> values() noexcept { return values_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }

    double& operator()(int i, int j) { return values_[static_cast<std::size_t>(j) * grid_.nx + i]; }
    double operator()(int i, int j) const { return values_[static_cast<std::size_t>(j) * grid_.nx + i]; }

    [[nodiscard]] bool all_finite() const noexcept;
    [[nodiscard]] double mean() const noexcept;
    [[nodiscard]] double max() const noexcept;
    [[nodiscard]] double max_abs() const noexcept;

    Field& operator+=(const Field& rhs);
    Field& operator-=(const Field& rhs);
    Field& operator*=(double s);

    friend Field operator+(Field a, const Field& b) { return a += b; }
    friend Field operator-(Field a, const Field& b) { return a -= b; }
    friend Field operator*(double s, Field a) { return a *= s; }

  private:
    Grid2D grid_{};
    std::vector<double> values_;
};

/// max_i |a_i - b_i|.
double max_abs_diff(const Field& a, const Field& b);

/// out[x] = sum_k q[k] u[x-k] with periodic wraparound.
Field circular_convolve(const Field& u, const Filter& q);

/// Same stencil as circular_convolve with out-of-domain samples treated as zero.
Field dirichlet_convolve(const Field& u, const Filter& q);

/// Dispatches on the boundary kind of u's grid.
Field convolve(const Field& u, const Filter& q);

/// out[x] = sum_k q[k] u[x+k], i.e. convolution with q reversed. This is the
/// form in which moment constraints translate into derivative approximations.
Field correlate(const Field& u, const Filter& q);

/// Injection onto every factor-th node in each direction.
Field restrict(const Field& u, int factor);

/// Shifts a periodic field by (si, sj) nodes: out(i,j) = u(i-si, j-sj).
Field periodic_shift(const Field& u, int si, int sj);

// PDF1 field files: "PDENETF1", u32 nx, u32 ny, u8 boundary, nx*ny f64, all
// little-endian. Extents are not stored; readers supply them.
void write_pdf1(const std::filesystem::path& path, const Field& u);
Field read_pdf1(const std::filesystem::path& path, double lx = 2.0 * std::numbers::pi,
                double ly = 2.0 * std::numbers::pi);

} // namespace pdenet
