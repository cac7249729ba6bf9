#include "pdenet/field.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "pdenet/filter.hpp"
#include "pdenet/kernels.hpp"

namespace pdenet {

void Grid2D::validate() const
{
    if (nx <= 0 || ny <= 0 || !(lx > 0.0) || !(ly > 0.0)) {
        throw SizeMismatchError("invalid grid " + std::to_string(nx) + "x" + std::to_string(ny));
    }
}

Field::Field(Grid2D grid) : grid_(grid), values_(grid.size(), 0.0) { grid_.validate(); }

Field::Field(Grid2D grid, std::vector<double> values) : grid_(grid), values_(std::move(values))
{
    grid_.validate();
    if (values_.size() != grid_.size()) {
        throw SizeMismatchError("field needs " + std::to_string(grid_.size()) + " values, got " +
                                std::to_string(values_.size()));
    }
}

bool Field::all_finite() const noexcept
{
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Field::mean() const noexcept
{
    double s = 0.0;
    for (double v : values_) {
        s += v;
    }
    return values_.empty() ? 0.0 : s / static_cast<double>(values_.size());
}

double Field::max() const noexcept
{
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values_) {
        m = std::max(m, v);
    }
    return m;
}

double Field::max_abs() const noexcept
{
    double m = 0.0;
    for (double v : values_) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

Field& Field::operator+=(const Field& rhs)
{
    if (rhs.grid_ != grid_) {
        throw SizeMismatchError("adding fields on different grids");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] += rhs.values_[i];
    }
    return *this;
}

Field& Field::operator-=(const Field& rhs)
{
    if (rhs.grid_ != grid_) {
        throw SizeMismatchError("subtracting fields on different grids");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] -= rhs.values_[i];
    }
    return *this;
}

Field& Field::operator*=(double s)
{
    for (double& v : values_) {
        v *= s;
    }
    return *this;
}

double max_abs_diff(const Field& a, const Field& b)
{
    if (a.grid() != b.grid()) {
        throw SizeMismatchError("comparing fields on different grids");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    }
    return m;
}

namespace {

Field convolve_checked(const Field& u, const Filter& q, Boundary expected)
{
    if (u.grid().boundary != expected) {
        throw SizeMismatchError(expected == Boundary::Periodic ? "circular_convolve needs a periodic grid"
                                                               : "dirichlet_convolve needs a Dirichlet grid");
    }
    Field out(u.grid());
    kernels::convolve(u.values(), {u.grid().nx, u.grid().ny, expected}, q, out.values());
    return out;
}

} // namespace

Field circular_convolve(const Field& u, const Filter& q) { return convolve_checked(u, q, Boundary::Periodic); }

Field dirichlet_convolve(const Field& u, const Filter& q) { return convolve_checked(u, q, Boundary::Dirichlet); }

Field convolve(const Field& u, const Filter& q) { return convolve_checked(u, q, u.grid().boundary); }

Field correlate(const Field& u, const Filter& q) { return convolve(u, q.reversed()); }

Field restrict(const Field& u, int factor)
{
    const Grid2D& g = u.grid();
    if (factor <= 0 || g.nx % factor != 0 || g.ny % factor != 0) {
        throw SizeMismatchError("cannot restrict " + std::to_string(g.nx) + "x" + std::to_string(g.ny) +
                                " by factor " + std::to_string(factor));
    }
    Grid2D coarse = g;
    coarse.nx = g.nx / factor;
    coarse.ny = g.ny / factor;
    Field out(coarse);
    for (int j = 0; j < coarse.ny; ++j) {
        for (int i = 0; i < coarse.nx; ++i) {
            out(i, j) = u(i * factor, j * factor);
        }
    }
    return out;
}

Field periodic_shift(const Field& u, int si, int sj)
{
    const Grid2D& g = u.grid();
    Field out(g);
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int src_i = ((i - si) % g.nx + g.nx) % g.nx;
            const int src_j = ((j - sj) % g.ny + g.ny) % g.ny;
            out(i, j) = u(src_i, src_j);
        }
    }
    return out;
}

namespace {

constexpr std::array<char, 8> kMagic{'P', 'D', 'E', 'N', 'E', 'T', 'F', '1'};

template <typename T>
void put_le(std::ostream& os, T v)
{
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is)
{
    std::array<unsigned char, sizeof(T)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    if (!is) {
        throw IoError("truncated PDF1 stream");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
}

} // namespace

void write_pdf1(const std::filesystem::path& path, const Field& u)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(u.grid().nx));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(u.grid().ny));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(u.grid().boundary));
    for (double v : u.values()) {
        put_le<double>(os, v);
    }
    if (!os) {
        throw IoError("write failed for " + path.string());
    }
}

Field read_pdf1(const std::filesystem::path& path, double lx, double ly)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open " + path.string());
    }
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) {
        throw IoError(path.string() + " is not a PDF1 file");
    }
    Grid2D g;
    g.nx = static_cast<int>(get_le<std::uint32_t>(is));
    g.ny = static_cast<int>(get_le<std::uint32_t>(is));
    const auto flag = get_le<std::uint8_t>(is);
    if (flag > 1) {
        throw IoError(path.string() + ": unknown boundary flag " + std::to_string(flag));
    }
    g.boundary = static_cast<Boundary>(flag);
    g.lx = lx;
    g.ly = ly;
    std::vector<double> values(g.size());
    for (double& v : values) {
        v = get_le<double>(is);
    }
    return Field(g, std::move(values));
}

} // namespace pdenet
