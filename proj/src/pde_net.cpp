#include "pdenet/pde_net.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>

#include <Eigen/Dense>

#include "pdenet/kernels.hpp"

namespace pdenet {

// ---------------------------------------------------------------- basis

CoefficientBasis::Axis CoefficientBasis::build(int n, double len, double step, int c, bool periodic)
{
    Axis ax;
    ax.idx.resize(static_cast<std::size_t>(n) * 4);
    ax.w.resize(ax.idx.size());
    const double h = periodic ? len / c : len / (c - 1);
    for (int i = 0; i < n; ++i) {
        const double s = i * step / h;
        int m = static_cast<int>(std::floor(s));
        if (!periodic) {
            m = std::clamp(m, 0, c - 2);
        }
        const double t = s - m;
        int id[4] = {m - 1, m, m + 1, m + 2};
        double w[4];
        if (periodic || (m > 0 && m < c - 2)) {
            w[0] = -0.5 * t * (1 - t) * (1 - t);
            w[1] = (1 - t) * (1 - t * t) + 0.5 * t * (t - 1) * (t - 2);
            w[2] = 0.5 * (1 - t) * t * (t + 1) + t * t * (2 - t);
            w[3] = 0.5 * t * t * (t - 1);
        } else if (m == 0) {
            // quadratic through nodes 0, 1, 2
            id[0] = 0;
            id[1] = 0;
            id[2] = 1;
            id[3] = 2;
            w[0] = 0.0;
            w[1] = 0.5 * (t - 1) * (t - 2);
            w[2] = t * (2 - t);
            w[3] = 0.5 * t * (t - 1);
        } else {
            // quadratic through nodes c-3, c-2, c-1
            id[0] = c - 3;
            id[1] = c - 2;
            id[2] = c - 1;
            id[3] = c - 1;
            w[0] = 0.5 * t * (t - 1);
            w[1] = 1 - t * t;
            w[2] = 0.5 * t * (t + 1);
            w[3] = 0.0;
        }
        for (int k = 0; k < 4; ++k) {
            ax.idx[static_cast<std::size_t>(i) * 4 + k] = periodic ? ((id[k] % c) + c) % c : id[k];
            ax.w[static_cast<std::size_t>(i) * 4 + k] = w[k];
        }
    }
    return ax;
}

CoefficientBasis::CoefficientBasis(const Grid2D& grid, int cx, int cy) : grid_(grid), cx_(cx), cy_(cy)
{
    if (cx < 3 || cy < 3) {
        throw ConfigError("coefficient control grid must be at least 3x3");
    }
    const bool periodic = grid.boundary == Boundary::Periodic;
    ax_ = build(grid.nx, grid.lx, grid.dx(), cx, periodic);
    ay_ = build(grid.ny, grid.ly, grid.dy(), cy, periodic);
}

void CoefficientBasis::evaluate(std::span<const double> controls, std::span<double> out) const
{
    if (controls.size() != static_cast<std::size_t>(cx_) * cy_ || out.size() != grid_.size()) {
        throw SizeMismatchError("coefficient control or output size mismatch");
    }
    // contract along x first: row[b][i] = sum_a wx(i,a) C[b][a]
    std::vector<double> rows(static_cast<std::size_t>(cy_) * grid_.nx, 0.0);
    for (int b = 0; b < cy_; ++b) {
        const double* C = controls.data() + static_cast<std::size_t>(b) * cx_;
        double* r = rows.data() + static_cast<std::size_t>(b) * grid_.nx;
        for (int i = 0; i < grid_.nx; ++i) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) {
                acc += ax_.w[i * 4 + k] * C[ax_.idx[i * 4 + k]];
            }
            r[i] = acc;
        }
    }
    for (int j = 0; j < grid_.ny; ++j) {
        double* o = out.data() + static_cast<std::size_t>(j) * grid_.nx;
        std::fill(o, o + grid_.nx, 0.0);
        for (int k = 0; k < 4; ++k) {
            const double w = ay_.w[j * 4 + k];
            const double* r = rows.data() + static_cast<std::size_t>(ay_.idx[j * 4 + k]) * grid_.nx;
            for (int i = 0; i < grid_.nx; ++i) {
                o[i] += w * r[i];
            }
        }
    }
}

void CoefficientBasis::transpose(std::span<const double> g, std::span<double> dcontrols) const
{
    if (dcontrols.size() != static_cast<std::size_t>(cx_) * cy_ || g.size() != grid_.size()) {
        throw SizeMismatchError("coefficient gradient size mismatch");
    }
    std::vector<double> rows(static_cast<std::size_t>(cy_) * grid_.nx, 0.0);
    for (int j = 0; j < grid_.ny; ++j) {
        const double* gj = g.data() + static_cast<std::size_t>(j) * grid_.nx;
        for (int k = 0; k < 4; ++k) {
            const double w = ay_.w[j * 4 + k];
            double* r = rows.data() + static_cast<std::size_t>(ay_.idx[j * 4 + k]) * grid_.nx;
            for (int i = 0; i < grid_.nx; ++i) {
                r[i] += w * gj[i];
            }
        }
    }
    for (int b = 0; b < cy_; ++b) {
        const double* r = rows.data() + static_cast<std::size_t>(b) * grid_.nx;
        double* D = dcontrols.data() + static_cast<std::size_t>(b) * cx_;
        for (int i = 0; i < grid_.nx; ++i) {
            for (int k = 0; k < 4; ++k) {
                D[ax_.idx[i * 4 + k]] += ax_.w[i * 4 + k] * r[i];
            }
        }
    }
}

std::vector<double> CoefficientBasis::fit(const Field& target) const
{
    if (target.grid() != grid_) {
        throw SizeMismatchError("fit target lives on a different grid");
    }
    auto dense = [](const Axis& ax, int n, int c) {
        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, c);
        for (int i = 0; i < n; ++i) {
            for (int k = 0; k < 4; ++k) {
                W(i, ax.idx[i * 4 + k]) += ax.w[i * 4 + k];
            }
        }
        return W;
    };
    const Eigen::MatrixXd Wx = dense(ax_, grid_.nx, cx_);
    const Eigen::MatrixXd Wy = dense(ay_, grid_.ny, cy_);
    Eigen::MatrixXd T(grid_.ny, grid_.nx);
    for (int j = 0; j < grid_.ny; ++j) {
        for (int i = 0; i < grid_.nx; ++i) {
            T(j, i) = target(i, j);
        }
    }
    // T ~ Wy C Wx^T
    const Eigen::MatrixXd A = Wy.colPivHouseholderQr().solve(T);                            // cy x nx
    const Eigen::MatrixXd C = Wx.colPivHouseholderQr().solve(A.transpose()).transpose(); // cy x cx
    std::vector<double> out(static_cast<std::size_t>(cx_) * cy_);
    for (int b = 0; b < cy_; ++b) {
        for (int a = 0; a < cx_; ++a) {
            out[static_cast<std::size_t>(b) * cx_ + a] = C(b, a);
        }
    }
    return out;
}

Field eval_coefficient(const CoefficientField& c, const Grid2D& grid)
{
    CoefficientBasis basis(grid, c.cx(), c.cy());
    Field out(grid);
    basis.evaluate(c.controls(), out.values());
    return out;
}

// ---------------------------------------------------------------- source

namespace {

constexpr double kSourceStep = (SourceModel::kHi - SourceModel::kLo) / (SourceModel::kNodes - 1);

struct Piece {
    int i;
    double t;
};

Piece locate(double u) noexcept
{
    const double s = (u - SourceModel::kLo) / kSourceStep;
    double fl = std::floor(s);
    if (!(fl >= 0.0)) {
        fl = 0.0;
    }
    const int i = static_cast<int>(std::min(fl, static_cast<double>(SourceModel::kNodes - 2)));
    return {i, s - i};
}

} // namespace

double SourceModel::operator()(double u) const noexcept
{
    const auto [i, t] = locate(u);
    const double* q = p_.data() + kNodes + 3 * i;
    return p_[i] * (1 - t) + p_[i + 1] * t + t * (1 - t) * (q[0] + t * (q[1] + t * q[2]));
}

double SourceModel::derivative(double u) const noexcept
{
    const auto [i, t] = locate(u);
    const double* q = p_.data() + kNodes + 3 * i;
    const double poly = q[0] + t * (q[1] + t * q[2]);
    const double dpoly = q[1] + 2 * t * q[2];
    return (p_[i + 1] - p_[i] + (1 - 2 * t) * poly + t * (1 - t) * dpoly) / kSourceStep;
}

void SourceModel::accumulate_gradient(double u, double scale, std::span<double> dparams) const noexcept
{
    const auto [i, t] = locate(u);
    dparams[i] += scale * (1 - t);
    dparams[i + 1] += scale * t;
    const double b = scale * t * (1 - t);
    double* q = dparams.data() + kNodes + 3 * i;
    q[0] += b;
    q[1] += b * t;
    q[2] += b * t * t;
}

void SourceModel::fit(const std::function<double(double)>& f, double lo, double hi, int samples)
{
    if (samples < kParams || !(hi > lo)) {
        throw SizeMismatchError("source fit needs at least " + std::to_string(kParams) + " samples on a proper interval");
    }
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(samples, kParams);
    Eigen::VectorXd y(samples);
    std::vector<double> row(kParams);
    for (int k = 0; k < samples; ++k) {
        const double u = lo + (hi - lo) * k / (samples - 1);
        std::fill(row.begin(), row.end(), 0.0);
        accumulate_gradient(u, 1.0, row);
        for (int c = 0; c < kParams; ++c) {
            A(k, c) = row[c];
        }
        y(k) = f(u);
    }
    // pieces outside [lo, hi] stay unconstrained; the minimum-norm solution keeps them at zero
    const Eigen::VectorXd x = A.completeOrthogonalDecomposition().solve(y);
    for (int c = 0; c < kParams; ++c) {
        p_[c] = x(c);
    }
}

// ---------------------------------------------------------------- config

std::string to_string(FilterMode m)
{
    switch (m) {
    case FilterMode::Constrained:
        return "constrained";
    case FilterMode::Frozen:
        return "frozen";
    case FilterMode::Freed:
        return "freed";
    }
    return "constrained";
}

FilterMode filter_mode_from_string(const std::string& s)
{
    if (s == "constrained") {
        return FilterMode::Constrained;
    }
    if (s == "frozen") {
        return FilterMode::Frozen;
    }
    if (s == "freed") {
        return FilterMode::Freed;
    }
    throw ConfigError("unknown mode '" + s + "' (expected constrained, frozen or freed)");
}

BlockConfig BlockConfig::linear_default() { return BlockConfig{}; }

BlockConfig BlockConfig::nonlinear_default()
{
    BlockConfig c;
    c.grid.boundary = Boundary::Dirichlet;
    c.max_order = 2;
    c.zeroth_order_term = false;
    c.source = true;
    return c;
}

void BlockConfig::validate() const
{
    try {
        grid.validate();
    } catch (const SizeMismatchError& e) {
        throw ConfigError(e.what());
    }
    if (filter_size < 3 || filter_size % 2 == 0) {
        throw ConfigError("filter_size must be odd and at least 3, got " + std::to_string(filter_size));
    }
    if (filter_size > grid.nx || filter_size > grid.ny) {
        throw ConfigError("filter larger than the grid");
    }
    if (max_order < 1 || max_order >= filter_size) {
        throw ConfigError("max_order must be in [1, filter_size), got " + std::to_string(max_order));
    }
    if (!(dt > 0.0)) {
        throw ConfigError("dt must be positive");
    }
    if (control_x < 3 || control_y < 3) {
        throw ConfigError("coefficient control grid must be at least 3x3");
    }
}

Json to_json(const BlockConfig& c)
{
    return Json{{"grid", grid_to_json(c.grid)},
                {"filter_size", c.filter_size},
                {"max_order", c.max_order},
                {"mode", to_string(c.mode)},
                {"zeroth_order_term", c.zeroth_order_term},
                {"source", c.source},
                {"dt", c.dt},
                {"control_x", c.control_x},
                {"control_y", c.control_y}};
}

BlockConfig block_config_from_json(const Json& j)
{
    BlockConfig c;
    try {
        if (j.contains("grid")) {
            c.grid = grid_from_json(j.at("grid"));
        }
        c.filter_size = j.value("filter_size", c.filter_size);
        c.max_order = j.value("max_order", c.max_order);
        c.mode = filter_mode_from_string(j.value("mode", to_string(c.mode)));
        c.zeroth_order_term = j.value("zeroth_order_term", c.zeroth_order_term);
        c.source = j.value("source", c.source);
        c.dt = j.value("dt", c.dt);
        c.control_x = j.value("control_x", c.control_x);
        c.control_y = j.value("control_y", c.control_y);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad block config: ") + e.what());
    }
    c.validate();
    return c;
}

std::vector<Order> term_orders(const BlockConfig& c)
{
    std::vector<Order> out;
    if (c.zeroth_order_term) {
        out.push_back({0, 0});
    }
    for (int s = 1; s <= c.max_order; ++s) {
        for (int j = 0; j <= s; ++j) {
            out.push_back({s - j, j});
        }
    }
    return out;
}

// ---------------------------------------------------------------- grads

void BlockGrad::zero()
{
    for (auto* group : {&dfilter, &dcoef}) {
        for (auto& v : *group) {
            std::fill(v.begin(), v.end(), 0.0);
        }
    }
    std::fill(dsource.begin(), dsource.end(), 0.0);
}

BlockGrad& BlockGrad::operator+=(const BlockGrad& o)
{
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] += b[i];
        }
    };
    for (std::size_t f = 0; f < dfilter.size(); ++f) {
        add(dfilter[f], o.dfilter[f]);
    }
    for (std::size_t t = 0; t < dcoef.size(); ++t) {
        add(dcoef[t], o.dcoef[t]);
    }
    add(dsource, o.dsource);
    return *this;
}

// ---------------------------------------------------------------- block

namespace {

ConstraintPattern pattern_for(FilterMode mode, Order order, bool is_d0, int n)
{
    const Order o = is_d0 ? Order{0, 0} : order;
    switch (mode) {
    case FilterMode::Frozen:
        return ConstraintPattern::frozen(o, n);
    case FilterMode::Freed:
        return ConstraintPattern::unconstrained(n);
    case FilterMode::Constrained:
        break;
    }
    return ConstraintPattern::derivative(o, n);
}

// Value each fixed entry takes; free entries keep `current`.
void impose(const ConstraintPattern& pat, MomentMatrix& m)
{
    for (int p = 0; p < pat.n(); ++p) {
        for (int s = 0; s < pat.n(); ++s) {
            if (const auto& e = pat.entry(p, s)) {
                m(p, s) = *e;
            }
        }
    }
}

std::vector<double>& scratch(int slot, std::size_t n)
{
    thread_local std::vector<double> bufs[4];
    auto& b = bufs[slot];
    if (b.size() < n) {
        b.resize(n);
    }
    return b;
}

void zero_ring(const Grid2D& g, std::span<double> v)
{
    if (g.boundary != Boundary::Dirichlet) {
        return;
    }
    std::fill(v.begin(), v.begin() + g.nx, 0.0);
    for (int j = 1; j < g.ny; ++j) {
        v[static_cast<std::size_t>(j) * g.nx] = 0.0;
    }
}

bool finite(std::span<const double> v)
{
    for (double x : v) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

std::atomic<bool> g_extrapolation_warned{false};

} // namespace

DeltaTBlock::DeltaTBlock(const BlockConfig& cfg)
    : cfg_(cfg), orders_(term_orders(cfg)), basis_((cfg.validate(), cfg.grid), cfg.control_x, cfg.control_y)
{
    const int n = cfg.filter_size;
    for (int f = 0; f < filter_count(); ++f) {
        const Order o = f == 0 ? Order{0, 0} : orders_[f - 1];
        patterns_.push_back(pattern_for(cfg.mode, o, f == 0, n));
        // frozen values for every filter: (order)-moment 1, rest 0
        MomentMatrix m(n);
        m(o.i, o.j) = 1.0;
        impose(patterns_.back(), m);
        moments_.push_back(m);
        filters_.emplace_back(n);
        stencils_.emplace_back(n);
    }
    for (int t = 0; t < term_count(); ++t) {
        scales_.push_back(derivative_scale(cfg.grid, orders_[t]));
        coefs_.emplace_back(cfg.control_x, cfg.control_y);
        coef_values_.emplace_back(cfg.grid);
    }
    if (cfg.source) {
        source_.emplace();
    }
    for (int f = 0; f < filter_count(); ++f) {
        refresh_filter(f);
    }
    refresh_layout();
}

void DeltaTBlock::refresh_layout()
{
    filter_off_.clear();
    int off = 0;
    for (const auto& p : patterns_) {
        filter_off_.push_back(off);
        off += p.free_count();
    }
    coef_off_ = off;
    off += term_count() * cfg_.control_x * cfg_.control_y;
    source_off_ = off;
    n_params_ = off + (source_ ? SourceModel::kParams : 0);
}

void DeltaTBlock::refresh_filter(int f)
{
    filters_[f] = filter_from_moments(moments_[f]);
    stencils_[f] = filters_[f].reversed();
}

void DeltaTBlock::refresh_coefficient(int t)
{
    basis_.evaluate(coefs_[t].controls(), coef_values_[t].values());
}

int DeltaTBlock::term_index(Order o) const
{
    for (int t = 0; t < term_count(); ++t) {
        if (orders_[t] == o) {
            return t;
        }
    }
    return -1;
}

int DeltaTBlock::coef_param_offset(int t) const
{
    if (t < 0 || t >= term_count()) {
        throw SizeMismatchError("no coefficient " + std::to_string(t));
    }
    return coef_off_ + t * cfg_.control_x * cfg_.control_y;
}

std::vector<double> DeltaTBlock::params() const
{
    std::vector<double> p(static_cast<std::size_t>(n_params_));
    for (int f = 0; f < filter_count(); ++f) {
        const auto v = free_values_of(patterns_[f], moments_[f]);
        std::copy(v.begin(), v.end(), p.begin() + filter_off_[f]);
    }
    for (int t = 0; t < term_count(); ++t) {
        const auto c = coefs_[t].controls();
        std::copy(c.begin(), c.end(), p.begin() + coef_param_offset(t));
    }
    if (source_) {
        const auto s = source_->params();
        std::copy(s.begin(), s.end(), p.begin() + source_off_);
    }
    return p;
}

void DeltaTBlock::set_params(std::span<const double> p)
{
    if (static_cast<int>(p.size()) != n_params_) {
        throw SizeMismatchError("block has " + std::to_string(n_params_) + " parameters, got " +
                                std::to_string(p.size()));
    }
    for (int f = 0; f < filter_count(); ++f) {
        const auto idx = patterns_[f].free_indices();
        if (idx.empty()) {
            continue;
        }
        for (std::size_t k = 0; k < idx.size(); ++k) {
            moments_[f].values()[static_cast<std::size_t>(idx[k])] = p[static_cast<std::size_t>(filter_off_[f]) + k];
        }
        refresh_filter(f);
    }
    for (int t = 0; t < term_count(); ++t) {
        const auto src = p.subspan(static_cast<std::size_t>(coef_param_offset(t)), coefs_[t].controls().size());
        std::copy(src.begin(), src.end(), coefs_[t].controls().begin());
        refresh_coefficient(t);
    }
    if (source_) {
        const auto src = p.subspan(static_cast<std::size_t>(source_off_), SourceModel::kParams);
        std::copy(src.begin(), src.end(), source_->params().begin());
    }
}

void DeltaTBlock::set_filter_moments(int f, const MomentMatrix& m, const ConstraintPattern& pattern)
{
    if (m.n() != cfg_.filter_size || pattern.n() != cfg_.filter_size) {
        throw SizeMismatchError("filter moments of the wrong size");
    }
    const auto bad = pattern.violations(m, 1e-12);
    if (!bad.empty()) {
        throw ConstraintError(filter_name(f) + ": moments violate the given pattern at " + to_string(bad.front()));
    }
    patterns_.at(f) = pattern;
    moments_.at(f) = m;
    impose(pattern, moments_[f]);
    refresh_filter(f);
    refresh_layout();
}

void DeltaTBlock::set_coefficient(int t, std::span<const double> controls)
{
    auto dst = coefs_.at(t).controls();
    if (controls.size() != dst.size()) {
        throw SizeMismatchError("coefficient control count mismatch");
    }
    std::copy(controls.begin(), controls.end(), dst.begin());
    refresh_coefficient(t);
}

void DeltaTBlock::set_source(const SourceModel& s)
{
    if (!source_) {
        throw ConfigError("block has no source term");
    }
    *source_ = s;
}

void DeltaTBlock::change_mode(FilterMode mode)
{
    cfg_.mode = mode;
    for (int f = 0; f < filter_count(); ++f) {
        const Order o = f == 0 ? Order{0, 0} : orders_[f - 1];
        patterns_[f] = pattern_for(mode, o, f == 0, cfg_.filter_size);
        impose(patterns_[f], moments_[f]);
        refresh_filter(f);
    }
    refresh_layout();
}

void DeltaTBlock::randomize(std::mt19937_64& rng, double coef_std, double filter_std)
{
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int t = 0; t < term_count(); ++t) {
        for (double& v : coefs_[t].controls()) {
            v = coef_std * nd(rng);
        }
        refresh_coefficient(t);
    }
    if (source_) {
        for (double& v : source_->params()) {
            v = coef_std * nd(rng);
        }
    }
    if (cfg_.mode == FilterMode::Freed) {
        for (int f = 0; f < filter_count(); ++f) {
            Filter q(cfg_.filter_size);
            for (double& w : q.weights()) {
                w = filter_std * nd(rng);
            }
            moments_[f] = moment_matrix(q);
            refresh_filter(f);
        }
    }
}

std::string DeltaTBlock::filter_name(int f) const
{
    return f == 0 ? std::string("D0") : "D" + to_string(orders_.at(f - 1));
}

Field DeltaTBlock::forward(const Field& u) const
{
    if (u.grid() != cfg_.grid) {
        throw SizeMismatchError("input field grid does not match the block grid");
    }
    Field out(cfg_.grid);
    forward(u.values(), out.values(), nullptr);
    return out;
}

void DeltaTBlock::forward(std::span<const double> u, std::span<double> out, BlockCache* cache) const
{
    const Grid2D& g = cfg_.grid;
    const std::size_t N = g.size();
    if (u.size() != N || out.size() != N) {
        throw SizeMismatchError("block forward size mismatch");
    }
    const kernels::Shape shape{g.nx, g.ny, g.boundary};
    if (cache) {
        cache->u.assign(u.begin(), u.end());
        cache->du.resize(orders_.size());
    }
    auto& acc = scratch(0, N);
    auto& tmp = scratch(1, N);
    std::fill(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(N), 0.0);
    kernels::convolve(u, shape, stencils_[0], out);
    for (int t = 0; t < term_count(); ++t) {
        std::span<double> d;
        if (cache) {
            cache->du[t].resize(N);
            d = cache->du[t];
        } else {
            d = std::span<double>(tmp.data(), N);
        }
        kernels::convolve(u, shape, stencils_[t + 1], d);
        const double sc = scales_[t];
        const double* c = coef_values_[t].values().data();
        for (std::size_t k = 0; k < N; ++k) {
            d[k] *= sc;
            acc[k] += c[k] * d[k];
        }
    }
    if (source_) {
        bool outside = false;
        for (std::size_t k = 0; k < N; ++k) {
            acc[k] += (*source_)(u[k]);
            outside = outside || std::abs(u[k]) > SourceModel::kHi;
        }
        if (outside && !g_extrapolation_warned.exchange(true)) {
            spdlog::warn("source model evaluated outside [{}, {}]; extrapolating the end pieces", SourceModel::kLo,
                         SourceModel::kHi);
        }
    }
    const double dt = cfg_.dt;
    for (std::size_t k = 0; k < N; ++k) {
        out[k] += dt * acc[k];
    }
    zero_ring(g, out);
    if (finite(out)) {
        return;
    }
    // name the first offending term
    std::string culprit = "output";
    if (!finite(u)) {
        culprit = "input";
    } else {
        kernels::convolve(u, shape, stencils_[0], std::span<double>(tmp.data(), N));
        if (!finite(std::span<const double>(tmp.data(), N))) {
            culprit = "D0";
        } else {
            for (int t = 0; t < term_count(); ++t) {
                kernels::convolve(u, shape, stencils_[t + 1], std::span<double>(tmp.data(), N));
                bool bad = false;
                for (std::size_t k = 0; k < N && !bad; ++k) {
                    bad = !std::isfinite(coef_values_[t].values()[k] * tmp[k] * scales_[t]);
                }
                if (bad) {
                    culprit = "c" + to_string(orders_[t]) + "*" + filter_name(t + 1);
                    break;
                }
                if (t + 1 == term_count() && source_) {
                    culprit = "source";
                }
            }
        }
    }
    throw BlowUpError("non-finite block output from term " + culprit, 0);
}

void DeltaTBlock::backward(const BlockCache& cache, std::span<const double> g, std::span<double> g_in,
                           BlockGrad& grad) const
{
    const Grid2D& grid = cfg_.grid;
    const std::size_t N = grid.size();
    const kernels::Shape shape{grid.nx, grid.ny, grid.boundary};
    auto& gg_buf = scratch(2, N);
    auto& h_buf = scratch(3, N);
    const std::span<double> gg(gg_buf.data(), N);
    const std::span<double> h(h_buf.data(), N);
    std::copy(g.begin(), g.end(), gg.begin());
    zero_ring(grid, gg);
    const std::span<const double> u(cache.u);

    kernels::convolve_adjoint(gg, shape, stencils_[0], g_in, false);
    kernels::filter_gradient(gg, u, shape, stencils_[0], 1.0, grad.dfilter[0]);
    const double dt = cfg_.dt;
    for (int t = 0; t < term_count(); ++t) {
        const double* c = coef_values_[t].values().data();
        const double* d = cache.du[t].data();
        double* dc = grad.dcoef[t].data();
        const double sc = dt * scales_[t];
        for (std::size_t k = 0; k < N; ++k) {
            h[k] = sc * c[k] * gg[k];
            dc[k] += dt * gg[k] * d[k];
        }
        kernels::convolve_adjoint(h, shape, stencils_[t + 1], g_in, true);
        kernels::filter_gradient(h, u, shape, stencils_[t + 1], 1.0, grad.dfilter[t + 1]);
    }
    if (source_) {
        for (std::size_t k = 0; k < N; ++k) {
            const double w = dt * gg[k];
            if (w != 0.0) {
                g_in[k] += w * source_->derivative(u[k]);
                source_->accumulate_gradient(u[k], w, grad.dsource);
            }
        }
    }
}

BlockGrad DeltaTBlock::make_grad() const
{
    BlockGrad g;
    const std::size_t nn = static_cast<std::size_t>(cfg_.filter_size) * cfg_.filter_size;
    g.dfilter.assign(static_cast<std::size_t>(filter_count()), std::vector<double>(nn, 0.0));
    g.dcoef.assign(static_cast<std::size_t>(term_count()), std::vector<double>(cfg_.grid.size(), 0.0));
    g.dsource.assign(source_ ? SourceModel::kParams : 0, 0.0);
    return g;
}

void DeltaTBlock::finalize(const BlockGrad& grad, std::span<double> dparams) const
{
    if (static_cast<int>(dparams.size()) != n_params_) {
        throw SizeMismatchError("gradient vector has the wrong size");
    }
    const std::size_t nn = static_cast<std::size_t>(cfg_.filter_size) * cfg_.filter_size;
    std::vector<double> dq(nn);
    std::vector<double> dfree;
    for (int f = 0; f < filter_count(); ++f) {
        const int nf = patterns_[f].free_count();
        if (nf == 0) {
            continue;
        }
        // stencil index k holds the weight of filter index nn-1-k
        for (std::size_t k = 0; k < nn; ++k) {
            dq[nn - 1 - k] = grad.dfilter[f][k];
        }
        dfree.assign(static_cast<std::size_t>(nf), 0.0);
        pullback_free(patterns_[f], dq, dfree);
        for (int k = 0; k < nf; ++k) {
            dparams[static_cast<std::size_t>(filter_off_[f] + k)] += dfree[static_cast<std::size_t>(k)];
        }
    }
    for (int t = 0; t < term_count(); ++t) {
        basis_.transpose(grad.dcoef[t], dparams.subspan(static_cast<std::size_t>(coef_param_offset(t)),
                                                        static_cast<std::size_t>(cfg_.control_x * cfg_.control_y)));
    }
    if (source_) {
        for (int k = 0; k < SourceModel::kParams; ++k) {
            dparams[static_cast<std::size_t>(source_off_ + k)] += grad.dsource[static_cast<std::size_t>(k)];
        }
    }
}

// ---------------------------------------------------------------- net

Field PDENet::forward(const Field& u0, std::vector<Field>* states) const
{
    if (depth < 1) {
        throw SizeMismatchError("network depth must be at least 1");
    }
    if (u0.grid() != block.config().grid) {
        throw SizeMismatchError("input field grid does not match the network grid");
    }
    if (states) {
        states->clear();
        states->push_back(u0);
    }
    Field u = u0;
    Field next(u0.grid());
    for (int k = 1; k <= depth; ++k) {
        try {
            block.forward(u.values(), next.values(), nullptr);
        } catch (const BlowUpError& e) {
            throw BlowUpError("block " + std::to_string(k) + ": " + e.what(), k);
        }
        std::swap(u, next);
        if (states) {
            states->push_back(u);
        }
    }
    return u;
}

Rollout rollout(const DeltaTBlock& block, const Field& u0, int steps)
{
    if (steps < 0) {
        throw SizeMismatchError("rollout needs steps >= 0");
    }
    Rollout r;
    r.traj.dt = block.config().dt;
    r.traj.fields.push_back(u0);
    Field next(u0.grid());
    for (int s = 1; s <= steps; ++s) {
        try {
            block.forward(r.traj.fields.back().values(), next.values(), nullptr);
        } catch (const BlowUpError& e) {
            r.blew_up = true;
            r.blowup_step = s;
            r.message = "step " + std::to_string(s) + ": " + e.what();
            break;
        }
        r.traj.fields.push_back(next);
    }
    return r;
}

DeltaTBlock true_linear_block(BlockConfig cfg, const LinearPde& pde)
{
    cfg.mode = FilterMode::Frozen;
    cfg.source = false;
    if (cfg.max_order < 2) {
        throw ConfigError("the convection-diffusion model needs max_order >= 2");
    }
    DeltaTBlock b(cfg);
    auto set = [&](Order o, const std::function<double(double, double)>& f) {
        const int t = b.term_index(o);
        b.set_coefficient(t, b.basis().fit(Field::sample(cfg.grid, f)));
    };
    set({1, 0}, pde.a ? pde.a : [](double, double) { return 0.0; });
    set({0, 1}, pde.b ? pde.b : [](double, double) { return 0.0; });
    set({2, 0}, [c = pde.c](double, double) { return c; });
    set({0, 2}, [d = pde.d](double, double) { return d; });
    return b;
}

DeltaTBlock true_nonlinear_block(BlockConfig cfg, double c, double amplitude)
{
    cfg.mode = FilterMode::Frozen;
    cfg.source = true;
    if (cfg.max_order < 2) {
        throw ConfigError("the diffusion model needs max_order >= 2");
    }
    DeltaTBlock b(cfg);
    for (Order o : {Order{2, 0}, Order{0, 2}}) {
        b.set_coefficient(b.term_index(o), b.basis().fit(Field::sample(cfg.grid, [c](double, double) { return c; })));
    }
    SourceModel s;
    s.fit([amplitude](double u) { return amplitude * std::sin(u); }, SourceModel::kLo, SourceModel::kHi, 2000);
    b.set_source(s);
    return b;
}

// ---------------------------------------------------------------- json

Json to_json(const DeltaTBlock& b)
{
    const int n = b.config().filter_size;
    Json filters = Json::array();
    for (int f = 0; f < b.filter_count(); ++f) {
        const Order o = f == 0 ? Order{0, 0} : b.orders()[f - 1];
        Json fixed = Json::array();
        Json moments = Json::array();
        const MomentMatrix& m = b.moments(f);
        for (int p = 0; p < n; ++p) {
            for (int s = 0; s < n; ++s) {
                const auto& e = b.pattern(f).entry(p, s);
                fixed.push_back(e ? Json(*e) : Json(nullptr));
            }
        }
        for (double v : m.values()) {
            moments.push_back(v);
        }
        filters.push_back(
            Json{{"name", b.filter_name(f)}, {"order", {o.i, o.j}}, {"fixed", fixed}, {"moments", moments}});
    }
    Json coefs = Json::array();
    for (int t = 0; t < b.term_count(); ++t) {
        const auto c = b.coefficient(t).controls();
        coefs.push_back(Json{{"order", {b.orders()[t].i, b.orders()[t].j}},
                             {"controls", std::vector<double>(c.begin(), c.end())}});
    }
    Json j{{"config", to_json(b.config())}, {"filters", filters}, {"coefficients", coefs}, {"params", b.params()}};
    if (b.source()) {
        const auto p = b.source()->params();
        j["source"] = Json{{"lo", SourceModel::kLo},
                           {"hi", SourceModel::kHi},
                           {"nodes", SourceModel::kNodes},
                           {"params", std::vector<double>(p.begin(), p.end())}};
    }
    return j;
}

DeltaTBlock block_from_json(const Json& j)
{
    try {
        DeltaTBlock b(block_config_from_json(j.at("config")));
        const int n = b.config().filter_size;
        const auto& filters = j.at("filters");
        if (static_cast<int>(filters.size()) != b.filter_count()) {
            throw ConfigError("checkpoint has " + std::to_string(filters.size()) + " filters, config implies " +
                              std::to_string(b.filter_count()));
        }
        for (int f = 0; f < b.filter_count(); ++f) {
            const auto& fixed = filters[static_cast<std::size_t>(f)].at("fixed");
            if (static_cast<int>(fixed.size()) != n * n) {
                throw ConfigError("filter pattern of the wrong size");
            }
            const auto mv = filters[static_cast<std::size_t>(f)].at("moments").get<std::vector<double>>();
            if (static_cast<int>(mv.size()) != n * n) {
                throw ConfigError("filter moments of the wrong size");
            }
            ConstraintPattern pat(n);
            MomentMatrix m(n);
            std::copy(mv.begin(), mv.end(), m.values().begin());
            for (int p = 0; p < n; ++p) {
                for (int s = 0; s < n; ++s) {
                    const auto& e = fixed[static_cast<std::size_t>(p * n + s)];
                    if (!e.is_null()) {
                        pat.fix(p, s, e.get<double>());
                    }
                }
            }
            b.set_filter_moments(f, m, pat);
        }
        const auto params = j.at("params").get<std::vector<double>>();
        b.set_params(params);
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad checkpoint block: ") + e.what());
    } catch (const SizeMismatchError& e) {
        throw ConfigError(std::string("bad checkpoint block: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const PDENet& net, const Json& metadata)
{
    Json j{{"format", "pdenet-checkpoint"},
           {"version", 1},
           {"depth", net.depth},
           {"block", to_json(net.block)},
           {"metadata", metadata}};
    write_json_file(path, j);
}

PDENet load_checkpoint(const std::filesystem::path& path, Json* metadata)
{
    const Json j = read_json_file(path);
    if (j.value("format", std::string()) != "pdenet-checkpoint") {
        throw ConfigError(path.string() + " is not a PDE-Net checkpoint");
    }
    if (j.value("version", 0) != 1) {
        throw ConfigError(path.string() + ": unsupported checkpoint version");
    }
    PDENet net(block_from_json(j.at("block")), j.value("depth", 1));
    if (metadata) {
        *metadata = j.value("metadata", Json::object());
    }
    return net;
}

} // namespace pdenet
