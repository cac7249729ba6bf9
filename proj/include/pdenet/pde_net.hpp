#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pdenet/data_gen.hpp"
#include "pdenet/field.hpp"
#include "pdenet/filter.hpp"
#include "pdenet/json_io.hpp"
#include "pdenet/moments.hpp"

namespace pdenet {

/// Blending weights from a control grid to the nodes of a Grid2D.
///
/// Between control nodes m and m+1 the value is (1-t) P_m + t P_{m+1}, where
/// P_m is the quadratic through nodes m-1, m, m+1. The result is C^1,
/// reproduces quadratics and has weights summing to one. Periodic grids wrap
/// the control nodes (spacing lx/C); otherwise nodes span [0, lx] with
/// spacing lx/(C-1) and the two end intervals use a single quadratic.
class CoefficientBasis {
  public:
    CoefficientBasis(const Grid2D& grid, int cx, int cy);

    [[nodiscard]] int cx() const noexcept { return cx_; }
    [[nodiscard]] int cy() const noexcept { return cy_; }
    [[nodiscard]] const Grid2D& grid() const noexcept { return grid_; }

    /// controls indexed b*cx + a (a along x).
    void evaluate(std::span<const double> controls, std::span<double> out) const;
    /// dcontrols += W^T g.
    void transpose(std::span<const double> g, std::span<double> dcontrols) const;
    /// Least-squares control values for a target sampled on the grid.
    [[nodiscard]] std::vector<double> fit(const Field& target) const;

  private:
    struct Axis {
        // four (index, weight) taps per node
        std::vector<int> idx;
        std::vector<double> w;
    };
    static Axis build(int n, double len, double step_of_node, int c, bool periodic);

    Grid2D grid_;
    int cx_;
    int cy_;
    Axis ax_;
    Axis ay_;
};

/// Coefficient function given by values on a cx x cy control grid.
class CoefficientField {
  public:
    CoefficientField() = default;
    CoefficientField(int cx, int cy) : cx_(cx), cy_(cy), controls_(static_cast<std::size_t>(cx) * cy, 0.0) {}

    [[nodiscard]] int cx() const noexcept { return cx_; }
    [[nodiscard]] int cy() const noexcept { return cy_; }
    [[nodiscard]] std::span<double> controls() noexcept { return controls_; }
    [[nodiscard]] std::span<const double> controls() const noexcept { return controls_; }

  private:
    int cx_ = 0;
    int cy_ = 0;
    std::vector<double> controls_;
};

Field eval_coefficient(const CoefficientField& c, const Grid2D& grid);

/// Piecewise quartic on 40 regular nodes over [-30, 30]. On piece i with local
/// coordinate t in [0,1]:
///   v_i (1-t) + v_{i+1} t + t(1-t)(alpha_i + beta_i t + gamma_i t^2),
/// continuous at the nodes. Parameters: the 40 node values, then
/// (alpha, beta, gamma) per piece. Outside the interval the end piece is
/// extrapolated.
class SourceModel {
  public:
    static constexpr int kNodes = 40;
    static constexpr double kLo = -30.0;
    static constexpr double kHi = 30.0;
    static constexpr int kParams = kNodes + 3 * (kNodes - 1);

    SourceModel() : p_(kParams, 0.0) {}

    [[nodiscard]] std::span<double> params() noexcept { return p_; }
    [[nodiscard]] std::span<const double> params() const noexcept { return p_; }

    [[nodiscard]] double operator()(double u) const noexcept;
    [[nodiscard]] double derivative(double u) const noexcept;
    /// dparams += scale * d(value at u)/d(params).
    void accumulate_gradient(double u, double scale, std::span<double> dparams) const noexcept;

    /// Least-squares fit to f sampled at `samples` evenly spaced points of [lo, hi].
    void fit(const std::function<double(double)>& f, double lo, double hi, int samples);

  private:
    std::vector<double> p_;
};

enum class FilterMode { Constrained, Frozen, Freed };

std::string to_string(FilterMode m);
FilterMode filter_mode_from_string(const std::string& s);

struct BlockConfig {
    Grid2D grid{};
    int filter_size = 7;
    int max_order = 4;
    FilterMode mode = FilterMode::Constrained;
    /// c00 * D00 u with its own averaging filter.
    bool zeroth_order_term = true;
    bool source = false;
    double dt = 0.01;
    int control_x = 7;
    int control_y = 7;

    static BlockConfig linear_default();
    static BlockConfig nonlinear_default();
    /// Throws ConfigError.
    void validate() const;
};

Json to_json(const BlockConfig& c);
BlockConfig block_config_from_json(const Json& j);

/// Derivative orders of the terms of F, ordered by total order, then (s,0),
/// (s-1,1), ..., (0,s).
std::vector<Order> term_orders(const BlockConfig& c);

/// Per-sample intermediates kept by forward for the adjoint pass.
struct BlockCache {
    std::vector<double> u;
    /// scaled derivative approximations D_t u, one field per term
    std::vector<std::vector<double>> du;
};

/// Gradient accumulator in the block's natural coordinates: filter weights
/// (reversed-stencil layout, per filter), coefficient values on the grid (per term) and
/// source parameters. Converted to parameter space by DeltaTBlock::finalize.
struct BlockGrad {
    std::vector<std::vector<double>> dfilter;
    std::vector<std::vector<double>> dcoef;
    std::vector<double> dsource;

    void zero();
    BlockGrad& operator+=(const BlockGrad& o);
};

/// One forward-Euler step of the learned dynamics:
///   u~ = D0 u + dt * (sum_t c_t * (D_t u) + source(u)),
/// with D u = sum_k q[k] u[x+k] / (dx^i dy^j). On Dirichlet grids the output
/// is zero on the boundary ring.
///
/// Filters are indexed 0 (D0) then 1..T (terms); coefficients 0..T-1.
/// The flat parameter vector holds, in order, the free moments of every
/// filter, the control values of every coefficient field and the source
/// parameters.
class DeltaTBlock {
  public:
    explicit DeltaTBlock(const BlockConfig& cfg);

    [[nodiscard]] const BlockConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const std::vector<Order>& orders() const noexcept { return orders_; }
    [[nodiscard]] int term_count() const noexcept { return static_cast<int>(orders_.size()); }
    [[nodiscard]] int filter_count() const noexcept { return term_count() + 1; }

    [[nodiscard]] const ConstraintPattern& pattern(int f) const { return patterns_.at(f); }
    [[nodiscard]] const Filter& filter(int f) const { return filters_.at(f); }
    [[nodiscard]] const MomentMatrix& moments(int f) const { return moments_.at(f); }
    [[nodiscard]] const CoefficientField& coefficient(int t) const { return coefs_.at(t); }
    [[nodiscard]] const Field& coefficient_values(int t) const { return coef_values_.at(t); }
    [[nodiscard]] const std::optional<SourceModel>& source() const noexcept { return source_; }
    [[nodiscard]] const CoefficientBasis& basis() const noexcept { return basis_; }
    /// Index of the term with this order, or -1.
    [[nodiscard]] int term_index(Order o) const;

    [[nodiscard]] int param_count() const noexcept { return n_params_; }
    [[nodiscard]] int filter_param_offset(int f) const { return filter_off_.at(f); }
    [[nodiscard]] int filter_param_count() const noexcept { return coef_off_; }
    [[nodiscard]] int coef_param_offset(int t) const;
    [[nodiscard]] int source_param_offset() const noexcept { return source_off_; }

    [[nodiscard]] std::vector<double> params() const;
    /// Rebuilds filters from the free moments and re-evaluates coefficient fields.
    void set_params(std::span<const double> p);

    /// Direct setters, used for known models and checkpoints.
    void set_filter_moments(int f, const MomentMatrix& m, const ConstraintPattern& pattern);
    void set_coefficient(int t, std::span<const double> controls);
    void set_source(const SourceModel& s);

    /// Switches every filter to the patterns of `mode`, keeping current moments
    /// as the starting values of the newly free entries.
    void change_mode(FilterMode mode);

    /// Draws coefficient controls and source parameters from N(0, coef_std^2);
    /// in Freed mode also every filter weight from N(0, filter_std^2).
    void randomize(std::mt19937_64& rng, double coef_std, double filter_std);

    Field forward(const Field& u) const;
    /// out must not alias u. Throws BlowUpError naming the first non-finite term.
    void forward(std::span<const double> u, std::span<double> out, BlockCache* cache) const;
    /// g: dL/d(out). g_in receives dL/du (overwritten); grad accumulates.
    void backward(const BlockCache& cache, std::span<const double> g, std::span<double> g_in,
                  BlockGrad& grad) const;

    [[nodiscard]] BlockGrad make_grad() const;
    /// Adds the parameter-space image of grad to dparams.
    void finalize(const BlockGrad& grad, std::span<double> dparams) const;

    /// Human-readable name of filter f, e.g. "D0" or "D(1,0)".
    [[nodiscard]] std::string filter_name(int f) const;

  private:
    void refresh_layout();
    void refresh_filter(int f);
    void refresh_coefficient(int t);

    BlockConfig cfg_;
    std::vector<Order> orders_;
    CoefficientBasis basis_;
    std::vector<ConstraintPattern> patterns_;
    std::vector<MomentMatrix> moments_;
    std::vector<Filter> filters_;
    std::vector<Filter> stencils_; // filters reversed, fed to the convolution kernels
    std::vector<double> scales_;   // 1/(dx^i dy^j) per term
    std::vector<CoefficientField> coefs_;
    std::vector<Field> coef_values_;
    std::optional<SourceModel> source_;
    std::vector<int> filter_off_;
    int coef_off_ = 0;
    int source_off_ = 0;
    int n_params_ = 0;
};

/// depth compositions of one shared block.
struct PDENet {
    DeltaTBlock block;
    int depth = 1;

    explicit PDENet(const BlockConfig& cfg, int depth = 1) : block(cfg), depth(depth) {}
    explicit PDENet(DeltaTBlock b, int depth = 1) : block(std::move(b)), depth(depth) {}

    /// Final state; intermediates (depth+1 states including u0) when requested.
    Field forward(const Field& u0, std::vector<Field>* states = nullptr) const;
};

struct Rollout {
    Trajectory traj;
    bool blew_up = false;
    int blowup_step = -1;
    std::string message;
};

/// steps applications of the shared block, recording every state. Stops at
/// the first blow-up.
Rollout rollout(const DeltaTBlock& block, const Field& u0, int steps);

/// Frozen filters with coefficients fitted to the generating equation:
/// the linear convection-diffusion problem or the nonlinear diffusion with
/// 15 sin(u). Coefficients are least-squares fits on the control grid.
DeltaTBlock true_linear_block(BlockConfig cfg, const LinearPde& pde = LinearPde::standard());
DeltaTBlock true_nonlinear_block(BlockConfig cfg, double c = 0.3, double amplitude = 15.0);

Json to_json(const DeltaTBlock& b);
DeltaTBlock block_from_json(const Json& j);

/// Versioned checkpoint: block parameters, config and depth, plus free-form metadata.
void save_checkpoint(const std::filesystem::path& path, const PDENet& net, const Json& metadata = Json::object());
PDENet load_checkpoint(const std::filesystem::path& path, Json* metadata = nullptr);

} // namespace pdenet
