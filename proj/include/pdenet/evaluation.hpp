#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pdenet/data_gen.hpp"
#include "pdenet/moments.hpp"
#include "pdenet/pde_net.hpp"

namespace pdenet {

/// ||u_pred - u||^2 / ||u - mean(u)||^2 with plain sums over the nodes.
/// Throws SizeMismatchError on different grids and DegenerateFieldError when
/// u is constant.
double normalized_error(const Field& u, const Field& u_pred);

/// q-quantile with linear interpolation between order statistics. +inf
/// entries sort last and propagate. Throws SizeMismatchError on empty input.
double percentile(std::vector<double> values, double q);

struct ErrorCurve {
    /// k * dt for k = 1..horizon
    std::vector<double> times;
    /// errors[s][k]: sample s at times[k]; +inf from the blow-up step on
    std::vector<std::vector<double>> errors;
    /// per sample, first step that blew up, or -1
    std::vector<int> blowup_step;
    std::vector<double> p25;
    std::vector<double> median;
    std::vector<double> p75;

    /// Recomputes the percentile bands from errors.
    void summarize();
    [[nodiscard]] int samples() const noexcept { return static_cast<int>(errors.size()); }
    [[nodiscard]] int blowups() const noexcept;
};

/// Noisy initial fields and reference solutions from them.
struct TestSet {
    /// noisy u0 on the net grid
    std::vector<Field> initial;
    /// horizon + 1 frames from the solver, starting at initial
    std::vector<Trajectory> reference;
    double dt = 0.01;

    [[nodiscard]] int horizon() const noexcept { return reference.empty() ? 0 : reference.front().frames() - 1; }
};

/// n_test initial conditions drawn from spec.init, noise added once at t = 0
/// (spec.noise_level, on the solver grid), then solved for horizon frames.
/// Sample i uses its own stream from (seed, i).
TestSet make_test_set(const DataSpec& spec, int n_test, int horizon, std::uint64_t seed);

/// Rolls the block out from every initial field of the set and scores each
/// step against the reference.
ErrorCurve prediction_error_study(const DeltaTBlock& block, const TestSet& set);
ErrorCurve prediction_error_study(const DeltaTBlock& block, const DataSpec& spec, int n_test, int horizon,
                                  std::uint64_t seed);

/// prediction_error_study with the initial conditions' highest frequency set to n_max.
ErrorCurve generalization_study(const DeltaTBlock& block, DataSpec spec, int n_max, int n_test, int horizon,
                                std::uint64_t seed);

/// True coefficient of each term; terms not listed are zero.
struct CoefficientTruth {
    std::vector<std::pair<Order, std::function<double(double, double)>>> terms;

    static CoefficientTruth linear(const LinearPde& pde = LinearPde::standard());
    static CoefficientTruth nonlinear(double c = 0.3);
};

struct CoefficientStat {
    Order order{};
    /// false for terms whose true coefficient is zero
    bool present = false;
    /// ||learned - true|| / ||true||; for absent terms ||learned|| over the
    /// norm of the largest true coefficient field
    double rel_error = 0.0;
    double learned_mean = 0.0;
    double learned_mean_abs = 0.0;
    double learned_max_abs = 0.0;
    double true_mean = 0.0;
    double true_max_abs = 0.0;
};

struct FilterIdentity {
    std::string name;
    /// (0,0) for D0
    Order nominal{};
    SumRuleOrder detected;
    bool matches = false;
};

struct CoefficientReport {
    std::vector<CoefficientStat> terms;
    /// mean rel_error over all terms
    double aggregate = 0.0;
    std::vector<FilterIdentity> filters;
    /// every filter shows the sum rules of its nominal order, so the learned
    /// coefficients can be read as the PDE's
    bool identifiable = false;
};

/// Sum-rule orders of every filter of the block against their nominal orders.
std::vector<FilterIdentity> filter_identities(const DeltaTBlock& block, double tol = 1e-8);

CoefficientReport coefficient_error(const DeltaTBlock& block, const CoefficientTruth& truth);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;

    [[nodiscard]] double width() const noexcept { return (hi - lo) / static_cast<double>(counts.size()); }
};

/// Values outside [lo, hi] go to the end bins.
Histogram make_histogram(std::span<const double> values, double lo, double hi, int bins);

struct SourceComparison {
    std::vector<double> u;
    std::vector<double> truth;
    std::vector<double> learned;
    Histogram histogram;
    /// 5th and 95th percentiles of the training values of u
    double u_p05 = 0.0;
    double u_p95 = 0.0;
    /// max |learned - truth| over the whole table, and over [u_p05, u_p95]
    double max_error = 0.0;
    double max_error_central = 0.0;
};

/// Spread of the values of u seen in training.
struct ValueSummary {
    std::size_t count = 0;
    double p05 = 0.0;
    double p95 = 0.0;
    /// over the source interval [-30, 30]
    Histogram histogram;
};

/// Throws ConfigError on empty input.
ValueSummary summarize_values(std::span<const double> values, int bins = 60);

/// amplitude * sin(u) against the block's source on `points` values of
/// [-30, 30]. Throws ConfigError when the block has no source term.
SourceComparison source_comparison(const DeltaTBlock& block, const ValueSummary& seen, double amplitude = 15.0,
                                   int points = 601);
SourceComparison source_comparison(const DeltaTBlock& block, std::span<const double> training_u,
                                   double amplitude = 15.0, int points = 601, int bins = 60);

void write_error_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve);
/// One column per sample.
void write_error_samples_csv(const std::filesystem::path& path, const ErrorCurve& curve);
void write_coefficient_csv(const std::filesystem::path& path, const CoefficientReport& report);
void write_source_csv(const std::filesystem::path& path, const SourceComparison& sc);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);

/// Binary 8-bit PGM, y increasing upwards, values mapped linearly from
/// [lo, hi] to [0, 255] and clamped.
void write_pgm(const std::filesystem::path& path, const Field& u, double lo, double hi);
/// Scaled to the field's own range.
void write_pgm(const std::filesystem::path& path, const Field& u);

} // namespace pdenet
