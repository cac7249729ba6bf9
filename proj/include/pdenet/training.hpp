#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pdenet/data_gen.hpp"
#include "pdenet/json_io.hpp"
#include "pdenet/lbfgs.hpp"
#include "pdenet/pde_net.hpp"

namespace pdenet {

/// (u(t_i), u(t_{i+n})) for a net of depth n.
struct Pair {
    Field input;
    Field label;
};

enum class PairOffsets {
    /// every i in [0, frames-1-n] of each trajectory
    All,
    /// one uniformly drawn i per trajectory
    Random,
};

std::string to_string(PairOffsets o);
PairOffsets pair_offsets_from_string(const std::string& s);

struct TrainConfig {
    int batch_size = 28;
    int max_depth = 20;
    PairOffsets offsets = PairOffsets::All;
    LbfgsOptions lbfgs{};
    /// L-BFGS iterations for the warm-up stage; 0 uses lbfgs.max_iterations.
    int warmup_iterations = 0;
    /// Std of the Gaussian init of coefficient controls and source parameters.
    double init_std = 0.01;
    /// Std of the Gaussian init of filter weights in Freed mode.
    double freed_filter_std = 0.05;
    double blowup_penalty = 1e10;
    /// Pairs per deterministic reduction chunk.
    int chunk = 8;
    /// Random probes for the diagonal preconditioner of each stage; 0 turns
    /// preconditioning off.
    int curvature_probes = 8;
    /// Diagonal entries below curvature_floor * max are raised to it.
    double curvature_floor = 1e-10;
    std::uint64_t seed = 0;

    void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

struct LossResult {
    double loss = 0.0;
    bool blew_up = false;
};

/// Sum over pairs of ||net^depth(input) - label||_2^2; a blow-up in any pair
/// returns the penalty (and a zero gradient) instead.
LossResult batch_loss(const DeltaTBlock& block, std::span<const Pair> batch, int depth, double penalty = 1e10);

/// Loss and its exact gradient w.r.t. block.params(), accumulated in fixed
/// chunks of `chunk` pairs and summed in chunk order, so the result does not
/// depend on the thread count.
LossResult batch_loss_grad(const DeltaTBlock& block, std::span<const Pair> batch, int depth, std::span<double> grad,
                           double penalty = 1e10, int chunk = 8);

/// Estimate of diag(J^T J), J the Jacobian of all net outputs w.r.t. the
/// parameters, from `probes` reverse passes with random +-1 cotangents.
std::vector<double> gauss_newton_diagonal(const DeltaTBlock& block, std::span<const Pair> batch, int depth,
                                          int probes, std::uint64_t seed, int chunk = 8);

/// Training pairs, one call per optimization stage.
class PairSource {
  public:
    virtual ~PairSource() = default;
    /// stage 0 is the warm-up, stage d >= 1 trains depth d.
    virtual std::vector<Pair> pairs(int stage, int depth) = 0;
    /// Number of frames available per trajectory.
    [[nodiscard]] virtual int frames() const = 0;
};

/// Fresh noisy trajectories for every stage, generated on demand: stage s uses
/// samples [s*batch_size, (s+1)*batch_size) of the dataset (spec, seed).
class OnTheFlySource : public PairSource {
  public:
    OnTheFlySource(DataSpec spec, std::uint64_t seed, int batch_size, PairOffsets offsets);
    std::vector<Pair> pairs(int stage, int depth) override;
    [[nodiscard]] int frames() const override;
    /// Every value of u seen in the training inputs so far.
    [[nodiscard]] const std::vector<double>& seen_values() const noexcept { return seen_; }

  private:
    DataSpec spec_;
    std::uint64_t seed_;
    int batch_size_;
    PairOffsets offsets_;
    std::vector<double> seen_;
};

/// Trajectories read from disk, used in turn: stage s takes batch_size of them
/// starting at s*batch_size (wrapping around).
class StoredSource : public PairSource {
  public:
    StoredSource(std::vector<Trajectory> trajs, int batch_size, PairOffsets offsets, std::uint64_t seed);
    std::vector<Pair> pairs(int stage, int depth) override;
    [[nodiscard]] int frames() const override;

  private:
    std::vector<Trajectory> trajs_;
    int batch_size_;
    PairOffsets offsets_;
    std::uint64_t seed_;
};

/// Pairs from one trajectory set, as the sources build them.
std::vector<Pair> make_pairs(std::span<const Trajectory> trajs, int depth, PairOffsets offsets, std::mt19937_64& rng);

struct MetricRow {
    /// 0 for the warm-up
    int depth = 0;
    int iteration = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double wall_seconds = 0.0;
};

struct StageResult {
    /// 0 for the warm-up
    int depth = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
    int iterations = 0;
    bool blew_up = false;
    /// Best-so-far loss after each accepted iterate.
    std::vector<double> best_loss;
    std::vector<double> params;
};

struct TrainResult {
    PDENet net;
    std::vector<StageResult> stages;
};

struct TrainHooks {
    std::function<void(const MetricRow&)> on_metric;
    /// Called after the warm-up (depth 0) and after every depth.
    std::function<void(const StageResult& stage, const PDENet& net)> on_stage;
};

/// Warm-up (unless Freed) at depth 1 with frozen filters, optimizing only
/// coefficients and source; then depths 1..max_depth in config.mode, each
/// starting from the previous result.
TrainResult train_layerwise(PairSource& source, const BlockConfig& block_cfg, const TrainConfig& cfg,
                            const TrainHooks& hooks = {});

/// train_layerwise writing metrics.csv and checkpoint_depth{d}.json (d = 0
/// for the warm-up) into out_dir.
TrainResult train_to_directory(PairSource& source, const BlockConfig& block_cfg, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir);

} // namespace pdenet
