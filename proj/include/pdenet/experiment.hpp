#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdenet/data_gen.hpp"
#include "pdenet/evaluation.hpp"
#include "pdenet/json_io.hpp"
#include "pdenet/pde_net.hpp"
#include "pdenet/training.hpp"

namespace pdenet {

struct EvalConfig {
    int n_test = 560;
    int horizon = 60;
    /// Highest initial frequency for the generalization test; 0 picks 12
    /// (linear) or 10 (nonlinear).
    int generalization_n_max = 0;
    int source_points = 601;
    int histogram_bins = 60;

    void validate() const;
};

/// Everything one run needs. Serialized with every default filled in.
struct ExperimentConfig {
    PdeKind kind = PdeKind::Linear;
    DataSpec data = DataSpec::linear_default();
    /// Trajectories written by generate; 0 means enough for every stage
    /// without reuse.
    int dataset_count = 0;
    /// Train on fresh samples drawn per stage instead of the stored dataset.
    bool on_the_fly = true;
    BlockConfig block = BlockConfig::linear_default();
    TrainConfig train{};
    EvalConfig eval{};
    std::uint64_t seed = 0;
    std::string out_dir = "run";

    static ExperimentConfig defaults(PdeKind kind);

    /// Grid of the stored frames and of the net.
    [[nodiscard]] Grid2D net_grid() const;
    [[nodiscard]] int resolved_dataset_count() const;
    [[nodiscard]] int resolved_generalization_n_max() const;
    /// Seed of the test initial conditions, disjoint from the training stream.
    [[nodiscard]] std::uint64_t test_seed() const noexcept;

    /// Sets the run seed and the training seed with it.
    void set_seed(std::uint64_t s);
    /// Throws ConfigError.
    void validate() const;
};

Json to_json(const ExperimentConfig& c);
/// Keys missing from j take the defaults of j["kind"]. Throws ConfigError.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct DatasetSummary {
    int count = 0;
    int frames = 0;
    double u_min = 0.0;
    double u_max = 0.0;
};

/// Writes config.json and data/{noisy,clean}/traj_NNNNN under out.
DatasetSummary cmd_generate(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct TrainOutcome {
    TrainResult result;
    ValueSummary seen;
    /// false when the last stage ended in a blow-up
    bool completed = true;
};

/// Warm-up and layer-wise training into out/train: metrics.csv,
/// checkpoint_depth{d}.json and training_u.json.
TrainOutcome cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out);

/// out/train/checkpoint_depth{max_depth}.json, or the deepest one present.
std::filesystem::path default_checkpoint(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct PredictOptions {
    std::optional<std::filesystem::path> checkpoint;
    /// PDF1 initial field; otherwise test sample `sample` with its reference.
    std::optional<std::filesystem::path> initial;
    int steps = 60;
    int sample = 0;
};

struct PredictOutcome {
    Rollout rollout;
    /// normalized error per step when a reference exists
    std::vector<double> errors;
};

/// Writes out/predict/t{k}.pdf1, meta.json and errors.csv. A blow-up is
/// recorded in meta.json and then rethrown as BlowUpError.
PredictOutcome cmd_predict(const ExperimentConfig& cfg, const std::filesystem::path& out, const PredictOptions& opts);

struct IdentifyOutcome {
    CoefficientReport coefficients;
    std::optional<SourceComparison> source;
    Json report;
};

/// Sum-rule orders, coefficient table and images, and the source curve for
/// nonlinear runs, into out/identify.
IdentifyOutcome cmd_identify(const ExperimentConfig& cfg, const std::filesystem::path& out,
                             const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

struct EvaluateOutcome {
    ErrorCurve curve;
    ErrorCurve generalization;
    Json summary;
};

/// Prediction and generalization studies into out/evaluate.
EvaluateOutcome cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out,
                             const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Coefficient error against depth over every stored checkpoint, plus the
/// training and evaluation summaries, into out/report.
Json cmd_report(const ExperimentConfig& cfg, const std::filesystem::path& out);

} // namespace pdenet
