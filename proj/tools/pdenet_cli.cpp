#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pdenet/experiment.hpp"

using namespace pdenet;
namespace fs = std::filesystem;

namespace {

enum Exit : int { Ok = 0, Failure = 1, BadConfig = 2, Numerical = 3, Io = 4 };

struct Common {
    std::string config;
    std::string kind = "linear";
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 0;
};

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--config", c.config, "experiment config (JSON)");
    sub->add_option("--kind", c.kind, "defaults to use without --config: linear or nonlinear");
    sub->add_option("--seed", c.seed, "overrides the config seed");
    sub->add_option("--out", c.out, "output directory (default: the config's out_dir)");
    sub->add_option("--threads", c.threads, "worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg = c.config.empty() ? experiment_config_from_json(Json{{"kind", c.kind}})
                                            : load_experiment_config(c.config);
    if (c.seed) {
        cfg.set_seed(*c.seed);
    }
    if (!c.out.empty()) {
        cfg.out_dir = c.out;
    }
    if (c.threads > 0) {
        omp_set_num_threads(c.threads);
    }
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv)
{
    spdlog::set_default_logger(spdlog::stderr_color_mt("pdenet"));

    CLI::App app{"Learn PDEs from data with moment-constrained convolution filters"};
    app.require_subcommand(1);
    Common common;

    auto* gen = app.add_subcommand("generate", "simulate a training dataset");
    add_common(gen, common);

    auto* train = app.add_subcommand("train", "warm-up and layer-wise training");
    add_common(train, common);

    PredictOptions popts;
    std::string checkpoint;
    std::string initial;
    auto* predict = app.add_subcommand("predict", "roll a trained block forward");
    add_common(predict, common);
    predict->add_option("--checkpoint", checkpoint, "checkpoint JSON (default: deepest in OUT/train)");
    predict->add_option("--initial", initial, "initial field (PDF1); default: a test sample with reference");
    predict->add_option("--steps", popts.steps, "number of steps")->check(CLI::NonNegativeNumber);
    predict->add_option("--sample", popts.sample, "test sample index")->check(CLI::NonNegativeNumber);

    auto* identify = app.add_subcommand("identify", "learned filters, coefficients and source");
    add_common(identify, common);
    identify->add_option("--checkpoint", checkpoint, "checkpoint JSON (default: deepest in OUT/train)");

    auto* evaluate = app.add_subcommand("evaluate", "prediction and generalization error studies");
    add_common(evaluate, common);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint JSON (default: deepest in OUT/train)");

    auto* report = app.add_subcommand("report", "coefficient error against depth and run summary");
    add_common(report, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? Ok : BadConfig;
    }

    try {
        const ExperimentConfig cfg = resolve(common);
        const fs::path out = cfg.out_dir;
        std::optional<fs::path> ckpt;
        if (!checkpoint.empty()) {
            ckpt = checkpoint;
        }
        if (gen->parsed()) {
            const DatasetSummary s = cmd_generate(cfg, out);
            std::cout << "generated " << s.count << " trajectories of " << s.frames << " frames, u in [" << s.u_min
                      << ", " << s.u_max << "] -> " << (out / "data").string() << '\n';
        } else if (train->parsed()) {
            const TrainOutcome o = cmd_train(cfg, out);
            for (const auto& st : o.result.stages) {
                std::cout << (st.depth == 0 ? std::string("warm-up") : "depth " + std::to_string(st.depth)) << ": loss "
                          << st.initial_loss << " -> " << st.final_loss << " (" << st.iterations << " iterations, "
                          << to_string(st.status) << (st.blew_up ? ", blew up" : "") << ")\n";
            }
            if (!o.completed) {
                std::cerr << "training ended in a blow-up\n";
                return Numerical;
            }
        } else if (predict->parsed()) {
            popts.checkpoint = ckpt;
            if (!initial.empty()) {
                popts.initial = initial;
            }
            const PredictOutcome o = cmd_predict(cfg, out, popts);
            std::cout << "wrote " << o.rollout.traj.frames() << " frames to " << (out / "predict").string() << '\n';
            if (!o.errors.empty()) {
                std::cout << "normalized error at the last step: " << o.errors.back() << '\n';
            }
        } else if (identify->parsed()) {
            const IdentifyOutcome o = cmd_identify(cfg, out, ckpt);
            for (const auto& f : o.coefficients.filters) {
                std::cout << f.name << ": ";
                if (f.detected.alpha) {
                    std::cout << "sum rules of order " << to_string(*f.detected.alpha);
                    if (f.detected.total) {
                        std::cout << ", total " << f.detected.total->first << "\\{" << f.detected.total->second << "}";
                    }
                } else {
                    std::cout << f.detected.diagnostic;
                }
                std::cout << (f.matches ? "" : "  [expected " + to_string(f.nominal) + "]") << '\n';
            }
            for (const auto& t : o.coefficients.terms) {
                std::cout << "c" << t.order.i << t.order.j << ": mean " << t.learned_mean << " (true " << t.true_mean
                          << "), relative error " << t.rel_error << '\n';
            }
            if (!o.coefficients.identifiable) {
                std::cout << "operator identity cannot be assigned\n";
            }
            if (o.source) {
                std::cout << "source: max error " << o.source->max_error_central << " on ["
                          << o.source->u_p05 << ", " << o.source->u_p95 << "]\n";
            }
        } else if (evaluate->parsed()) {
            const EvaluateOutcome o = cmd_evaluate(cfg, out, ckpt);
            std::cout << o.summary.dump(2) << '\n';
        } else if (report->parsed()) {
            const Json r = cmd_report(cfg, out);
            std::cout << "report for " << r.at("stages").size() << " checkpoints -> " << (out / "report").string()
                      << '\n';
        }
        return Ok;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return BadConfig;
    } catch (const SizeMismatchError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return BadConfig;
    } catch (const BlowUpError& e) {
        std::cerr << "blow-up at step " << e.step() << ": " << e.what() << '\n';
        return Numerical;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return Io;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return Numerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return Failure;
    }
}
