#include "pdenet/training.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>

namespace pdenet {

std::string to_string(PairOffsets o) { return o == PairOffsets::All ? "all" : "random"; }

PairOffsets pair_offsets_from_string(const std::string& s)
{
    if (s == "all") {
        return PairOffsets::All;
    }
    if (s == "random") {
        return PairOffsets::Random;
    }
    throw ConfigError("unknown pair offsets '" + s + "' (expected all or random)");
}

void TrainConfig::validate() const
{
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    if (max_depth < 1) {
        throw ConfigError("max_depth must be >= 1");
    }
    if (chunk < 1) {
        throw ConfigError("chunk must be >= 1");
    }
    if (lbfgs.memory < 1 || lbfgs.max_iterations < 0 || warmup_iterations < 0) {
        throw ConfigError("L-BFGS memory must be >= 1 and iteration counts >= 0");
    }
    if (!(lbfgs.c1 > 0.0 && lbfgs.c1 < lbfgs.c2 && lbfgs.c2 < 1.0)) {
        throw ConfigError("line search constants need 0 < c1 < c2 < 1");
    }
    if (curvature_probes < 0 || !(curvature_floor >= 0.0 && curvature_floor < 1.0)) {
        throw ConfigError("curvature_probes must be >= 0 and curvature_floor in [0, 1)");
    }
    if (!(init_std >= 0.0) || !(freed_filter_std >= 0.0) || !(blowup_penalty > 0.0)) {
        throw ConfigError("init scales must be >= 0 and the blow-up penalty > 0");
    }
}

Json to_json(const TrainConfig& c)
{
    return Json{{"batch_size", c.batch_size},
                {"max_depth", c.max_depth},
                {"offsets", to_string(c.offsets)},
                {"lbfgs",
                 {{"memory", c.lbfgs.memory},
                  {"max_iterations", c.lbfgs.max_iterations},
                  {"c1", c.lbfgs.c1},
                  {"c2", c.lbfgs.c2},
                  {"grad_tol", c.lbfgs.grad_tol},
                  {"rel_tol", c.lbfgs.rel_tol},
                  {"max_line_search", c.lbfgs.max_line_search}}},
                {"warmup_iterations", c.warmup_iterations},
                {"init_std", c.init_std},
                {"freed_filter_std", c.freed_filter_std},
                {"blowup_penalty", c.blowup_penalty},
                {"chunk", c.chunk},
                {"curvature_probes", c.curvature_probes},
                {"curvature_floor", c.curvature_floor},
                {"seed", c.seed}};
}

TrainConfig train_config_from_json(const Json& j)
{
    TrainConfig c;
    try {
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_depth = j.value("max_depth", c.max_depth);
        c.offsets = pair_offsets_from_string(j.value("offsets", to_string(c.offsets)));
        if (j.contains("lbfgs")) {
            const Json& l = j.at("lbfgs");
            c.lbfgs.memory = l.value("memory", c.lbfgs.memory);
            c.lbfgs.max_iterations = l.value("max_iterations", c.lbfgs.max_iterations);
            c.lbfgs.c1 = l.value("c1", c.lbfgs.c1);
            c.lbfgs.c2 = l.value("c2", c.lbfgs.c2);
            c.lbfgs.grad_tol = l.value("grad_tol", c.lbfgs.grad_tol);
            c.lbfgs.rel_tol = l.value("rel_tol", c.lbfgs.rel_tol);
            c.lbfgs.max_line_search = l.value("max_line_search", c.lbfgs.max_line_search);
        }
        c.warmup_iterations = j.value("warmup_iterations", c.warmup_iterations);
        c.init_std = j.value("init_std", c.init_std);
        c.freed_filter_std = j.value("freed_filter_std", c.freed_filter_std);
        c.blowup_penalty = j.value("blowup_penalty", c.blowup_penalty);
        c.chunk = j.value("chunk", c.chunk);
        c.curvature_probes = j.value("curvature_probes", c.curvature_probes);
        c.curvature_floor = j.value("curvature_floor", c.curvature_floor);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------- loss

namespace {

void check_batch(const DeltaTBlock& block, std::span<const Pair> batch, int depth)
{
    if (depth < 1) {
        throw SizeMismatchError("depth must be >= 1");
    }
    for (const Pair& p : batch) {
        if (p.input.grid() != block.config().grid || p.label.grid() != block.config().grid) {
            throw SizeMismatchError("training pair grid does not match the block grid");
        }
    }
}

struct ChunkOut {
    double loss = 0.0;
    bool blew_up = false;
    std::exception_ptr error;
};

} // namespace

LossResult batch_loss(const DeltaTBlock& block, std::span<const Pair> batch, int depth, double penalty)
{
    check_batch(block, batch, depth);
    const std::size_t N = block.config().grid.size();
    double loss = 0.0;
    std::vector<double> a(N);
    std::vector<double> b(N);
    for (const Pair& p : batch) {
        std::copy(p.input.values().begin(), p.input.values().end(), a.begin());
        try {
            for (int k = 0; k < depth; ++k) {
                block.forward(a, b, nullptr);
                std::swap(a, b);
            }
        } catch (const BlowUpError&) {
            return {penalty, true};
        }
        const auto lab = p.label.values();
        for (std::size_t i = 0; i < N; ++i) {
            loss += (a[i] - lab[i]) * (a[i] - lab[i]);
        }
    }
    if (!std::isfinite(loss)) {
        return {penalty, true};
    }
    return {loss, false};
}

namespace {

// Reverse pass over the batch. Without a probe seed the cotangent is
// d(loss)/d(output); with one it is a Rademacher vector drawn per pair.
LossResult reverse_pass(const DeltaTBlock& block, std::span<const Pair> batch, int depth, std::span<double> grad,
                        double penalty, int chunk, const std::uint64_t* probe_seed)
{
    check_batch(block, batch, depth);
    if (static_cast<int>(grad.size()) != block.param_count()) {
        throw SizeMismatchError("gradient vector has the wrong size");
    }
    if (chunk < 1) {
        throw ConfigError("chunk must be >= 1");
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    const std::size_t N = block.config().grid.size();
    const int n_pairs = static_cast<int>(batch.size());
    const int n_chunks = (n_pairs + chunk - 1) / chunk;
    std::vector<ChunkOut> outs(static_cast<std::size_t>(n_chunks));
    std::vector<BlockGrad> grads(static_cast<std::size_t>(n_chunks));

#pragma omp parallel
    {
        std::vector<BlockCache> caches(static_cast<std::size_t>(depth));
        std::vector<double> a(N);
        std::vector<double> b(N);
        std::vector<double> g(N);
        std::vector<double> gin(N);
#pragma omp for schedule(dynamic)
        for (int c = 0; c < n_chunks; ++c) {
            ChunkOut& out = outs[static_cast<std::size_t>(c)];
            BlockGrad& bg = grads[static_cast<std::size_t>(c)];
            try {
                bg = block.make_grad();
                const int end = std::min(n_pairs, (c + 1) * chunk);
                for (int s = c * chunk; s < end && !out.blew_up; ++s) {
                    const Pair& p = batch[static_cast<std::size_t>(s)];
                    std::copy(p.input.values().begin(), p.input.values().end(), a.begin());
                    try {
                        for (int k = 0; k < depth; ++k) {
                            block.forward(a, b, &caches[static_cast<std::size_t>(k)]);
                            std::swap(a, b);
                        }
                    } catch (const BlowUpError&) {
                        out.blew_up = true;
                        break;
                    }
                    const auto lab = p.label.values();
                    for (std::size_t i = 0; i < N; ++i) {
                        const double r = a[i] - lab[i];
                        out.loss += r * r;
                        g[i] = 2.0 * r;
                    }
                    if (probe_seed) {
                        auto rng = sample_rng(*probe_seed, static_cast<std::uint64_t>(s));
                        for (std::size_t i = 0; i < N; i += 64) {
                            std::uint64_t bits = rng();
                            for (std::size_t k = i; k < std::min(N, i + 64); ++k, bits >>= 1) {
                                g[k] = (bits & 1U) ? 1.0 : -1.0;
                            }
                        }
                    }
                    for (int k = depth - 1; k >= 0; --k) {
                        block.backward(caches[static_cast<std::size_t>(k)], g, gin, bg);
                        std::swap(g, gin);
                    }
                }
            } catch (...) {
                out.error = std::current_exception();
            }
        }
    }

    double loss = 0.0;
    bool blew_up = false;
    for (const ChunkOut& o : outs) {
        if (o.error) {
            std::rethrow_exception(o.error);
        }
        loss += o.loss;
        blew_up = blew_up || o.blew_up;
    }
    if (blew_up || !std::isfinite(loss)) {
        return {penalty, true};
    }
    if (n_chunks == 0) {
        return {0.0, false};
    }
    BlockGrad& total = grads[0];
    for (int c = 1; c < n_chunks; ++c) {
        total += grads[static_cast<std::size_t>(c)];
    }
    block.finalize(total, grad);
    for (double v : grad) {
        if (!std::isfinite(v)) {
            std::fill(grad.begin(), grad.end(), 0.0);
            return {penalty, true};
        }
    }
    return {loss, false};
}

} // namespace

LossResult batch_loss_grad(const DeltaTBlock& block, std::span<const Pair> batch, int depth, std::span<double> grad,
                           double penalty, int chunk)
{
    return reverse_pass(block, batch, depth, grad, penalty, chunk, nullptr);
}

std::vector<double> gauss_newton_diagonal(const DeltaTBlock& block, std::span<const Pair> batch, int depth,
                                          int probes, std::uint64_t seed, int chunk)
{
    const std::size_t P = static_cast<std::size_t>(block.param_count());
    std::vector<double> diag(P, 0.0);
    std::vector<double> v(P);
    for (int k = 0; k < probes; ++k) {
        const std::uint64_t probe_seed = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1);
        if (reverse_pass(block, batch, depth, v, 1.0, chunk, &probe_seed).blew_up) {
            throw BlowUpError("cannot estimate curvature: the network blows up on the batch", 0);
        }
        for (std::size_t i = 0; i < P; ++i) {
            diag[i] += v[i] * v[i] / probes;
        }
    }
    return diag;
}

// ---------------------------------------------------------------- sources

std::vector<Pair> make_pairs(std::span<const Trajectory> trajs, int depth, PairOffsets offsets, std::mt19937_64& rng)
{
    std::vector<Pair> out;
    for (const Trajectory& t : trajs) {
        const int last = t.frames() - 1 - depth;
        if (last < 0) {
            throw SizeMismatchError("trajectory with " + std::to_string(t.frames()) + " frames is too short for depth " +
                                    std::to_string(depth));
        }
        if (offsets == PairOffsets::All) {
            for (int i = 0; i <= last; ++i) {
                out.push_back({t.fields[static_cast<std::size_t>(i)], t.fields[static_cast<std::size_t>(i + depth)]});
            }
        } else {
            const int i = std::uniform_int_distribution<int>(0, last)(rng);
            out.push_back({t.fields[static_cast<std::size_t>(i)], t.fields[static_cast<std::size_t>(i + depth)]});
        }
    }
    return out;
}

namespace {

constexpr std::uint64_t kOffsetStream = 0x6f66667365747321ULL;

} // namespace

OnTheFlySource::OnTheFlySource(DataSpec spec, std::uint64_t seed, int batch_size, PairOffsets offsets)
    : spec_(std::move(spec)), seed_(seed), batch_size_(batch_size), offsets_(offsets)
{
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
}

int OnTheFlySource::frames() const
{
    return static_cast<int>(std::llround(spec_.t_end / spec_.dt)) + 1;
}

std::vector<Pair> OnTheFlySource::pairs(int stage, int depth)
{
    std::vector<Trajectory> clean(static_cast<std::size_t>(batch_size_));
    std::vector<Trajectory> noisy(static_cast<std::size_t>(batch_size_));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(batch_size_));
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < batch_size_; ++k) {
        try {
            make_sample(spec_, seed_, stage * batch_size_ + k, clean[static_cast<std::size_t>(k)],
                        noisy[static_cast<std::size_t>(k)]);
        } catch (...) {
            errors[static_cast<std::size_t>(k)] = std::current_exception();
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    auto rng = sample_rng(seed_ ^ kOffsetStream, static_cast<std::uint64_t>(stage));
    auto out = make_pairs(noisy, depth, offsets_, rng);
    for (const Pair& p : out) {
        seen_.insert(seen_.end(), p.input.values().begin(), p.input.values().end());
    }
    return out;
}

StoredSource::StoredSource(std::vector<Trajectory> trajs, int batch_size, PairOffsets offsets, std::uint64_t seed)
    : trajs_(std::move(trajs)), batch_size_(batch_size), offsets_(offsets), seed_(seed)
{
    if (trajs_.empty()) {
        throw ConfigError("no stored trajectories to train on");
    }
    if (batch_size < 1) {
        throw ConfigError("batch_size must be >= 1");
    }
    for (const auto& t : trajs_) {
        t.validate();
    }
}

int StoredSource::frames() const
{
    int f = trajs_.front().frames();
    for (const auto& t : trajs_) {
        f = std::min(f, t.frames());
    }
    return f;
}

std::vector<Pair> StoredSource::pairs(int stage, int depth)
{
    std::vector<Trajectory> pick;
    const std::size_t n = trajs_.size();
    for (int k = 0; k < batch_size_; ++k) {
        pick.push_back(trajs_[(static_cast<std::size_t>(stage) * batch_size_ + k) % n]);
    }
    auto rng = sample_rng(seed_ ^ kOffsetStream, static_cast<std::uint64_t>(stage));
    return make_pairs(pick, depth, offsets_, rng);
}

// ---------------------------------------------------------------- schedule

namespace {

StageResult run_stage(DeltaTBlock& block, std::span<const Pair> pairs, int depth, int stage_depth,
                      const TrainConfig& cfg, int max_iterations, const TrainHooks& hooks,
                      std::chrono::steady_clock::time_point t0)
{
    StageResult st;
    st.depth = stage_depth;
    DeltaTBlock work = block;
    // optimize in coordinates scaled by the inverse square root of the
    // Gauss-Newton diagonal; the optimum is the same
    const std::size_t P = static_cast<std::size_t>(block.param_count());
    std::vector<double> scale(P, 1.0);
    if (cfg.curvature_probes > 0 && P > 0) {
        try {
            const auto d = gauss_newton_diagonal(block, pairs, depth, cfg.curvature_probes,
                                                 cfg.seed ^ (0xc0ffeeULL + static_cast<std::uint64_t>(stage_depth)),
                                                 cfg.chunk);
            const double floor = *std::max_element(d.begin(), d.end()) * cfg.curvature_floor;
            for (std::size_t i = 0; i < P; ++i) {
                const double v = std::max(d[i], floor);
                scale[i] = v > 0.0 ? 1.0 / std::sqrt(v) : 1.0;
            }
        } catch (const BlowUpError& e) {
            spdlog::warn("stage depth {}: {}; optimizing unscaled", stage_depth, e.what());
        }
    }
    std::vector<double> x(P);
    const Objective f = [&](std::span<const double> theta, std::span<double> g) {
        for (std::size_t i = 0; i < P; ++i) {
            x[i] = theta[i] * scale[i];
        }
        work.set_params(x);
        const LossResult r = batch_loss_grad(work, pairs, depth, g, cfg.blowup_penalty, cfg.chunk);
        for (std::size_t i = 0; i < P; ++i) {
            g[i] *= scale[i];
        }
        return r.loss;
    };
    LbfgsOptions opts = cfg.lbfgs;
    opts.max_iterations = max_iterations;
    double best = std::numeric_limits<double>::infinity();
    const auto on_iterate = [&](const LbfgsIterate& it) {
        best = std::min(best, it.f);
        st.best_loss.push_back(best);
        if (hooks.on_metric) {
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            hooks.on_metric(MetricRow{stage_depth, it.iteration, it.f, it.grad_norm, wall});
        }
    };
    std::vector<double> theta0 = block.params();
    for (std::size_t i = 0; i < P; ++i) {
        theta0[i] /= scale[i];
    }
    LbfgsResult r = lbfgs_minimize(f, std::move(theta0), opts, on_iterate);
    for (std::size_t i = 0; i < P; ++i) {
        r.x[i] *= scale[i];
    }
    st.initial_loss = r.history.front().f;
    st.final_loss = r.f;
    st.status = r.status;
    st.iterations = r.iterations;
    st.blew_up = r.f >= cfg.blowup_penalty;
    block.set_params(r.x);
    st.params = r.x;
    spdlog::info("stage depth {}: loss {:.6g} -> {:.6g} after {} iterations ({})", stage_depth, st.initial_loss,
                 st.final_loss, st.iterations, to_string(st.status));
    if (st.blew_up) {
        spdlog::warn("stage depth {} ended in a blown-up state", stage_depth);
    }
    return st;
}

} // namespace

TrainResult train_layerwise(PairSource& source, const BlockConfig& block_cfg, const TrainConfig& cfg,
                            const TrainHooks& hooks)
{
    cfg.validate();
    block_cfg.validate();
    if (cfg.max_depth > source.frames() - 1) {
        throw ConfigError("max_depth " + std::to_string(cfg.max_depth) + " needs more than the " +
                          std::to_string(source.frames()) + " frames per trajectory");
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng = sample_rng(cfg.seed, 0xb10c);
    const bool freed = block_cfg.mode == FilterMode::Freed;

    BlockConfig first = block_cfg;
    if (!freed) {
        first.mode = FilterMode::Frozen;
    }
    TrainResult res{PDENet(first, 1), {}};
    DeltaTBlock& block = res.net.block;
    block.randomize(rng, cfg.init_std, cfg.freed_filter_std);
    spdlog::info("block has {} trainable parameters ({} filter moments) in {} mode", block.param_count(),
                 block.filter_param_count(), to_string(block_cfg.mode));

    if (!freed) {
        const auto pairs = source.pairs(0, 1);
        const int iters = cfg.warmup_iterations > 0 ? cfg.warmup_iterations : cfg.lbfgs.max_iterations;
        res.stages.push_back(run_stage(block, pairs, 1, 0, cfg, iters, hooks, t0));
        if (hooks.on_stage) {
            hooks.on_stage(res.stages.back(), res.net);
        }
        block.change_mode(block_cfg.mode);
    }
    for (int d = 1; d <= cfg.max_depth; ++d) {
        const auto pairs = source.pairs(d, d);
        res.net.depth = d;
        res.stages.push_back(run_stage(block, pairs, d, d, cfg, cfg.lbfgs.max_iterations, hooks, t0));
        if (hooks.on_stage) {
            hooks.on_stage(res.stages.back(), res.net);
        }
    }
    return res;
}

TrainResult train_to_directory(PairSource& source, const BlockConfig& block_cfg, const TrainConfig& cfg,
                               const std::filesystem::path& out_dir)
{
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    std::ofstream csv(out_dir / "metrics.csv");
    if (!csv) {
        throw IoError("cannot write " + (out_dir / "metrics.csv").string());
    }
    csv << "depth,iteration,loss,grad_norm,wall_seconds\n" << std::setprecision(17);
    TrainHooks hooks;
    hooks.on_metric = [&](const MetricRow& m) {
        csv << m.depth << ',' << m.iteration << ',' << m.loss << ',' << m.grad_norm << ',' << m.wall_seconds << '\n';
        csv.flush();
    };
    hooks.on_stage = [&](const StageResult& st, const PDENet& net) {
        const Json meta{{"stage_depth", st.depth},
                        {"mode", to_string(net.block.config().mode)},
                        {"initial_loss", st.initial_loss},
                        {"final_loss", st.final_loss},
                        {"iterations", st.iterations},
                        {"status", to_string(st.status)},
                        {"blew_up", st.blew_up}};
        save_checkpoint(out_dir / ("checkpoint_depth" + std::to_string(st.depth) + ".json"), net, meta);
    };
    return train_layerwise(source, block_cfg, cfg, hooks);
}

} // namespace pdenet
