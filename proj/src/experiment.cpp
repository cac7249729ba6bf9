#include "pdenet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>


namespace pdenet {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTestStream = 0x7e57'5eed'0000'0001ULL;

std::string to_string(Envelope e) { return e == Envelope::None ? "none" : "dirichlet_polynomial"; }

Envelope envelope_from_string(const std::string& s)
{
    if (s == "none") {
        return Envelope::None;
    }
    if (s == "dirichlet_polynomial") {
        return Envelope::DirichletPolynomial;
    }
    throw ConfigError("unknown envelope '" + s + "'");
}

Json data_to_json(const DataSpec& d)
{
    return Json{{"grid", grid_to_json(d.grid)},
                {"init",
                 {{"n_max", d.init.n_max},
                  {"amplitude_std", d.init.amplitude_std},
                  {"envelope", to_string(d.init.envelope)}}},
                {"t_end", d.t_end},
                {"dt", d.dt},
                {"noise_level", d.noise_level},
                {"spectral", {{"substeps", d.spectral.substeps}}},
                {"nonlinear",
                 {{"c", d.nonlinear.c},
                  {"source_amplitude", d.nonlinear.source_amplitude},
                  {"max_dt", d.nonlinear.max_dt},
                  {"restrict_factor", d.nonlinear.restrict_factor}}}};
}

DataSpec data_from_json(const Json& j, PdeKind kind)
{
    DataSpec d = kind == PdeKind::Linear ? DataSpec::linear_default() : DataSpec::nonlinear_default();
    d.grid = grid_from_json(j.at("grid"));
    const Json& init = j.at("init");
    d.init.n_max = init.at("n_max").get<int>();
    d.init.amplitude_std = init.at("amplitude_std").get<double>();
    d.init.envelope = envelope_from_string(init.at("envelope").get<std::string>());
    d.t_end = j.at("t_end").get<double>();
    d.dt = j.at("dt").get<double>();
    d.noise_level = j.at("noise_level").get<double>();
    d.spectral.substeps = j.at("spectral").at("substeps").get<int>();
    const Json& nl = j.at("nonlinear");
    d.nonlinear.c = nl.at("c").get<double>();
    d.nonlinear.source_amplitude = nl.at("source_amplitude").get<double>();
    d.nonlinear.max_dt = nl.at("max_dt").get<double>();
    d.nonlinear.restrict_factor = nl.at("restrict_factor").get<int>();
    return d;
}

Json eval_to_json(const EvalConfig& e)
{
    return Json{{"n_test", e.n_test},
                {"horizon", e.horizon},
                {"generalization_n_max", e.generalization_n_max},
                {"source_points", e.source_points},
                {"histogram_bins", e.histogram_bins}};
}

EvalConfig eval_from_json(const Json& j)
{
    EvalConfig e;
    e.n_test = j.at("n_test").get<int>();
    e.horizon = j.at("horizon").get<int>();
    e.generalization_n_max = j.at("generalization_n_max").get<int>();
    e.source_points = j.at("source_points").get<int>();
    e.histogram_bins = j.at("histogram_bins").get<int>();
    return e;
}

Json histogram_to_json(const Histogram& h) { return Json{{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}}; }

Histogram histogram_from_json(const Json& j)
{
    Histogram h;
    h.lo = j.at("lo").get<double>();
    h.hi = j.at("hi").get<double>();
    h.counts = j.at("counts").get<std::vector<std::size_t>>();
    return h;
}

Json order_json(Order o) { return Json::array({o.i, o.j}); }

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
}

void write_config(const ExperimentConfig& cfg, const fs::path& out)
{
    ensure_dir(out);
    write_json_file(out / "config.json", to_json(cfg));
}

std::string traj_name(int i)
{
    std::ostringstream os;
    os << "traj_" << std::setw(5) << std::setfill('0') << i;
    return os.str();
}

TrajectoryMeta meta_for(const ExperimentConfig& cfg, int index, bool noisy)
{
    TrajectoryMeta m;
    m.kind = to_string(cfg.kind);
    m.seed = cfg.seed;
    m.n_max = cfg.data.init.n_max;
    m.noise_level = noisy ? cfg.data.noise_level : 0.0;
    m.index = index;
    return m;
}

std::vector<Trajectory> read_stored(const fs::path& dir, const ExperimentConfig& cfg)
{
    std::vector<Trajectory> out;
    const int count = cfg.resolved_dataset_count();
    for (int i = 0; i < count; ++i) {
        const fs::path p = dir / traj_name(i);
        if (!fs::exists(p / "meta.json")) {
            break;
        }
        out.push_back(read_trajectory(p));
    }
    if (out.empty()) {
        throw IoError("no stored trajectories in " + dir.string() + "; run generate first");
    }
    return out;
}

std::map<int, fs::path> checkpoints_in(const fs::path& dir)
{
    std::map<int, fs::path> found;
    if (!fs::is_directory(dir)) {
        return found;
    }
    const std::regex re("checkpoint_depth([0-9]+)\\.json");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, re)) {
            found[std::stoi(m[1].str())] = e.path();
        }
    }
    return found;
}

PDENet load_for(const ExperimentConfig& cfg, const fs::path& out, const std::optional<fs::path>& checkpoint,
                Json* meta = nullptr)
{
    const fs::path p = checkpoint ? *checkpoint : default_checkpoint(cfg, out);
    PDENet net = load_checkpoint(p, meta);
    if (!(net.block.config().grid == cfg.net_grid())) {
        throw ConfigError(p.string() + ": checkpoint grid does not match the configured data grid");
    }
    return net;
}

CoefficientTruth truth_for(const ExperimentConfig& cfg)
{
    return cfg.kind == PdeKind::Linear ? CoefficientTruth::linear(cfg.data.spectral.pde)
                                       : CoefficientTruth::nonlinear(cfg.data.nonlinear.c);
}

Json curve_summary(const ErrorCurve& c)
{
    const auto last = c.times.size() - 1;
    auto num = [](double v) { return std::isfinite(v) ? Json(v) : Json("inf"); };
    return Json{{"samples", c.samples()},
                {"horizon_time", c.times[last]},
                {"p25_final", num(c.p25[last])},
                {"median_final", num(c.median[last])},
                {"p75_final", num(c.p75[last])},
                {"median_first", num(c.median.front())},
                {"blowups", c.blowups()}};
}

} // namespace

void EvalConfig::validate() const
{
    if (n_test < 1) {
        throw ConfigError("eval.n_test must be >= 1");
    }
    if (horizon < 1) {
        throw ConfigError("eval.horizon must be >= 1");
    }
    if (generalization_n_max < 0) {
        throw ConfigError("eval.generalization_n_max must be >= 0");
    }
    if (source_points < 2 || histogram_bins < 1) {
        throw ConfigError("eval.source_points must be >= 2 and eval.histogram_bins >= 1");
    }
}

ExperimentConfig ExperimentConfig::defaults(PdeKind kind)
{
    ExperimentConfig c;
    c.kind = kind;
    if (kind == PdeKind::Linear) {
        c.data = DataSpec::linear_default();
        c.block = BlockConfig::linear_default();
    } else {
        c.data = DataSpec::nonlinear_default();
        c.block = BlockConfig::nonlinear_default();
    }
    c.block.grid = c.net_grid();
    c.block.dt = c.data.dt;
    return c;
}

Grid2D ExperimentConfig::net_grid() const
{
    Grid2D g = data.grid;
    if (kind == PdeKind::Nonlinear && data.nonlinear.restrict_factor > 1) {
        g.nx /= data.nonlinear.restrict_factor;
        g.ny /= data.nonlinear.restrict_factor;
    }
    return g;
}

int ExperimentConfig::resolved_dataset_count() const
{
    return dataset_count > 0 ? dataset_count : train.batch_size * (train.max_depth + 1);
}

int ExperimentConfig::resolved_generalization_n_max() const
{
    if (eval.generalization_n_max > 0) {
        return eval.generalization_n_max;
    }
    return kind == PdeKind::Linear ? 12 : 10;
}

std::uint64_t ExperimentConfig::test_seed() const noexcept { return seed ^ kTestStream; }

void ExperimentConfig::set_seed(std::uint64_t s)
{
    seed = s;
    train.seed = s;
}

void ExperimentConfig::validate() const
{
    try {
        data.grid.validate();
    } catch (const SizeMismatchError& e) {
        throw ConfigError(e.what());
    }
    block.validate();
    train.validate();
    eval.validate();
    if (dataset_count < 0) {
        throw ConfigError("dataset_count must be >= 0");
    }
    if (!(data.dt > 0.0) || !(data.t_end >= data.dt)) {
        throw ConfigError("data needs dt > 0 and t_end >= dt");
    }
    if (data.noise_level < 0.0) {
        throw ConfigError("noise_level must be >= 0");
    }
    if (data.init.n_max < 0) {
        throw ConfigError("init.n_max must be >= 0");
    }
    if (kind == PdeKind::Linear && data.grid.boundary != Boundary::Periodic) {
        throw ConfigError("the linear problem needs a periodic grid");
    }
    if (kind == PdeKind::Nonlinear) {
        const int r = data.nonlinear.restrict_factor;
        if (data.grid.boundary != Boundary::Dirichlet) {
            throw ConfigError("the nonlinear problem needs a Dirichlet grid");
        }
        if (r < 1 || data.grid.nx % r != 0 || data.grid.ny % r != 0) {
            throw ConfigError("restrict_factor must divide the grid size");
        }
        if (!block.source) {
            throw ConfigError("the nonlinear problem needs block.source = true");
        }
    }
    if (!(block.grid == net_grid())) {
        throw ConfigError("block.grid must equal the data grid after restriction");
    }
    if (std::abs(block.dt - data.dt) > 1e-15 * data.dt) {
        throw ConfigError("block.dt must equal data.dt");
    }
    const int frames = static_cast<int>(std::lround(data.t_end / data.dt)) + 1;
    if (train.max_depth > frames - 1) {
        throw ConfigError("train.max_depth exceeds the number of stored time steps");
    }
    if (out_dir.empty()) {
        throw ConfigError("out_dir must not be empty");
    }
}

Json to_json(const ExperimentConfig& c)
{
    return Json{{"format", "pdenet-experiment"},
                {"version", 1},
                {"kind", to_string(c.kind)},
                {"seed", c.seed},
                {"out_dir", c.out_dir},
                {"dataset_count", c.dataset_count},
                {"on_the_fly", c.on_the_fly},
                {"data", data_to_json(c.data)},
                {"block", to_json(c.block)},
                {"train", to_json(c.train)},
                {"eval", eval_to_json(c.eval)}};
}

ExperimentConfig experiment_config_from_json(const Json& j)
{
    if (!j.is_object()) {
        throw ConfigError("experiment config must be a JSON object");
    }
    try {
        const PdeKind kind = pde_kind_from_string(j.value("kind", std::string("linear")));
        const ExperimentConfig base = ExperimentConfig::defaults(kind);
        Json full = to_json(base);
        full.merge_patch(j);

        ExperimentConfig c;
        c.kind = kind;
        c.seed = full.at("seed").get<std::uint64_t>();
        c.out_dir = full.at("out_dir").get<std::string>();
        c.dataset_count = full.at("dataset_count").get<int>();
        c.on_the_fly = full.at("on_the_fly").get<bool>();
        c.data = data_from_json(full.at("data"), kind);
        c.data.kind = kind;
        c.block = block_config_from_json(full.at("block"));
        c.train = train_config_from_json(full.at("train"));
        if (!j.contains("train") || !j.at("train").contains("seed")) {
            c.train.seed = c.seed;
        }
        c.eval = eval_from_json(full.at("eval"));
        // the block follows the data unless set explicitly
        if (!j.contains("block") || !j.at("block").contains("grid")) {
            c.block.grid = c.net_grid();
        }
        if (!j.contains("block") || !j.at("block").contains("dt")) {
            c.block.dt = c.data.dt;
        }
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
}

ExperimentConfig load_experiment_config(const fs::path& path) { return experiment_config_from_json(read_json_file(path)); }

DatasetSummary cmd_generate(const ExperimentConfig& cfg, const fs::path& out)
{
    cfg.validate();
    write_config(cfg, out);
    const int count = cfg.resolved_dataset_count();
    const Dataset ds = make_dataset(cfg.data, count, cfg.seed);
    DatasetSummary s;
    s.count = count;
    s.frames = ds.noisy.front().frames();
    s.u_min = std::numeric_limits<double>::infinity();
    s.u_max = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < count; ++i) {
        const auto& noisy = ds.noisy[static_cast<std::size_t>(i)];
        write_trajectory(out / "data" / "noisy" / traj_name(i), noisy, meta_for(cfg, i, true));
        write_trajectory(out / "data" / "clean" / traj_name(i), ds.clean[static_cast<std::size_t>(i)],
                         meta_for(cfg, i, false));
        for (const auto& f : noisy.fields) {
            for (double v : f.values()) {
                s.u_min = std::min(s.u_min, v);
                s.u_max = std::max(s.u_max, v);
            }
        }
    }
    write_json_file(out / "data" / "summary.json", Json{{"count", s.count},
                                                         {"frames", s.frames},
                                                         {"grid", grid_to_json(cfg.net_grid())},
                                                         {"u_min", s.u_min},
                                                         {"u_max", s.u_max}});
    return s;
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, const fs::path& out)
{
    cfg.validate();
    write_config(cfg, out);
    std::vector<double> seen;
    auto run = [&]() -> TrainResult {
        if (cfg.on_the_fly) {
            OnTheFlySource src(cfg.data, cfg.seed, cfg.train.batch_size, cfg.train.offsets);
            TrainResult r = train_to_directory(src, cfg.block, cfg.train, out / "train");
            seen = src.seen_values();
            return r;
        }
        auto trajs = read_stored(out / "data" / "noisy", cfg);
        for (const auto& t : trajs) {
            for (const auto& f : t.fields) {
                seen.insert(seen.end(), f.values().begin(), f.values().end());
            }
        }
        StoredSource src(std::move(trajs), cfg.train.batch_size, cfg.train.offsets, cfg.train.seed);
        return train_to_directory(src, cfg.block, cfg.train, out / "train");
    };
    TrainOutcome o{run(), {}, true};
    o.seen = summarize_values(seen, cfg.eval.histogram_bins);
    write_json_file(out / "train" / "training_u.json", Json{{"count", o.seen.count},
                                                             {"p05", o.seen.p05},
                                                             {"p95", o.seen.p95},
                                                             {"histogram", histogram_to_json(o.seen.histogram)}});
    o.completed = o.result.stages.empty() || !o.result.stages.back().blew_up;
    return o;
}

fs::path default_checkpoint(const ExperimentConfig& cfg, const fs::path& out)
{
    const fs::path dir = out / "train";
    const fs::path want = dir / ("checkpoint_depth" + std::to_string(cfg.train.max_depth) + ".json");
    if (fs::exists(want)) {
        return want;
    }
    const auto found = checkpoints_in(dir);
    if (found.empty()) {
        throw IoError("no checkpoint in " + dir.string() + "; run train first or pass --checkpoint");
    }
    return found.rbegin()->second;
}

PredictOutcome cmd_predict(const ExperimentConfig& cfg, const fs::path& out, const PredictOptions& opts)
{
    cfg.validate();
    if (opts.steps < 0) {
        throw ConfigError("steps must be >= 0");
    }
    if (opts.sample < 0) {
        throw ConfigError("sample must be >= 0");
    }
    write_config(cfg, out);
    const PDENet net = load_for(cfg, out, opts.checkpoint);
    const Grid2D g = cfg.net_grid();

    Field u0;
    std::optional<Trajectory> reference;
    if (opts.initial) {
        u0 = read_pdf1(*opts.initial, g.lx, g.ly);
        if (!(u0.grid() == g)) {
            throw ConfigError(opts.initial->string() + ": initial field grid does not match the net");
        }
    } else {
        DataSpec spec = cfg.data;
        // one test sample with the requested index
        TestSet set = make_test_set(spec, opts.sample + 1, std::max(opts.steps, 1), cfg.test_seed());
        u0 = set.initial.back();
        reference = std::move(set.reference.back());
    }

    PredictOutcome o;
    o.rollout = rollout(net.block, u0, opts.steps);
    const fs::path dir = out / "predict";
    std::error_code ec;
    fs::remove_all(dir, ec);
    ensure_dir(dir);
    const Trajectory& traj = o.rollout.traj;
    for (int k = 0; k < traj.frames(); ++k) {
        write_pdf1(dir / ("t" + std::to_string(k) + ".pdf1"), traj.fields[static_cast<std::size_t>(k)]);
    }
    if (reference) {
        std::ofstream csv(dir / "errors.csv", std::ios::trunc);
        if (!csv) {
            throw IoError("cannot write " + (dir / "errors.csv").string());
        }
        csv << "step,time,normalized_error\n" << std::setprecision(17);
        for (int k = 1; k < traj.frames(); ++k) {
            const double e = normalized_error(reference->fields[static_cast<std::size_t>(k)],
                                              traj.fields[static_cast<std::size_t>(k)]);
            o.errors.push_back(e);
            csv << k << ',' << k * cfg.data.dt << ',' << e << '\n';
        }
    }
    write_json_file(dir / "meta.json", Json{{"steps", opts.steps},
                                            {"frames", traj.frames()},
                                            {"dt", cfg.data.dt},
                                            {"grid", grid_to_json(g)},
                                            {"initial", opts.initial ? opts.initial->string() : "test_sample"},
                                            {"sample", opts.sample},
                                            {"blew_up", o.rollout.blew_up},
                                            {"blowup_step", o.rollout.blowup_step},
                                            {"message", o.rollout.message}});
    if (o.rollout.blew_up) {
        throw BlowUpError(o.rollout.message, o.rollout.blowup_step);
    }
    return o;
}

IdentifyOutcome cmd_identify(const ExperimentConfig& cfg, const fs::path& out, const std::optional<fs::path>& checkpoint)
{
    cfg.validate();
    write_config(cfg, out);
    Json meta;
    const PDENet net = load_for(cfg, out, checkpoint, &meta);
    const DeltaTBlock& b = net.block;
    const fs::path dir = out / "identify";
    ensure_dir(dir);

    IdentifyOutcome o;
    o.coefficients = coefficient_error(b, truth_for(cfg));
    const bool freed = b.config().mode == FilterMode::Freed;

    Json filters = Json::array();
    for (const auto& f : o.coefficients.filters) {
        filters.push_back(Json{{"name", f.name},
                               {"nominal", order_json(f.nominal)},
                               {"alpha", f.detected.alpha ? order_json(*f.detected.alpha) : Json(nullptr)},
                               {"total", f.detected.total ? Json::array({f.detected.total->first,
                                                                         f.detected.total->second})
                                                          : Json(nullptr)},
                               {"matches", f.matches}});
    }
    Json terms = Json::array();
    const CoefficientTruth truth = truth_for(cfg);
    for (std::size_t t = 0; t < o.coefficients.terms.size(); ++t) {
        const auto& st = o.coefficients.terms[t];
        terms.push_back(Json{{"order", order_json(st.order)},
                             {"present", st.present},
                             {"rel_error", st.rel_error},
                             {"learned_mean", st.learned_mean},
                             {"learned_mean_abs", st.learned_mean_abs},
                             {"learned_max_abs", st.learned_max_abs},
                             {"true_mean", st.true_mean},
                             {"true_max_abs", st.true_max_abs}});
        const Field& learned = b.coefficient_values(static_cast<int>(t));
        const std::string tag = std::to_string(st.order.i) + std::to_string(st.order.j);
        double lo = learned.values().empty() ? 0.0 : *std::min_element(learned.values().begin(), learned.values().end());
        double hi = learned.values().empty() ? 0.0 : *std::max_element(learned.values().begin(), learned.values().end());
        for (const auto& [ord, f] : truth.terms) {
            if (ord == st.order) {
                const Field tf = Field::sample(b.config().grid, f);
                for (double v : tf.values()) {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                write_pgm(dir / ("true_" + tag + ".pgm"), tf, lo, hi);
            }
        }
        write_pgm(dir / ("coef_" + tag + ".pgm"), learned, lo, hi);
    }
    write_coefficient_csv(dir / "coefficients.csv", o.coefficients);

    o.report = Json{{"mode", to_string(b.config().mode)},
                    {"depth", net.depth},
                    {"freed", freed},
                    {"identifiable", o.coefficients.identifiable},
                    {"filters", filters},
                    {"coefficients", terms},
                    {"aggregate_error", o.coefficients.aggregate}};
    if (!o.coefficients.identifiable) {
        o.report["note"] = "operator identity cannot be assigned: the learned filters do not carry the sum rules of "
                           "their nominal derivative orders";
    }
    if (b.source()) {
        const fs::path seen_path = out / "train" / "training_u.json";
        ValueSummary seen;
        if (fs::exists(seen_path)) {
            const Json s = read_json_file(seen_path);
            try {
                seen.count = s.at("count").get<std::size_t>();
                seen.p05 = s.at("p05").get<double>();
                seen.p95 = s.at("p95").get<double>();
                seen.histogram = histogram_from_json(s.at("histogram"));
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(seen_path.string() + ": " + e.what());
            }
        } else {
            seen.p05 = SourceModel::kLo;
            seen.p95 = SourceModel::kHi;
            seen.histogram.lo = SourceModel::kLo;
            seen.histogram.hi = SourceModel::kHi;
            seen.histogram.counts.assign(static_cast<std::size_t>(cfg.eval.histogram_bins), 0);
        }
        o.source = source_comparison(b, seen, cfg.data.nonlinear.source_amplitude, cfg.eval.source_points);
        write_source_csv(dir / "source.csv", *o.source);
        write_histogram_csv(dir / "histogram.csv", o.source->histogram);
        o.report["source"] = Json{{"u_p05", o.source->u_p05},
                                  {"u_p95", o.source->u_p95},
                                  {"max_error", o.source->max_error},
                                  {"max_error_central", o.source->max_error_central},
                                  {"value_at_zero", (*b.source())(0.0)}};
    }
    write_json_file(dir / "report.json", o.report);
    return o;
}

EvaluateOutcome cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out, const std::optional<fs::path>& checkpoint)
{
    cfg.validate();
    write_config(cfg, out);
    const PDENet net = load_for(cfg, out, checkpoint);
    const fs::path dir = out / "evaluate";
    ensure_dir(dir);

    EvaluateOutcome o;
    o.curve = prediction_error_study(net.block, cfg.data, cfg.eval.n_test, cfg.eval.horizon, cfg.test_seed());
    const int n_max = cfg.resolved_generalization_n_max();
    o.generalization =
        generalization_study(net.block, cfg.data, n_max, cfg.eval.n_test, cfg.eval.horizon, cfg.test_seed());
    write_error_curve_csv(dir / "error_curve.csv", o.curve);
    write_error_samples_csv(dir / "error_samples.csv", o.curve);
    write_error_curve_csv(dir / "generalization_curve.csv", o.generalization);
    Json gen = curve_summary(o.generalization);
    gen["n_max"] = n_max;
    o.summary = Json{{"prediction", curve_summary(o.curve)}, {"generalization", gen}, {"depth", net.depth}};
    write_json_file(dir / "summary.json", o.summary);
    return o;
}

Json cmd_report(const ExperimentConfig& cfg, const fs::path& out)
{
    cfg.validate();
    write_config(cfg, out);
    const auto found = checkpoints_in(out / "train");
    if (found.empty()) {
        throw IoError("no checkpoints in " + (out / "train").string() + "; run train first");
    }
    const fs::path dir = out / "report";
    ensure_dir(dir);
    const CoefficientTruth truth = truth_for(cfg);

    std::ofstream csv(dir / "coefficient_error_vs_depth.csv", std::ios::trunc);
    if (!csv) {
        throw IoError("cannot write " + (dir / "coefficient_error_vs_depth.csv").string());
    }
    csv << std::setprecision(17);
    Json stages = Json::array();
    bool header = false;
    for (const auto& [depth, path] : found) {
        Json meta;
        const PDENet net = load_checkpoint(path, &meta);
        const CoefficientReport rep = coefficient_error(net.block, truth);
        if (!header) {
            csv << "depth,aggregate";
            for (const auto& t : rep.terms) {
                csv << ",c" << t.order.i << t.order.j;
            }
            csv << '\n';
            header = true;
        }
        csv << depth << ',' << rep.aggregate;
        for (const auto& t : rep.terms) {
            csv << ',' << t.rel_error;
        }
        csv << '\n';
        Json st{{"depth", depth},
                {"checkpoint", path.filename().string()},
                {"coefficient_error", rep.aggregate},
                {"identifiable", rep.identifiable}};
        for (const char* key : {"initial_loss", "final_loss", "iterations", "status", "blew_up"}) {
            if (meta.contains(key)) {
                st[key] = meta[key];
            }
        }
        stages.push_back(st);
    }
    csv.flush();
    if (!csv) {
        throw IoError("write failed: " + (dir / "coefficient_error_vs_depth.csv").string());
    }
    Json report{{"kind", to_string(cfg.kind)}, {"mode", to_string(cfg.block.mode)}, {"stages", stages}};
    for (const char* part : {"evaluate/summary.json", "identify/report.json"}) {
        const fs::path p = out / part;
        if (fs::exists(p)) {
            report[fs::path(part).parent_path().string()] = read_json_file(p);
        }
    }
    write_json_file(dir / "summary.json", report);
    return report;
}

} // namespace pdenet
