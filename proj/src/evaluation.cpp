#include "pdenet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>

namespace pdenet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::ofstream open_out(const std::filesystem::path& path, bool binary = false)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) {
        throw IoError("cannot write " + path.string());
    }
    os << std::setprecision(17);
    return os;
}

void check_written(std::ofstream& os, const std::filesystem::path& path)
{
    os.flush();
    if (!os) {
        throw IoError("write failed: " + path.string());
    }
}

// Runs body(i) for i in [0, n) in parallel and rethrows the first failure.
template <class Body>
void parallel_for(int n, Body&& body)
{
    std::exception_ptr failure;
    std::mutex mu;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

double l2(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

} // namespace

double normalized_error(const Field& u, const Field& u_pred)
{
    if (!(u.grid() == u_pred.grid())) {
        throw SizeMismatchError("normalized_error needs fields on the same grid");
    }
    const double mean = u.mean();
    double num = 0.0;
    double den = 0.0;
    const auto a = u.values();
    const auto b = u_pred.values();
    for (std::size_t k = 0; k < a.size(); ++k) {
        num += (b[k] - a[k]) * (b[k] - a[k]);
        den += (a[k] - mean) * (a[k] - mean);
    }
    if (!(den > 0.0)) {
        throw DegenerateFieldError("normalized_error: reference field is constant");
    }
    return num / den;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty()) {
        throw SizeMismatchError("percentile of an empty set");
    }
    q = std::clamp(q, 0.0, 1.0);
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    if (frac == 0.0 || lo == hi) {
        return values[lo];
    }
    if (std::isinf(values[hi])) {
        return kInf;
    }
    return values[lo] + frac * (values[hi] - values[lo]);
}

void ErrorCurve::summarize()
{
    const std::size_t nt = times.size();
    p25.assign(nt, 0.0);
    median.assign(nt, 0.0);
    p75.assign(nt, 0.0);
    if (errors.empty()) {
        return;
    }
    std::vector<double> col(errors.size());
    for (std::size_t k = 0; k < nt; ++k) {
        for (std::size_t s = 0; s < errors.size(); ++s) {
            col[s] = errors[s].at(k);
        }
        p25[k] = percentile(col, 0.25);
        median[k] = percentile(col, 0.5);
        p75[k] = percentile(col, 0.75);
    }
}

int ErrorCurve::blowups() const noexcept
{
    return static_cast<int>(std::count_if(blowup_step.begin(), blowup_step.end(), [](int s) { return s >= 0; }));
}

TestSet make_test_set(const DataSpec& spec, int n_test, int horizon, std::uint64_t seed)
{
    if (n_test < 1 || horizon < 1) {
        throw ConfigError("a test set needs n_test >= 1 and horizon >= 1");
    }
    TestSet set;
    set.dt = spec.dt;
    set.initial.resize(static_cast<std::size_t>(n_test));
    set.reference.resize(static_cast<std::size_t>(n_test));
    const double t_end = horizon * spec.dt;
    parallel_for(n_test, [&](int i) {
        auto rng = sample_rng(seed, static_cast<std::uint64_t>(i));
        Trajectory start;
        start.dt = spec.dt;
        start.fields.push_back(sample_initial_condition(spec.init, spec.grid, rng));
        const Field u0 = add_noise(start, spec.noise_level, rng).fields.front();
        Trajectory ref = spec.kind == PdeKind::Linear
                             ? solve_linear_convdiff(u0, t_end, spec.dt, spec.spectral)
                             : solve_nonlinear_diffusion(u0, t_end, spec.dt, spec.nonlinear);
        set.initial[static_cast<std::size_t>(i)] = ref.fields.front();
        set.reference[static_cast<std::size_t>(i)] = std::move(ref);
    });
    return set;
}

ErrorCurve prediction_error_study(const DeltaTBlock& block, const TestSet& set)
{
    const int n = static_cast<int>(set.initial.size());
    const int horizon = set.horizon();
    if (n == 0 || horizon < 1) {
        throw ConfigError("empty test set");
    }
    if (!(set.initial.front().grid() == block.config().grid)) {
        throw SizeMismatchError("test set grid differs from the block grid");
    }
    ErrorCurve curve;
    curve.times.resize(static_cast<std::size_t>(horizon));
    for (int k = 0; k < horizon; ++k) {
        curve.times[static_cast<std::size_t>(k)] = (k + 1) * set.dt;
    }
    curve.errors.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(horizon), kInf));
    curve.blowup_step.assign(static_cast<std::size_t>(n), -1);
    parallel_for(n, [&](int s) {
        const auto si = static_cast<std::size_t>(s);
        const Rollout r = rollout(block, set.initial[si], horizon);
        const Trajectory& ref = set.reference[si];
        for (int k = 1; k < r.traj.frames(); ++k) {
            curve.errors[si][static_cast<std::size_t>(k - 1)] =
                normalized_error(ref.fields[static_cast<std::size_t>(k)], r.traj.fields[static_cast<std::size_t>(k)]);
        }
        if (r.blew_up) {
            curve.blowup_step[si] = r.blowup_step;
        }
    });
    curve.summarize();
    return curve;
}

ErrorCurve prediction_error_study(const DeltaTBlock& block, const DataSpec& spec, int n_test, int horizon,
                                  std::uint64_t seed)
{
    return prediction_error_study(block, make_test_set(spec, n_test, horizon, seed));
}

ErrorCurve generalization_study(const DeltaTBlock& block, DataSpec spec, int n_max, int n_test, int horizon,
                                std::uint64_t seed)
{
    if (n_max < 1) {
        throw ConfigError("n_max must be at least 1");
    }
    spec.init.n_max = n_max;
    return prediction_error_study(block, spec, n_test, horizon, seed);
}

CoefficientTruth CoefficientTruth::linear(const LinearPde& pde)
{
    CoefficientTruth t;
    const double c = pde.c;
    const double d = pde.d;
    t.terms.emplace_back(Order{1, 0}, pde.a);
    t.terms.emplace_back(Order{0, 1}, pde.b);
    t.terms.emplace_back(Order{2, 0}, [c](double, double) { return c; });
    t.terms.emplace_back(Order{0, 2}, [d](double, double) { return d; });
    return t;
}

CoefficientTruth CoefficientTruth::nonlinear(double c)
{
    CoefficientTruth t;
    t.terms.emplace_back(Order{2, 0}, [c](double, double) { return c; });
    t.terms.emplace_back(Order{0, 2}, [c](double, double) { return c; });
    return t;
}

std::vector<FilterIdentity> filter_identities(const DeltaTBlock& block, double tol)
{
    std::vector<FilterIdentity> out;
    for (int f = 0; f < block.filter_count(); ++f) {
        FilterIdentity id;
        id.name = block.filter_name(f);
        id.nominal = f == 0 ? Order{0, 0} : block.orders()[static_cast<std::size_t>(f - 1)];
        id.detected = sum_rule_order(block.filter(f), tol);
        id.matches = id.detected.alpha.has_value() && *id.detected.alpha == id.nominal;
        out.push_back(std::move(id));
    }
    return out;
}

CoefficientReport coefficient_error(const DeltaTBlock& block, const CoefficientTruth& truth)
{
    const Grid2D& g = block.config().grid;
    std::vector<Field> true_fields;
    double ref_norm = 0.0;
    for (const auto& [order, f] : truth.terms) {
        true_fields.push_back(Field::sample(g, f));
        ref_norm = std::max(ref_norm, l2(true_fields.back().values()));
    }
    CoefficientReport rep;
    double sum = 0.0;
    for (int t = 0; t < block.term_count(); ++t) {
        CoefficientStat st;
        st.order = block.orders()[static_cast<std::size_t>(t)];
        const Field& learned = block.coefficient_values(t);
        Field truth_field(g);
        for (std::size_t k = 0; k < truth.terms.size(); ++k) {
            if (truth.terms[k].first == st.order) {
                truth_field = true_fields[k];
                st.present = true;
            }
        }
        const Field diff = learned - truth_field;
        const double tn = l2(truth_field.values());
        if (st.present && tn > 0.0) {
            st.rel_error = l2(diff.values()) / tn;
        } else {
            st.rel_error = ref_norm > 0.0 ? l2(learned.values()) / ref_norm : l2(learned.values());
        }
        double mean_abs = 0.0;
        for (double v : learned.values()) {
            mean_abs += std::abs(v);
        }
        st.learned_mean = learned.mean();
        st.learned_mean_abs = mean_abs / static_cast<double>(learned.size());
        st.learned_max_abs = learned.max_abs();
        st.true_mean = truth_field.mean();
        st.true_max_abs = truth_field.max_abs();
        sum += st.rel_error;
        rep.terms.push_back(st);
    }
    rep.aggregate = rep.terms.empty() ? 0.0 : sum / static_cast<double>(rep.terms.size());
    rep.filters = filter_identities(block);
    rep.identifiable = std::all_of(rep.filters.begin(), rep.filters.end(), [](const auto& f) { return f.matches; });
    return rep;
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, int bins)
{
    if (bins < 1 || !(hi > lo)) {
        throw ConfigError("histogram needs bins >= 1 and hi > lo");
    }
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double w = h.width();
    for (double v : values) {
        if (std::isnan(v)) {
            continue;
        }
        const double pos = std::floor((v - lo) / w);
        const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
        ++h.counts[b];
    }
    return h;
}

ValueSummary summarize_values(std::span<const double> values, int bins)
{
    if (values.empty()) {
        throw ConfigError("no values to summarize");
    }
    ValueSummary v;
    v.count = values.size();
    std::vector<double> copy(values.begin(), values.end());
    v.p05 = percentile(copy, 0.05);
    v.p95 = percentile(std::move(copy), 0.95);
    v.histogram = make_histogram(values, SourceModel::kLo, SourceModel::kHi, bins);
    return v;
}

SourceComparison source_comparison(const DeltaTBlock& block, const ValueSummary& seen, double amplitude, int points)
{
    if (!block.source()) {
        throw ConfigError("the block has no source term");
    }
    if (points < 2) {
        throw ConfigError("source comparison needs at least 2 points");
    }
    const SourceModel& s = *block.source();
    SourceComparison sc;
    sc.u_p05 = seen.p05;
    sc.u_p95 = seen.p95;
    sc.histogram = seen.histogram;
    for (int k = 0; k < points; ++k) {
        const double u = SourceModel::kLo + (SourceModel::kHi - SourceModel::kLo) * k / (points - 1);
        const double tv = amplitude * std::sin(u);
        const double lv = s(u);
        sc.u.push_back(u);
        sc.truth.push_back(tv);
        sc.learned.push_back(lv);
        const double e = std::abs(lv - tv);
        sc.max_error = std::max(sc.max_error, e);
        if (u >= sc.u_p05 && u <= sc.u_p95) {
            sc.max_error_central = std::max(sc.max_error_central, e);
        }
    }
    // the table may straddle the central interval without a point inside it
    for (double u : {sc.u_p05, sc.u_p95}) {
        sc.max_error_central = std::max(sc.max_error_central, std::abs(s(u) - amplitude * std::sin(u)));
    }
    return sc;
}

SourceComparison source_comparison(const DeltaTBlock& block, std::span<const double> training_u, double amplitude,
                                   int points, int bins)
{
    if (!block.source()) {
        throw ConfigError("the block has no source term");
    }
    return source_comparison(block, summarize_values(training_u, bins), amplitude, points);
}

void write_error_curve_csv(const std::filesystem::path& path, const ErrorCurve& curve)
{
    auto os = open_out(path);
    os << "time,p25,median,p75\n";
    for (std::size_t k = 0; k < curve.times.size(); ++k) {
        os << curve.times[k] << ',' << curve.p25.at(k) << ',' << curve.median.at(k) << ',' << curve.p75.at(k) << '\n';
    }
    check_written(os, path);
}

void write_error_samples_csv(const std::filesystem::path& path, const ErrorCurve& curve)
{
    auto os = open_out(path);
    os << "time";
    for (std::size_t s = 0; s < curve.errors.size(); ++s) {
        os << ",s" << s;
    }
    os << '\n';
    for (std::size_t k = 0; k < curve.times.size(); ++k) {
        os << curve.times[k];
        for (const auto& row : curve.errors) {
            os << ',' << row.at(k);
        }
        os << '\n';
    }
    check_written(os, path);
}

void write_coefficient_csv(const std::filesystem::path& path, const CoefficientReport& report)
{
    auto os = open_out(path);
    os << "i,j,present,rel_error,learned_mean,learned_mean_abs,learned_max_abs,true_mean,true_max_abs\n";
    for (const auto& t : report.terms) {
        os << t.order.i << ',' << t.order.j << ',' << (t.present ? 1 : 0) << ',' << t.rel_error << ','
           << t.learned_mean << ',' << t.learned_mean_abs << ',' << t.learned_max_abs << ',' << t.true_mean << ','
           << t.true_max_abs << '\n';
    }
    check_written(os, path);
}

void write_source_csv(const std::filesystem::path& path, const SourceComparison& sc)
{
    auto os = open_out(path);
    os << "u,true,learned\n";
    for (std::size_t k = 0; k < sc.u.size(); ++k) {
        os << sc.u[k] << ',' << sc.truth[k] << ',' << sc.learned[k] << '\n';
    }
    check_written(os, path);
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h)
{
    auto os = open_out(path);
    os << "lo,hi,count\n";
    const double w = h.width();
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
        os << h.lo + w * static_cast<double>(b) << ',' << h.lo + w * static_cast<double>(b + 1) << ',' << h.counts[b]
           << '\n';
    }
    check_written(os, path);
}

void write_pgm(const std::filesystem::path& path, const Field& u, double lo, double hi)
{
    const Grid2D& g = u.grid();
    auto os = open_out(path, true);
    os << "P5\n" << g.nx << ' ' << g.ny << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<unsigned char> row(static_cast<std::size_t>(g.nx));
    for (int j = g.ny - 1; j >= 0; --j) {
        for (int i = 0; i < g.nx; ++i) {
            const double v = std::isfinite(u(i, j)) ? (u(i, j) - lo) / span : 0.0;
            row[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    check_written(os, path);
}

void write_pgm(const std::filesystem::path& path, const Field& u)
{
    double lo = kInf;
    double hi = -kInf;
    for (double v : u.values()) {
        if (std::isfinite(v)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!(hi >= lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    write_pgm(path, u, lo, hi);
}

} // namespace pdenet
