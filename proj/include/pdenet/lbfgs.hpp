#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pdenet {

struct LbfgsOptions {
    int memory = 10;
    int max_iterations = 500;
    double c1 = 1e-4;
    double c2 = 0.9;
    /// Stop when ||g||_2 < grad_tol.
    double grad_tol = 1e-8;
    /// Stop when |f_prev - f| <= rel_tol * max(|f_prev|, |f|).
    double rel_tol = 1e-10;
    int max_line_search = 30;
};

enum class LbfgsStatus { GradientTolerance, RelativeTolerance, MaxIterations, LineSearchFailed };

std::string to_string(LbfgsStatus s);

struct LbfgsIterate {
    int iteration = 0;
    double f = 0.0;
    double grad_norm = 0.0;
    int evaluations = 0;
};

struct LbfgsResult {
    std::vector<double> x;
    double f = 0.0;
    double grad_norm = 0.0;
    LbfgsStatus status = LbfgsStatus::MaxIterations;
    int iterations = 0;
    int evaluations = 0;
    std::vector<LbfgsIterate> history;
};

/// f(x, g) returns the objective and writes its gradient into g.
using Objective = std::function<double(std::span<const double> x, std::span<double> g)>;

/// Limited-memory BFGS with a strong-Wolfe line search (bracketing plus
/// safeguarded cubic zoom). The returned point is the best one evaluated at an
/// accepted step; history[0] is the starting point. on_iterate, if set, sees
/// every accepted iterate.
LbfgsResult lbfgs_minimize(const Objective& f, std::vector<double> x0, const LbfgsOptions& opts = {},
                           const std::function<void(const LbfgsIterate&)>& on_iterate = {});

} // namespace pdenet
