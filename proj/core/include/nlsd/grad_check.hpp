#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nlsd/rng.hpp"
#include "nlsd/tape.hpp"

namespace nlsd::ad {

/// Builds a scalar loss on `t` from parameter leaves (in the order given).
using TapeFunction = std::function<Var(Tape& t, std::span<const Var> params)>;

struct GradCheckResult {
    double max_rel_error = 0.0;  // max |analytic - numeric| / max(1, |numeric|)
    std::size_t worst_param = 0;
    Eigen::Index worst_entry = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients with central differences of step h at
/// `params`. Raises NonSmoothPoint when a +-h step changes the side of any
/// kink (relu, abs, gates, eigenvalue floor), or, with a positive
/// `kink_margin`, when a kink lies closer than that to the probe.
GradCheckResult grad_check(const TapeFunction& f, const std::vector<Dense>& params, double h = 1e-5,
                           double kink_margin = -1.0);

struct ResampledGradCheck {
    GradCheckResult result;
    int attempts = 0;  // 1 when the first probe was smooth
};

/// Draws probe points from `sample` until one is smooth (at most max_attempts).
ResampledGradCheck grad_check_resampled(const TapeFunction& f, const std::function<std::vector<Dense>(Rng&)>& sample,
                                        Rng& rng, double h = 1e-5, int max_attempts = 50,
                                        double kink_margin = -1.0);

}  // namespace nlsd::ad
