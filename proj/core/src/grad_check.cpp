#include "nlsd/grad_check.hpp"

#include <cmath>

#include "nlsd/errors.hpp"

namespace nlsd::ad {

namespace {

struct Evaluation {
    double value;
    std::uint64_t branches;
};

Evaluation evaluate(const TapeFunction& f, const std::vector<Dense>& params) {
    Tape t;
    t.set_branch_tracking(true);
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(t.constant(p));
    const Var loss = f(t, vars);
    const Dense& v = t.value(loss);
    if (v.size() != 1) throw NotScalar("grad_check: function must return a scalar");
    return {v(0, 0), t.branch_hash()};
}

}  // namespace

GradCheckResult grad_check(const TapeFunction& f, const std::vector<Dense>& params, double h, double kink_margin) {
    Tape t;
    t.set_branch_tracking(true);
    if (kink_margin > 0.0) t.set_kink_margin(kink_margin);
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(t.parameter(p));
    const Var loss = f(t, vars);
    if (t.kink_hits() > 0) {
        throw NonSmoothPoint("probe lies within " + std::to_string(kink_margin) + " of a non-differentiable point (" +
                             std::to_string(t.kink_hits()) + " hits)");
    }
    const std::uint64_t base = t.branch_hash();
    t.backward(loss);

    GradCheckResult res;
    std::vector<Dense> probe = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Dense analytic = t.grad(vars[p]);
        for (Eigen::Index i = 0; i < params[p].size(); ++i) {
            const double orig = params[p].data()[i];
            probe[p].data()[i] = orig + h;
            const Evaluation fp = evaluate(f, probe);
            probe[p].data()[i] = orig - h;
            const Evaluation fm = evaluate(f, probe);
            probe[p].data()[i] = orig;
            if (fp.branches != base || fm.branches != base) {
                throw NonSmoothPoint("central difference on parameter " + std::to_string(p) + " entry " +
                                     std::to_string(i) + " crosses a non-differentiable point");
            }
            const double numeric = (fp.value - fm.value) / (2.0 * h);
            const double a = analytic.data()[i];
            const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
            ++res.entries_checked;
            if (err > res.max_rel_error || res.entries_checked == 1) {
                res.max_rel_error = std::max(res.max_rel_error, err);
                if (err >= res.max_rel_error) {
                    res.worst_param = p;
                    res.worst_entry = i;
                    res.analytic = a;
                    res.numeric = numeric;
                }
            }
        }
    }
    return res;
}

ResampledGradCheck grad_check_resampled(const TapeFunction& f, const std::function<std::vector<Dense>(Rng&)>& sample,
                                        Rng& rng, double h, int max_attempts, double kink_margin) {
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        auto params = sample(rng);
        try {
            return ResampledGradCheck{grad_check(f, params, h, kink_margin), attempt};
        } catch (const NonSmoothPoint&) {
            continue;
        }
    }
    throw NonSmoothPoint("no smooth probe found in " + std::to_string(max_attempts) + " attempts");
}

}  // namespace nlsd::ad
