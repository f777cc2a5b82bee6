#pragma once

// Multi-resolution B-spline registration driven by stochastic first-order
// optimization of the control-point coefficients.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sctreg/bspline.hpp"
#include "sctreg/errors.hpp"
#include "sctreg/mind.hpp"
#include "sctreg/preprocess.hpp"
#include "sctreg/similarity.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

enum class MetricKind { mse, mattes_mi, mind, feature };

inline std::string metric_name(MetricKind k)
{
    switch (k) {
    case MetricKind::mse: return "mse";
    case MetricKind::mattes_mi: return "nmi";
    case MetricKind::mind: return "mind";
    case MetricKind::feature: return "feat";
    }
    return "mse";
}

inline MetricKind parse_metric_kind(const std::string& s)
{
    if (s == "mse") return MetricKind::mse;
    if (s == "nmi" || s == "mi" || s == "mattes") return MetricKind::mattes_mi;
    if (s == "mind") return MetricKind::mind;
    if (s == "feat" || s == "feature") return MetricKind::feature;
    throw ValidationError("unknown metric '" + s + "' (expected mse|nmi|mind|feat)");
}

struct MetricConfig {
    MetricKind kind = MetricKind::mse;
    MattesConfig mattes{};
    MindConfig mind{};
    FeatureDistance feature_distance = FeatureDistance::l1;
};

/// Per-parameter adaptive moment estimation. The step is scaled by
/// (1 + k / decay_iterations)^-decay_power at iteration k of a level
/// (decay_iterations = 0 disables the decay). Validation and best-iterate
/// acceptance use an exponential average of the iterates.
struct OptimizerConfig {
    double step_size = 0.5; // mm at the finest grid, scaled with grid spacing on coarser levels
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay_iterations = 200;
    double decay_power = 0.7;
    double average_decay = 0.98; // exponential iterate average used for validation and acceptance; 0 disables
};

struct RegistrationConfig {
    int levels = 3;
    double final_grid_spacing = 10.0; // mm
    MetricConfig metric{};
    std::size_t samples_per_iter = 2048;
    int max_iters_per_level = 500;
    OptimizerConfig optimizer{};
    int convergence_window = 20;
    double convergence_tol = 1e-4;
    std::size_t validation_samples = 8192;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (levels < 1) throw ValidationError("registration: levels must be >= 1");
        if (!(final_grid_spacing > 0)) throw ValidationError("registration: final grid spacing must be positive");
        if (samples_per_iter < 64) throw ValidationError("registration: samples_per_iter must be >= 64");
        if (max_iters_per_level < 0) throw ValidationError("registration: max_iters_per_level must be >= 0");
        if (convergence_window < 1) throw ValidationError("registration: convergence_window must be >= 1");
        if (validation_samples < 64) throw ValidationError("registration: validation_samples must be >= 64");
        if (!(optimizer.step_size > 0)) throw ValidationError("registration: step size must be positive");
        if (!(optimizer.average_decay >= 0 && optimizer.average_decay < 1))
            throw ValidationError("registration: average_decay must lie in [0, 1)");
    }
};

struct LevelTrace {
    int level = 0;              // 0 = full resolution
    double grid_spacing = 0;    // mm
    Index3 grid_dims{};
    std::vector<double> train_cost;      // stochastic cost per iteration
    std::vector<double> validation_cost; // cost on the level's fixed validation plan, after each update
    double initial_cost = 0;  // validation cost before the first update
    double accepted_cost = 0; // validation cost of the returned iterate
    int accepted_iteration = 0; // 0 = level start
    int iterations = 0;
    bool converged = false;
    bool non_finite = false;
};

struct RegistrationResult {
    BSplineTransform transform;
    std::vector<LevelTrace> levels; // coarse to fine
    double wall_time = 0;            // seconds
    bool aborted = false;
    std::string abort_reason;
};

/// Thrown on a non-finite cost, gradient or parameter; carries the trace up to the failure.
class RegistrationAborted : public NumericError {
public:
    RegistrationAborted(const std::string& what, RegistrationResult partial)
        : NumericError(what), partial_(std::move(partial)) {}
    const RegistrationResult& partial() const { return partial_; }

private:
    RegistrationResult partial_;
};

/// Feature volumes for the feature metric, each on its image's grid.
struct FeatureVolumes {
    const Volume* fixed = nullptr;
    const Volume* moving = nullptr;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t level_seed(std::uint64_t seed, int level, std::uint64_t iteration)
{
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(level) * 0x100000001B3ull + iteration));
}

using LevelMetric = std::function<MetricValueGrad(const BSplineTransform&, const SamplePlan&, bool)>;

inline bool all_finite(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace detail

/// Registers moving onto fixed: the returned transform maps fixed-space points
/// into the moving image, so moving(T(x)) ~ fixed(x).
inline RegistrationResult register_volumes(const Volume& fixed, const Volume& moving, const BodyMask& fixed_mask,
                                           const RegistrationConfig& cfg, FeatureVolumes features = {})
{
    const auto t0 = std::chrono::steady_clock::now();
    cfg.validate();
    if (fixed.channels() != 1 || moving.channels() != 1)
        throw ValidationError("register: fixed and moving images must be single-channel");
    if (!same_geometry(fixed.geometry(), moving.geometry()))
        throw ValidationError("register: fixed and moving images have different geometries");
    if (!same_geometry(fixed.geometry(), fixed_mask.geometry()))
        throw ValidationError("register: mask geometry differs from the fixed image");
    if (fixed_mask.empty()) throw ValidationError("register: fixed mask is empty");
    const bool want_features = cfg.metric.kind == MetricKind::feature;
    const bool have_features = features.fixed != nullptr || features.moving != nullptr;
    if (want_features != have_features)
        throw ValidationError(want_features ? "register: the feature metric needs fixed and moving feature volumes"
                                            : "register: feature volumes supplied but the metric is not 'feat'");
    if (want_features) {
        if (!features.fixed || !features.moving) throw ValidationError("register: both feature volumes are required");
        if (features.fixed->channels() != features.moving->channels())
            throw ValidationError("register: feature volumes have different channel counts");
        if (!same_geometry(features.fixed->geometry(), fixed.geometry()) ||
            !same_geometry(features.moving->geometry(), moving.geometry()))
            throw ValidationError("register: feature volume geometry differs from its image");
    }

    const auto fixed_pyr = gaussian_pyramid(fixed, cfg.levels);
    const auto moving_pyr = gaussian_pyramid(moving, cfg.levels);
    std::vector<Volume> ffeat_pyr, mfeat_pyr;
    if (want_features) {
        ffeat_pyr = gaussian_pyramid(*features.fixed, cfg.levels);
        mfeat_pyr = gaussian_pyramid(*features.moving, cfg.levels);
    }

    RegistrationResult result;
    const double coarse_spacing = cfg.final_grid_spacing * std::pow(2.0, cfg.levels - 1);
    BSplineTransform T = BSplineTransform::for_domain(fixed.geometry(), coarse_spacing);
    const OptimizerConfig& opt = cfg.optimizer;

    for (int L = cfg.levels - 1; L >= 0; --L) {
        if (L != cfg.levels - 1) T = refine_dyadic(T);
        const Volume& f = fixed_pyr[static_cast<std::size_t>(L)];
        const Volume& m = moving_pyr[static_cast<std::size_t>(L)];
        const BodyMask mask = L == 0 ? fixed_mask : fixed_mask.resampled(f.geometry());
        if (mask.empty()) throw ValidationError("register: fixed mask vanishes at pyramid level " + std::to_string(L));
        const MaskSampler sampler(mask);

        detail::LevelMetric metric;
        std::optional<MattesMutualInformation> mattes;
        Volume fdesc, mdesc;
        switch (cfg.metric.kind) {
        case MetricKind::mse:
            metric = [&](const BSplineTransform& t, const SamplePlan& p, bool g) { return mse_metric(f, m, t, p, g); };
            break;
        case MetricKind::mattes_mi:
            mattes.emplace(f, m, cfg.metric.mattes);
            metric = [&](const BSplineTransform& t, const SamplePlan& p, bool g) { return mattes->evaluate(t, p, g); };
            break;
        case MetricKind::mind:
            fdesc = mind_descriptor(f, cfg.metric.mind);
            mdesc = mind_descriptor(m, cfg.metric.mind);
            metric = [&](const BSplineTransform& t, const SamplePlan& p, bool g) {
                return descriptor_ssd_metric(fdesc, mdesc, t, p, g);
            };
            break;
        case MetricKind::feature: {
            const Volume& ff = ffeat_pyr[static_cast<std::size_t>(L)];
            const Volume& mf = mfeat_pyr[static_cast<std::size_t>(L)];
            metric = [&, dist = cfg.metric.feature_distance](const BSplineTransform& t, const SamplePlan& p, bool g) {
                return feature_metric(ff, mf, t, p, dist, g);
            };
            break;
        }
        }

        const SamplePlan validation = sampler.mask_voxels() <= cfg.validation_samples
                                          ? sampler.full_grid()
                                          : sampler.draw(cfg.validation_samples, detail::level_seed(cfg.seed, L, ~0ull));

        LevelTrace trace;
        trace.level = L;
        trace.grid_spacing = T.grid_spacing()[0];
        trace.grid_dims = T.grid_dims();
        trace.initial_cost = metric(T, validation, false).cost;
        trace.accepted_cost = trace.initial_cost;

        const auto abort = [&](const std::string& why) {
            trace.non_finite = true;
            result.levels.push_back(trace);
            result.transform = T;
            result.aborted = true;
            result.abort_reason = why;
            result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            throw RegistrationAborted("register: " + why + " at level " + std::to_string(L) + ", iteration " +
                                          std::to_string(trace.iterations),
                                      result);
        };
        if (!std::isfinite(trace.initial_cost)) abort("non-finite initial cost");

        const std::size_t np = T.num_parameters();
        std::vector<double> coeffs(T.coefficients().begin(), T.coefficients().end());
        std::vector<double> best = coeffs;
        std::vector<double> m1(np, 0.0), m2(np, 0.0);
        std::vector<double> best_history{trace.initial_cost};
        double b1t = 1.0, b2t = 1.0;
        std::vector<double> avg(np, 0.0), cand(np);
        double eat = 1.0;

        for (int it = 0; it < cfg.max_iters_per_level; ++it) {
            const SamplePlan plan = sampler.draw(cfg.samples_per_iter, detail::level_seed(cfg.seed, L, static_cast<std::uint64_t>(it)));
            const MetricValueGrad r = metric(T, plan, true);
            trace.train_cost.push_back(r.cost);
            ++trace.iterations;
            if (!std::isfinite(r.cost)) abort("non-finite cost");
            if (!detail::all_finite(r.grad)) abort("non-finite gradient");

            b1t *= opt.beta1;
            b2t *= opt.beta2;
            const double lr0 = opt.step_size * trace.grid_spacing / cfg.final_grid_spacing;
            const double lr = opt.decay_iterations > 0
                                  ? lr0 * std::pow(1.0 + it / opt.decay_iterations, -opt.decay_power)
                                  : lr0;
            for (std::size_t i = 0; i < np; ++i) {
                const double g = r.grad[i];
                m1[i] = opt.beta1 * m1[i] + (1 - opt.beta1) * g;
                m2[i] = opt.beta2 * m2[i] + (1 - opt.beta2) * g * g;
                const double mhat = m1[i] / (1 - b1t);
                const double vhat = m2[i] / (1 - b2t);
                coeffs[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
            }
            if (!detail::all_finite(coeffs)) abort("non-finite coefficients");
            const double ea = opt.average_decay;
            eat *= ea;
            for (std::size_t i = 0; i < np; ++i) avg[i] = ea * avg[i] + (1 - ea) * coeffs[i];
            for (std::size_t i = 0; i < np; ++i) cand[i] = avg[i] / (1 - eat);
            T.set_coefficients(cand);
            const double vcost = metric(T, validation, false).cost;
            T.set_coefficients(coeffs);
            trace.validation_cost.push_back(vcost);
            if (!std::isfinite(vcost)) abort("non-finite validation cost");
            if (vcost < trace.accepted_cost) {
                trace.accepted_cost = vcost;
                trace.accepted_iteration = it + 1;
                best = cand;
            }
            best_history.push_back(trace.accepted_cost);
            const auto w = static_cast<std::size_t>(cfg.convergence_window);
            if (best_history.size() > w) {
                const double before = best_history[best_history.size() - 1 - w];
                const double now = best_history.back();
                if (before - now < cfg.convergence_tol * std::abs(before)) {
                    trace.converged = true;
                    break;
                }
            }
        }
        T.set_coefficients(best);
        result.levels.push_back(std::move(trace));
    }
    result.transform = std::move(T);
    result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

struct LevelSummary {
    int level = 0;
    double initial_cost = 0;
    double final_cost = 0;
    double relative_decrease = 0;
    int iterations = 0;
    bool converged = false;
    bool non_finite = false;
};

struct CostTraceSummary {
    std::vector<LevelSummary> levels;
    bool non_finite_terminal = false;
};

inline CostTraceSummary evaluate_cost_trace(const RegistrationResult& r)
{
    if (r.levels.empty()) throw ValidationError("evaluate_cost_trace: empty trace");
    CostTraceSummary s;
    for (const auto& t : r.levels) {
        LevelSummary l;
        l.level = t.level;
        l.initial_cost = t.initial_cost;
        l.final_cost = t.non_finite ? std::numeric_limits<double>::quiet_NaN() : t.accepted_cost;
        const double scale = std::abs(t.initial_cost);
        l.relative_decrease = (scale > 1e-300 && std::isfinite(l.final_cost)) ? (t.initial_cost - l.final_cost) / scale : 0.0;
        l.iterations = t.iterations;
        l.converged = t.converged;
        l.non_finite = t.non_finite;
        s.levels.push_back(l);
    }
    s.non_finite_terminal = r.aborted || r.levels.back().non_finite;
    return s;
}

} // namespace sctreg
