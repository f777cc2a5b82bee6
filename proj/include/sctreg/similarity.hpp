#pragma once

// Registration similarity metrics. Every metric is oriented for minimization
// and returns its gradient with respect to the B-spline coefficients, in the
// transform's coefficient order.
//
// The moving image is modelled by trilinear interpolation; spatial gradients
// are the exact derivatives of that interpolant, so analytic gradients agree
// with finite differences of the cost away from voxel-cell boundaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "sctreg/bspline.hpp"
#include "sctreg/errors.hpp"
#include "sctreg/parallel.hpp"
#include "sctreg/preprocess.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

enum class SampleStrategy { full_grid, uniform_random };

/// Fixed-image points at which a metric is evaluated (voxel centers inside the mask).
struct SamplePlan {
    std::vector<Vec3> points;
    std::uint64_t seed = 0;
    SampleStrategy strategy = SampleStrategy::uniform_random;

    std::size_t count() const { return points.size(); }
};

/// Draws sample plans from a fixed mask. The list of mask voxels is built once.
class MaskSampler {
public:
    explicit MaskSampler(const BodyMask& mask) : geometry_(mask.geometry())
    {
        if (mask.empty()) throw ValidationError("sample plan: mask is empty");
        inside_.reserve(mask.count());
        for (std::size_t v = 0; v < mask.volume().voxel_count(); ++v)
            if (mask.inside(v)) inside_.push_back(v);
    }

    std::size_t mask_voxels() const { return inside_.size(); }

    /// `count` mask voxel centers drawn uniformly with replacement.
    SamplePlan draw(std::size_t count, std::uint64_t seed) const
    {
        if (count == 0) throw ValidationError("sample plan: count must be positive");
        SamplePlan plan;
        plan.seed = seed;
        plan.strategy = SampleStrategy::uniform_random;
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, inside_.size() - 1);
        plan.points.reserve(count);
        for (std::size_t i = 0; i < count; ++i) plan.points.push_back(center(inside_[pick(rng)]));
        return plan;
    }

    /// Every mask voxel center in index order.
    SamplePlan full_grid() const
    {
        SamplePlan plan;
        plan.strategy = SampleStrategy::full_grid;
        plan.points.reserve(inside_.size());
        for (std::size_t v : inside_) plan.points.push_back(center(v));
        return plan;
    }

private:
    Vec3 center(std::size_t v) const
    {
        const auto nx = static_cast<std::size_t>(geometry_.dims[0]);
        const auto ny = static_cast<std::size_t>(geometry_.dims[1]);
        return geometry_.voxel_center(static_cast<int>(v % nx), static_cast<int>((v / nx) % ny),
                                      static_cast<int>(v / (nx * ny)));
    }

    Geometry geometry_;
    std::vector<std::size_t> inside_;
};

inline SamplePlan make_sample_plan(const BodyMask& mask, std::size_t count, std::uint64_t seed,
                                   SampleStrategy strategy = SampleStrategy::uniform_random)
{
    const MaskSampler sampler(mask);
    return strategy == SampleStrategy::full_grid ? sampler.full_grid() : sampler.draw(count, seed);
}

struct MetricValueGrad {
    double cost = 0;
    std::vector<double> grad;  // empty when the gradient was not requested
    std::size_t valid_samples = 0;
};

namespace detail {

inline void scatter_gradient(const BSplineTransform& T, const SplineSupport& s, const Vec3& dy, std::vector<double>& grad)
{
    const std::size_t ncp = T.num_control_points();
    for (int c = 0; c < 4; ++c)
        for (int b = 0; b < 4; ++b) {
            const double wyz = s.w[1][b] * s.w[2][c];
            const std::size_t row = T.control_point_id(s.base[0], s.base[1] + b, s.base[2] + c);
            for (int a = 0; a < 4; ++a) {
                const double w = s.w[0][a] * wyz;
                const std::size_t id = row + a;
                grad[id] += dy[0] * w;
                grad[ncp + id] += dy[1] * w;
                grad[2 * ncp + id] += dy[2] * w;
            }
        }
}

struct Partial {
    double cost = 0;
    std::size_t valid = 0;
    std::vector<double> grad;
};

inline MetricValueGrad reduce_partials(std::vector<Partial>& parts, std::size_t nparams, bool want_grad, const char* name)
{
    MetricValueGrad out;
    if (want_grad) out.grad.assign(nparams, 0.0);
    for (auto& p : parts) {
        out.cost += p.cost;
        out.valid_samples += p.valid;
        if (want_grad)
            for (std::size_t i = 0; i < nparams; ++i) out.grad[i] += p.grad[i];
    }
    if (out.valid_samples == 0)
        throw ValidationError(std::string(name) + ": no sample maps inside the moving image");
    const double inv = 1.0 / static_cast<double>(out.valid_samples);
    out.cost *= inv;
    for (double& g : out.grad) g *= inv;
    return out;
}

/// Map-reduce over the plan for metrics that are a mean of per-point losses.
/// kernel(fixed_values, moving_values, dloss_dmoving) returns the point loss.
template <class Kernel>
MetricValueGrad pointwise_metric(const Volume& fixed, const Volume& moving, const BSplineTransform& T,
                                 const SamplePlan& plan, bool want_grad, const char* name, Kernel&& kernel)
{
    if (plan.points.empty()) throw ValidationError(std::string(name) + ": empty sample plan");
    const int nc = moving.channels();
    const std::size_t np = T.num_parameters();
    std::vector<Partial> parts(kReductionChunks);
    parallel_chunks(plan.points.size(), kReductionChunks, [&](std::size_t chunk, std::size_t b, std::size_t e) {
        Partial& P = parts[chunk];
        if (want_grad) P.grad.assign(np, 0.0);
        std::vector<double> f(static_cast<std::size_t>(nc)), m(static_cast<std::size_t>(nc)),
            gm(3 * static_cast<std::size_t>(nc)), dl(static_cast<std::size_t>(nc));
        SplineSupport s;
        for (std::size_t i = b; i < e; ++i) {
            const Vec3& x = plan.points[i];
            const bool supported = T.support(x, s);
            const Vec3 y = supported ? x + T.displacement(s) : x;
            if (!sample_linear_with_gradient(moving, y, m, gm)) continue;
            sample_linear_into(fixed, x, 0.0, f);
            P.cost += kernel(std::span<const double>(f), std::span<const double>(m), std::span<double>(dl));
            ++P.valid;
            if (!want_grad || !supported) continue;
            Vec3 dy{0, 0, 0};
            for (int c = 0; c < nc; ++c)
                for (int a = 0; a < 3; ++a) dy[a] += dl[c] * gm[3 * c + a];
            scatter_gradient(T, s, dy, P.grad);
        }
    });
    return reduce_partials(parts, np, want_grad, name);
}

inline void require_single_channel(const Volume& v, const char* op, const char* role)
{
    if (v.channels() != 1) throw ValidationError(std::string(op) + ": " + role + " image must be single-channel");
}

} // namespace detail

/// Mean squared intensity difference.
inline MetricValueGrad mse_metric(const Volume& fixed, const Volume& moving, const BSplineTransform& T,
                                  const SamplePlan& plan, bool want_grad = true)
{
    detail::require_single_channel(fixed, "mse_metric", "fixed");
    detail::require_single_channel(moving, "mse_metric", "moving");
    return detail::pointwise_metric(fixed, moving, T, plan, want_grad, "mse_metric",
                                    [](std::span<const double> f, std::span<const double> m, std::span<double> dl) {
                                        const double r = f[0] - m[0];
                                        dl[0] = -2.0 * r;
                                        return r * r;
                                    });
}

enum class FeatureDistance { l1, l2 };

/// Mean over points of the channel-averaged L1 (or squared L2) feature
/// difference. The L1 subgradient uses sign(0) = 0.
inline MetricValueGrad feature_metric(const Volume& fixed_feat, const Volume& moving_feat, const BSplineTransform& T,
                                      const SamplePlan& plan, FeatureDistance dist = FeatureDistance::l1,
                                      bool want_grad = true)
{
    if (fixed_feat.channels() != moving_feat.channels())
        throw ValidationError("feature_metric: channel mismatch (" + std::to_string(fixed_feat.channels()) + " vs " +
                              std::to_string(moving_feat.channels()) + ")");
    const double inv_c = 1.0 / fixed_feat.channels();
    if (dist == FeatureDistance::l1)
        return detail::pointwise_metric(fixed_feat, moving_feat, T, plan, want_grad, "feature_metric",
                                        [inv_c](std::span<const double> f, std::span<const double> m, std::span<double> dl) {
                                            double loss = 0;
                                            for (std::size_t c = 0; c < f.size(); ++c) {
                                                const double r = f[c] - m[c];
                                                loss += std::abs(r);
                                                dl[c] = r > 0 ? -inv_c : (r < 0 ? inv_c : 0.0);
                                            }
                                            return loss * inv_c;
                                        });
    return detail::pointwise_metric(fixed_feat, moving_feat, T, plan, want_grad, "feature_metric",
                                    [inv_c](std::span<const double> f, std::span<const double> m, std::span<double> dl) {
                                        double loss = 0;
                                        for (std::size_t c = 0; c < f.size(); ++c) {
                                            const double r = f[c] - m[c];
                                            loss += r * r;
                                            dl[c] = -2.0 * r * inv_c;
                                        }
                                        return loss * inv_c;
                                    });
}

inline MetricValueGrad feature_l1_metric(const Volume& fixed_feat, const Volume& moving_feat, const BSplineTransform& T,
                                         const SamplePlan& plan, bool want_grad = true)
{
    return feature_metric(fixed_feat, moving_feat, T, plan, FeatureDistance::l1, want_grad);
}

/// Mean over points and channels of squared descriptor differences.
inline MetricValueGrad descriptor_ssd_metric(const Volume& fixed_desc, const Volume& moving_desc,
                                             const BSplineTransform& T, const SamplePlan& plan, bool want_grad = true)
{
    if (fixed_desc.channels() != moving_desc.channels())
        throw ValidationError("descriptor_ssd_metric: channel mismatch");
    const double inv_c = 1.0 / fixed_desc.channels();
    return detail::pointwise_metric(fixed_desc, moving_desc, T, plan, want_grad, "descriptor_ssd_metric",
                                    [inv_c](std::span<const double> f, std::span<const double> m, std::span<double> dl) {
                                        double loss = 0;
                                        for (std::size_t c = 0; c < f.size(); ++c) {
                                            const double r = f[c] - m[c];
                                            loss += r * r;
                                            dl[c] = -2.0 * r * inv_c;
                                        }
                                        return loss * inv_c;
                                    });
}

// ---------------------------------------------------------------------------
// Mattes mutual information

struct MattesConfig {
    int bins = 32;

    void validate() const
    {
        if (bins < 8) throw ValidationError("mattes: bins must be >= 8");
    }
};

/// Centered cubic B-spline Parzen kernel and its derivative.
inline double cubic_parzen(double u)
{
    const double a = std::abs(u);
    if (a < 1) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
    if (a < 2) {
        const double t = 2 - a;
        return t * t * t / 6.0;
    }
    return 0;
}

inline double cubic_parzen_derivative(double u)
{
    const double a = std::abs(u);
    const double sg = u < 0 ? -1.0 : 1.0;
    if (a < 1) return -2.0 * u + 1.5 * u * a;
    if (a < 2) {
        const double t = 2 - a;
        return -0.5 * t * t * sg;
    }
    return 0;
}

/// Negative mutual information from a Parzen joint histogram: zero-order
/// kernel on fixed intensities, cubic B-spline kernel on moving intensities.
///
/// Intensity ranges come from the full image data so that bins stay fixed
/// across iterations. Intensities map to bin coordinates in [2, bins - 3],
/// keeping the cubic kernel support inside the histogram.
class MattesMutualInformation {
public:
    MattesMutualInformation(const Volume& fixed, const Volume& moving, MattesConfig cfg = {})
        : fixed_(&fixed), moving_(&moving), cfg_(cfg)
    {
        cfg_.validate();
        detail::require_single_channel(fixed, "mattes_mi_metric", "fixed");
        detail::require_single_channel(moving, "mattes_mi_metric", "moving");
        std::tie(fmin_, fbin_) = binning(fixed, "fixed");
        std::tie(mmin_, mbin_) = binning(moving, "moving");
    }

    MetricValueGrad evaluate(const BSplineTransform& T, const SamplePlan& plan, bool want_grad = true) const
    {
        if (plan.points.empty()) throw ValidationError("mattes_mi_metric: empty sample plan");
        const int B = cfg_.bins;
        const std::size_t nb = static_cast<std::size_t>(B) * static_cast<std::size_t>(B);
        struct Sample {
            int fixed_bin = -1; // -1: sample rejected
            double moving_term = 0;
            Vec3 grad{0, 0, 0}; // d(moving_term)/dy
            bool supported = false;
        };
        std::vector<Sample> samples(plan.points.size());
        std::vector<std::vector<double>> hist(kReductionChunks);
        parallel_chunks(plan.points.size(), kReductionChunks, [&](std::size_t chunk, std::size_t b, std::size_t e) {
            auto& H = hist[chunk];
            H.assign(nb, 0.0);
            double val[1], g[3], fv[1];
            SplineSupport s;
            for (std::size_t i = b; i < e; ++i) {
                const Vec3& x = plan.points[i];
                Sample& S = samples[i];
                S.supported = T.support(x, s);
                const Vec3 y = S.supported ? x + T.displacement(s) : x;
                if (!sample_linear_with_gradient(*moving_, y, val, g)) continue;
                sample_linear_into(*fixed_, x, 0.0, fv);
                S.fixed_bin = fixed_bin(fv[0]);
                S.moving_term = moving_term(val[0]);
                S.grad = {g[0] / mbin_, g[1] / mbin_, g[2] / mbin_};
                const int k0 = static_cast<int>(std::floor(S.moving_term)) - 1;
                for (int k = k0; k < k0 + 4; ++k)
                    H[static_cast<std::size_t>(S.fixed_bin) * B + k] += cubic_parzen(k - S.moving_term);
            }
        });
        std::vector<double> joint(nb, 0.0);
        for (const auto& H : hist)
            for (std::size_t i = 0; i < nb; ++i) joint[i] += H[i];
        std::size_t valid = 0;
        for (const auto& S : samples) valid += S.fixed_bin >= 0 ? 1 : 0;
        if (valid == 0) throw ValidationError("mattes_mi_metric: no sample maps inside the moving image");
        const double inv_n = 1.0 / static_cast<double>(valid);
        for (double& p : joint) p *= inv_n;

        std::vector<double> pf(static_cast<std::size_t>(B), 0.0), pm(static_cast<std::size_t>(B), 0.0);
        for (int l = 0; l < B; ++l)
            for (int k = 0; k < B; ++k) {
                pf[l] += joint[static_cast<std::size_t>(l) * B + k];
                pm[k] += joint[static_cast<std::size_t>(l) * B + k];
            }
        double mi = 0;
        std::vector<double> log_ratio(nb, 0.0); // log(p(l,k) / pm(k))
        for (int l = 0; l < B; ++l)
            for (int k = 0; k < B; ++k) {
                const double p = joint[static_cast<std::size_t>(l) * B + k];
                if (p <= 0) continue;
                mi += p * std::log(p / (pf[l] * pm[k]));
                log_ratio[static_cast<std::size_t>(l) * B + k] = std::log(p / pm[k]);
            }

        MetricValueGrad out;
        out.cost = -mi;
        out.valid_samples = valid;
        if (!want_grad) return out;

        const std::size_t np = T.num_parameters();
        std::vector<std::vector<double>> partial(kReductionChunks);
        parallel_chunks(plan.points.size(), kReductionChunks, [&](std::size_t chunk, std::size_t b, std::size_t e) {
            auto& G = partial[chunk];
            G.assign(np, 0.0);
            SplineSupport s;
            for (std::size_t i = b; i < e; ++i) {
                const Sample& S = samples[i];
                if (S.fixed_bin < 0 || !S.supported) continue;
                T.support(plan.points[i], s);
                const int k0 = static_cast<int>(std::floor(S.moving_term)) - 1;
                double w = 0;
                for (int k = k0; k < k0 + 4; ++k)
                    w += log_ratio[static_cast<std::size_t>(S.fixed_bin) * B + k] * cubic_parzen_derivative(k - S.moving_term);
                const double scale = w * inv_n;
                detail::scatter_gradient(T, s, {scale * S.grad[0], scale * S.grad[1], scale * S.grad[2]}, G);
            }
        });
        out.grad.assign(np, 0.0);
        for (const auto& G : partial)
            for (std::size_t i = 0; i < np; ++i) out.grad[i] += G[i];
        return out;
    }

    int fixed_bin(double v) const
    {
        const int l = static_cast<int>(std::lround((v - fmin_) / fbin_)) + 2;
        return std::clamp(l, 2, cfg_.bins - 3);
    }

    double moving_term(double v) const
    {
        return std::clamp((v - mmin_) / mbin_ + 2.0, 2.0, static_cast<double>(cfg_.bins - 3));
    }

private:
    std::pair<double, double> binning(const Volume& v, const char* role) const
    {
        const auto d = v.data();
        const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
        if (!(*hi > *lo))
            throw ValidationError(std::string("mattes_mi_metric: ") + role + " image has a degenerate intensity range");
        return {*lo, (static_cast<double>(*hi) - *lo) / (cfg_.bins - 5)};
    }

    const Volume* fixed_;
    const Volume* moving_;
    MattesConfig cfg_;
    double fmin_ = 0, fbin_ = 1, mmin_ = 0, mbin_ = 1;
};

inline MetricValueGrad mattes_mi_metric(const Volume& fixed, const Volume& moving, const BSplineTransform& T,
                                        const SamplePlan& plan, const MattesConfig& cfg = {}, bool want_grad = true)
{
    return MattesMutualInformation(fixed, moving, cfg).evaluate(T, plan, want_grad);
}

} // namespace sctreg
