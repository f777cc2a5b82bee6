#pragma once

// Modality independent neighbourhood descriptor (six-neighbourhood, 3x3x3
// Gaussian-weighted patches). Descriptors are computed once per image and
// compared with a channel-wise SSD ("static mode").

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "sctreg/parallel.hpp"
#include "sctreg/similarity.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

struct MindConfig {
    double patch_sigma = 0.5;          // voxels; patch radius is fixed at 1
    double variance_floor_scale = 1e-6; // floor = scale * image intensity variance
    /// Explicit floor; 0 selects the scaled-variance rule above.
    double variance_floor = 0.0;
};

inline constexpr int kMindChannels = 6;

namespace detail {

/// Sum of weights(o) * in(x + o) along one axis for o in {-1, 0, 1}, edges replicated.
inline std::vector<double> patch_blur_axis(const std::vector<double>& in, const Index3& d, int axis, const std::array<double, 3>& w)
{
    std::vector<double> out(in.size());
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d[0]) : static_cast<std::size_t>(d[0]) * d[1];
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const std::size_t v = static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k);
                const int pos = axis == 0 ? i : axis == 1 ? j : k;
                const std::size_t lo = pos > 0 ? v - stride : v;
                const std::size_t hi = pos < d[axis] - 1 ? v + stride : v;
                out[v] = w[0] * in[lo] + w[1] * in[v] + w[2] * in[hi];
            }
    return out;
}

} // namespace detail

inline double mind_variance_floor(const Volume& v, const MindConfig& cfg)
{
    if (cfg.variance_floor > 0) return cfg.variance_floor;
    const auto d = v.data();
    double mean = 0;
    for (float x : d) mean += x;
    mean /= static_cast<double>(d.size());
    double var = 0;
    for (float x : d) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d.size());
    return std::max(cfg.variance_floor_scale * var, 1e-12);
}

/// Six-channel descriptor volume with components in (0, 1] and per-voxel maximum 1.
inline Volume mind_descriptor(const Volume& v, const MindConfig& cfg = {})
{
    if (v.channels() != 1) throw ValidationError("mind_descriptor: image must be single-channel");
    const Index3 d = v.dims();
    const std::size_t n = v.voxel_count();
    const auto src = v.data();

    std::array<double, 3> w{std::exp(-0.5 / (cfg.patch_sigma * cfg.patch_sigma)), 1.0, 0.0};
    w[2] = w[0];
    const double ws = w[0] + w[1] + w[2];
    for (double& x : w) x /= ws;

    static constexpr int offsets[kMindChannels][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    std::vector<std::vector<double>> dist(kMindChannels);
    parallel_for(kMindChannels, [&](std::size_t r) {
        std::vector<double> sq(n);
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const int a = std::clamp(i + offsets[r][0], 0, d[0] - 1);
                    const int b = std::clamp(j + offsets[r][1], 0, d[1] - 1);
                    const int c = std::clamp(k + offsets[r][2], 0, d[2] - 1);
                    const double diff = static_cast<double>(src[v.voxel_index(i, j, k)]) - src[v.voxel_index(a, b, c)];
                    sq[v.voxel_index(i, j, k)] = diff * diff;
                }
        for (int axis = 0; axis < 3; ++axis) sq = detail::patch_blur_axis(sq, d, axis, w);
        dist[r] = std::move(sq);
    });

    const double floor = mind_variance_floor(v, cfg);
    Volume out(v.geometry(), kMindChannels, Semantics::feature);
    auto dst = out.data();
    for (std::size_t x = 0; x < n; ++x) {
        double mean = 0, dmin = dist[0][x];
        for (int r = 0; r < kMindChannels; ++r) {
            mean += dist[r][x];
            dmin = std::min(dmin, dist[r][x]);
        }
        const double var = std::max(mean / kMindChannels, floor);
        // exp(-d/V) / max_r exp(-d_r/V) == exp(-(d - d_min)/V)
        for (int r = 0; r < kMindChannels; ++r)
            dst[x * kMindChannels + r] = static_cast<float>(std::exp(-(dist[r][x] - dmin) / var));
    }
    return out;
}

/// MIND-SSD: descriptors of both images, moving descriptors warped by T.
inline MetricValueGrad mind_metric(const Volume& fixed, const Volume& moving, const BSplineTransform& T,
                                   const SamplePlan& plan, const MindConfig& cfg = {}, bool want_grad = true)
{
    return descriptor_ssd_metric(mind_descriptor(fixed, cfg), mind_descriptor(moving, cfg), T, plan, want_grad);
}

} // namespace sctreg
