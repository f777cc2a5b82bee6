#pragma once

// Brute-force reference implementations of the evaluation metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sctreg/preprocess.hpp"
#include "sctreg/volume.hpp"

namespace testsupport {

using namespace sctreg;

inline double oracle_mae(const Volume& a, const Volume& b, const BodyMask& m)
{
    const Index3 d = a.dims();
    double s = 0;
    int n = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                if (m.volume().at(i, j, k) > 0.5f) {
                    s += std::abs(static_cast<double>(a.at(i, j, k)) - b.at(i, j, k));
                    ++n;
                }
    return s / n;
}

inline double oracle_psnr(const Volume& a, const Volume& b, const BodyMask& m, double range)
{
    const Index3 d = a.dims();
    double s = 0;
    int n = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                if (m.volume().at(i, j, k) > 0.5f) {
                    const double e = static_cast<double>(a.at(i, j, k)) - b.at(i, j, k);
                    s += e * e;
                    ++n;
                }
    return 10.0 * std::log10(range * range / (s / n));
}

inline double oracle_dice(const Volume& a, const Volume& b, int label)
{
    std::vector<std::size_t> A, B;
    for (std::size_t v = 0; v < a.voxel_count(); ++v) {
        if (std::lround(a.data()[v]) == label) A.push_back(v);
        if (std::lround(b.data()[v]) == label) B.push_back(v);
    }
    if (A.empty() && B.empty()) return 1.0;
    std::vector<std::size_t> both;
    std::set_intersection(A.begin(), A.end(), B.begin(), B.end(), std::back_inserter(both));
    return 2.0 * static_cast<double>(both.size()) / static_cast<double>(A.size() + B.size());
}

/// Foreground voxels with a face neighbour that is background or off-grid.
inline std::vector<Vec3> oracle_surface(const Volume& v, int label)
{
    const Index3 d = v.dims();
    const auto fg = [&](int i, int j, int k) {
        if (i < 0 || j < 0 || k < 0 || i >= d[0] || j >= d[1] || k >= d[2]) return false;
        return std::lround(v.at(i, j, k)) == label;
    };
    std::vector<Vec3> out;
    const Vec3 s = v.geometry().spacing;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (!fg(i, j, k)) continue;
                if (!fg(i - 1, j, k) || !fg(i + 1, j, k) || !fg(i, j - 1, k) || !fg(i, j + 1, k) || !fg(i, j, k - 1) ||
                    !fg(i, j, k + 1))
                    out.push_back({i * s[0], j * s[1], k * s[2]});
            }
    return out;
}

inline double oracle_hd95(const Volume& a, const Volume& b, int label)
{
    const auto sa = oracle_surface(a, label), sb = oracle_surface(b, label);
    std::vector<double> d;
    const auto nearest = [](const Vec3& p, const std::vector<Vec3>& set) {
        double best = 1e300;
        for (const auto& q : set) best = std::min(best, dot(p - q, p - q));
        return std::sqrt(best);
    };
    for (const auto& p : sa) d.push_back(nearest(p, sb));
    for (const auto& p : sb) d.push_back(nearest(p, sa));
    std::sort(d.begin(), d.end());
    const double rank = 0.95 * static_cast<double>(d.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const std::size_t hi = std::min(lo + 1, d.size() - 1);
    return d[lo] + (rank - static_cast<double>(lo)) * (d[hi] - d[lo]);
}

/// Single-scale SSIM with a full (non-separable) Gaussian window, valid positions only.
inline double oracle_ssim(const Volume& x, const Volume& y, double range, int win = 11, double sigma = 1.5)
{
    const Index3 d = x.dims();
    const int r = win / 2;
    std::vector<double> w1(static_cast<std::size_t>(win));
    for (int i = 0; i < win; ++i) w1[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    std::vector<double> w3;
    double ws = 0;
    for (int c = 0; c < win; ++c)
        for (int b = 0; b < win; ++b)
            for (int a = 0; a < win; ++a) {
                const double v = w1[static_cast<std::size_t>(a)] * w1[static_cast<std::size_t>(b)] * w1[static_cast<std::size_t>(c)];
                w3.push_back(v);
                ws += v;
            }
    for (double& v : w3) v /= ws;
    const double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    double total = 0;
    int n = 0;
    for (int k = 0; k + win <= d[2]; ++k)
        for (int j = 0; j + win <= d[1]; ++j)
            for (int i = 0; i + win <= d[0]; ++i) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                std::size_t t = 0;
                for (int c = 0; c < win; ++c)
                    for (int b = 0; b < win; ++b)
                        for (int a = 0; a < win; ++a, ++t) {
                            const double u = x.at(i + a, j + b, k + c), v = y.at(i + a, j + b, k + c);
                            mx += w3[t] * u;
                            my += w3[t] * v;
                            xx += w3[t] * u * u;
                            yy += w3[t] * v * v;
                            xy += w3[t] * u * v;
                        }
                const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++n;
            }
    return total / n;
}

/// Label volume made of a few random boxes and balls.
inline Volume random_labels(const Geometry& g, std::uint64_t seed, int label = 1, int shapes = 3)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Volume v(g, 1, Semantics::label, 0.0f);
    std::vector<float> data(v.voxel_count(), 0.0f);
    const Index3 d = g.dims;
    for (int s = 0; s < shapes; ++s) {
        const double cx = U(rng) * d[0], cy = U(rng) * d[1], cz = U(rng) * d[2];
        const double r = 1.0 + U(rng) * 0.3 * std::min({d[0], d[1], d[2]});
        const bool ball = U(rng) < 0.5;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const double dx = i - cx, dy = j - cy, dz = k - cz;
                    const bool in = ball ? dx * dx + dy * dy + dz * dz <= r * r
                                         : std::abs(dx) <= r && std::abs(dy) <= 0.7 * r && std::abs(dz) <= 1.2 * r;
                    if (in) data[v.voxel_index(i, j, k)] = static_cast<float>(label);
                }
    }
    return Volume(g, 1, std::move(data), Semantics::label);
}

} // namespace testsupport
