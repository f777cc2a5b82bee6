#pragma once

// Synthesis evaluation: masked MAE / PSNR / MS-SSIM on HU volumes, Dice and
// HD95 on label maps, region aggregation and error maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sctreg/errors.hpp"
#include "sctreg/preprocess.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

namespace detail {

inline void check_pair(const Volume& a, const Volume& b, const char* op)
{
    if (a.channels() != 1 || b.channels() != 1) throw ValidationError(std::string(op) + ": volumes must be single-channel");
    if (!same_geometry(a.geometry(), b.geometry())) throw ValidationError(std::string(op) + ": geometry mismatch");
}

inline void check_masked(const Volume& gt, const Volume& pred, const BodyMask& mask, const char* op)
{
    check_pair(gt, pred, op);
    if (!same_geometry(gt.geometry(), mask.geometry())) throw ValidationError(std::string(op) + ": mask geometry mismatch");
    if (mask.empty()) throw ValidationError(std::string(op) + ": mask is empty");
}

} // namespace detail

/// Mean absolute difference over mask voxels.
inline double mae(const Volume& gt, const Volume& pred, const BodyMask& mask)
{
    detail::check_masked(gt, pred, mask, "mae");
    const auto a = gt.data(), b = pred.data();
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask.inside(i)) continue;
        sum += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        ++n;
    }
    return sum / static_cast<double>(n);
}

inline double masked_mse(const Volume& gt, const Volume& pred, const BodyMask& mask)
{
    detail::check_masked(gt, pred, mask, "psnr");
    const auto a = gt.data(), b = pred.data();
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask.inside(i)) continue;
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sum += d * d;
        ++n;
    }
    return sum / static_cast<double>(n);
}

inline constexpr double kDefaultDataRange = 4095.0; // 3071 - (-1024) HU

/// 10 log10(range^2 / MSE) in dB; +infinity when the volumes agree inside the mask.
inline double psnr(const Volume& gt, const Volume& pred, const BodyMask& mask, double data_range = kDefaultDataRange)
{
    const double mse = masked_mse(gt, pred, mask);
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

// ---------------------------------------------------------------------------
// MS-SSIM

struct SsimOptions {
    double data_range = kDefaultDataRange;
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

struct MsSsimResult {
    double value = 0;
    int scales_requested = 0;
    int scales_used = 0;
    bool scales_reduced = false;
};

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

namespace detail {

/// Dense double grid used by the SSIM pipeline.
struct Grid {
    Index3 d{};
    std::vector<double> v;
    double& at(int i, int j, int k) { return v[static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k)]; }
    double at(int i, int j, int k) const { return v[static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k)]; }
};

inline std::vector<double> ssim_window(int size, double sigma)
{
    std::vector<double> w(static_cast<std::size_t>(size));
    double s = 0;
    for (int i = 0; i < size; ++i) {
        const double x = i - (size - 1) / 2.0;
        w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
        s += w[static_cast<std::size_t>(i)];
    }
    for (double& x : w) x /= s;
    return w;
}

/// Valid-mode separable filtering.
inline Grid filter_valid(const Grid& in, const std::vector<double>& w)
{
    const int n = static_cast<int>(w.size());
    Grid cur = in;
    for (int axis = 0; axis < 3; ++axis) {
        Grid next;
        next.d = cur.d;
        next.d[axis] = cur.d[axis] - n + 1;
        next.v.assign(static_cast<std::size_t>(next.d[0]) * next.d[1] * next.d[2], 0.0);
        for (int k = 0; k < next.d[2]; ++k)
            for (int j = 0; j < next.d[1]; ++j)
                for (int i = 0; i < next.d[0]; ++i) {
                    double acc = 0;
                    for (int t = 0; t < n; ++t) {
                        const int a = i + (axis == 0 ? t : 0), b = j + (axis == 1 ? t : 0), c = k + (axis == 2 ? t : 0);
                        acc += w[static_cast<std::size_t>(t)] * cur.at(a, b, c);
                    }
                    next.at(i, j, k) = acc;
                }
        cur = std::move(next);
    }
    return cur;
}

inline Grid product(const Grid& a, const Grid& b)
{
    Grid out{a.d, std::vector<double>(a.v.size())};
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

inline Grid downsample2(const Grid& in)
{
    Grid out;
    for (int a = 0; a < 3; ++a) out.d[a] = in.d[a] / 2;
    out.v.assign(static_cast<std::size_t>(out.d[0]) * out.d[1] * out.d[2], 0.0);
    for (int k = 0; k < out.d[2]; ++k)
        for (int j = 0; j < out.d[1]; ++j)
            for (int i = 0; i < out.d[0]; ++i) {
                double s = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) s += in.at(2 * i + dx, 2 * j + dy, 2 * k + dz);
                out.at(i, j, k) = s / 8.0;
            }
    return out;
}

/// Mean contrast-structure term and mean SSIM at one scale.
inline std::pair<double, double> ssim_terms(const Grid& x, const Grid& y, const SsimOptions& o)
{
    const auto w = ssim_window(o.window, o.sigma);
    const Grid mx = filter_valid(x, w), my = filter_valid(y, w);
    const Grid exx = filter_valid(product(x, x), w), eyy = filter_valid(product(y, y), w), exy = filter_valid(product(x, y), w);
    const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
    const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
    double cs_sum = 0, ssim_sum = 0;
    for (std::size_t i = 0; i < mx.v.size(); ++i) {
        const double ux = mx.v[i], uy = my.v[i];
        const double vx = exx.v[i] - ux * ux, vy = eyy.v[i] - uy * uy, cxy = exy.v[i] - ux * uy;
        const double cs = (2 * cxy + c2) / (vx + vy + c2);
        const double l = (2 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    const double n = static_cast<double>(mx.v.size());
    return {cs_sum / n, ssim_sum / n};
}

} // namespace detail

/// Multi-scale SSIM over the mask's bounding box. Out-of-mask voxels of both
/// volumes are filled with the in-mask mean of gt. When the box is too small
/// for the requested scales, scales are dropped (and the exponent weights
/// renormalized) until every scale holds at least one window.
inline MsSsimResult ms_ssim(const Volume& gt, const Volume& pred, const BodyMask& mask, int scales = 5,
                            const SsimOptions& opt = {})
{
    detail::check_masked(gt, pred, mask, "ms_ssim");
    if (scales < 1 || scales > static_cast<int>(kMsSsimWeights.size()))
        throw ValidationError("ms_ssim: scales must lie in [1, 5]");
    const Index3 dims = gt.dims();
    Index3 lo{dims[0], dims[1], dims[2]}, hi{-1, -1, -1};
    double mean = 0;
    for (std::size_t v = 0; v < gt.voxel_count(); ++v) {
        if (!mask.inside(v)) continue;
        const Index3 c = gt.voxel_coords(v);
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], c[a]);
            hi[a] = std::max(hi[a], c[a]);
        }
        mean += gt.data()[v];
    }
    mean /= static_cast<double>(mask.count());
    Index3 box{};
    for (int a = 0; a < 3; ++a) box[a] = hi[a] - lo[a] + 1;
    const int min_dim = std::min({box[0], box[1], box[2]});
    if (min_dim < opt.window)
        throw ValidationError("ms_ssim: mask bounding box (" + std::to_string(min_dim) + " voxels) is smaller than one window");

    MsSsimResult res;
    res.scales_requested = scales;
    int used = scales;
    while (used > 1 && min_dim < (1 << (used - 1)) * opt.window) --used;
    res.scales_used = used;
    res.scales_reduced = used != scales;

    detail::Grid x, y;
    x.d = y.d = box;
    x.v.resize(static_cast<std::size_t>(box[0]) * box[1] * box[2]);
    y.v.resize(x.v.size());
    for (int k = 0; k < box[2]; ++k)
        for (int j = 0; j < box[1]; ++j)
            for (int i = 0; i < box[0]; ++i) {
                const std::size_t v = gt.voxel_index(lo[0] + i, lo[1] + j, lo[2] + k);
                const bool in = mask.inside(v);
                x.at(i, j, k) = in ? gt.data()[v] : mean;
                y.at(i, j, k) = in ? pred.data()[v] : mean;
            }

    double wsum = 0;
    for (int s = 0; s < used; ++s) wsum += kMsSsimWeights[static_cast<std::size_t>(s)];
    double value = 1.0;
    for (int s = 0; s < used; ++s) {
        const auto [cs, ssim] = detail::ssim_terms(x, y, opt);
        const double w = kMsSsimWeights[static_cast<std::size_t>(s)] / wsum;
        const double term = s == used - 1 ? ssim : cs;
        value *= std::pow(std::max(term, 0.0), w);
        if (s != used - 1) {
            x = detail::downsample2(x);
            y = detail::downsample2(y);
        }
    }
    res.value = std::clamp(value, 0.0, 1.0);
    return res;
}

// ---------------------------------------------------------------------------
// Overlap and surface distance

struct DiceResult {
    double value = 0;
    bool both_empty = false;
};

inline bool has_label(float v, int label) { return std::lround(v) == label; }

/// 2|A n B| / (|A| + |B|); 1.0 with a flag when both sets are empty.
inline DiceResult dice(const Volume& a, const Volume& b, int label)
{
    detail::check_pair(a, b, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool in_a = has_label(x[i], label), in_b = has_label(y[i], label);
        na += in_a;
        nb += in_b;
        both += in_a && in_b;
    }
    if (na + nb == 0) return {1.0, true};
    return {2.0 * static_cast<double>(both) / static_cast<double>(na + nb), false};
}

/// Foreground voxels with at least one 6-neighbour that is background or off-grid.
inline std::vector<std::uint8_t> surface_voxels(const Volume& v, int label)
{
    const Index3 d = v.dims();
    std::vector<std::uint8_t> out(v.voxel_count(), 0);
    const auto fg = [&](int i, int j, int k) {
        if (i < 0 || j < 0 || k < 0 || i >= d[0] || j >= d[1] || k >= d[2]) return false;
        return has_label(v.at(i, j, k), label);
    };
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (!fg(i, j, k)) continue;
                if (!fg(i - 1, j, k) || !fg(i + 1, j, k) || !fg(i, j - 1, k) || !fg(i, j + 1, k) || !fg(i, j, k - 1) || !fg(i, j, k + 1))
                    out[v.voxel_index(i, j, k)] = 1;
            }
    return out;
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// feature voxel, separable lower-envelope algorithm with per-axis spacing.
inline std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& feature, const Index3& d, const Vec3& spacing)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(feature.size());
    for (std::size_t i = 0; i < feature.size(); ++i) g[i] = feature[i] ? 0.0 : inf;
    const int maxn = std::max({d[0], d[1], d[2]});
    std::vector<double> f(static_cast<std::size_t>(maxn)), out(static_cast<std::size_t>(maxn)), z(static_cast<std::size_t>(maxn) + 1);
    std::vector<int> vtx(static_cast<std::size_t>(maxn));
    for (int axis = 0; axis < 3; ++axis) {
        const int n = d[axis];
        const double s = spacing[axis];
        const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d[0]) : static_cast<std::size_t>(d[0]) * d[1];
        const int o1 = axis == 0 ? 1 : 0, o2 = axis == 2 ? 1 : 2;
        for (int q = 0; q < d[o2]; ++q)
            for (int p = 0; p < d[o1]; ++p) {
                int idx[3] = {0, 0, 0};
                idx[o1] = p;
                idx[o2] = q;
                const std::size_t base = static_cast<std::size_t>(idx[0]) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(idx[1]) + static_cast<std::size_t>(d[1]) * idx[2]);
                for (int i = 0; i < n; ++i) f[static_cast<std::size_t>(i)] = g[base + stride * i];
                // Lower envelope of parabolas over finite samples.
                int k = -1;
                for (int i = 0; i < n; ++i) {
                    if (!std::isfinite(f[static_cast<std::size_t>(i)])) continue;
                    const double xi = s * i;
                    double zi = -inf;
                    while (k >= 0) {
                        const int vk = vtx[static_cast<std::size_t>(k)];
                        const double xv = s * vk;
                        zi = ((f[static_cast<std::size_t>(i)] + xi * xi) - (f[static_cast<std::size_t>(vk)] + xv * xv)) / (2 * (xi - xv));
                        if (zi <= z[static_cast<std::size_t>(k)]) --k;
                        else break;
                    }
                    ++k;
                    vtx[static_cast<std::size_t>(k)] = i;
                    z[static_cast<std::size_t>(k)] = k == 0 ? -inf : zi;
                    z[static_cast<std::size_t>(k) + 1] = inf;
                }
                if (k < 0) {
                    for (int i = 0; i < n; ++i) g[base + stride * i] = inf;
                    continue;
                }
                int j = 0;
                for (int i = 0; i < n; ++i) {
                    const double xi = s * i;
                    while (z[static_cast<std::size_t>(j) + 1] < xi) ++j;
                    const int vj = vtx[static_cast<std::size_t>(j)];
                    const double dx = xi - s * vj;
                    out[static_cast<std::size_t>(i)] = dx * dx + f[static_cast<std::size_t>(vj)];
                }
                for (int i = 0; i < n; ++i) g[base + stride * i] = out[static_cast<std::size_t>(i)];
            }
    }
    return g;
}

/// Surface-to-surface distances (mm) from every surface voxel of a to the
/// surface of b, then from b to a, concatenated.
inline std::vector<double> symmetric_surface_distances(const Volume& a, const Volume& b, int label)
{
    detail::check_pair(a, b, "hd95");
    const auto sa = surface_voxels(a, label), sb = surface_voxels(b, label);
    const bool ea = std::none_of(sa.begin(), sa.end(), [](auto x) { return x != 0; });
    const bool eb = std::none_of(sb.begin(), sb.end(), [](auto x) { return x != 0; });
    if (ea || eb) throw ValidationError("hd95: undefined distance, label " + std::to_string(label) + " is empty in " + (ea ? "a" : "b"));
    const auto da = squared_distance_transform(sa, a.dims(), a.geometry().spacing);
    const auto db = squared_distance_transform(sb, b.dims(), b.geometry().spacing);
    std::vector<double> out;
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (sa[i]) out.push_back(std::sqrt(db[i]));
    for (std::size_t i = 0; i < sb.size(); ++i)
        if (sb[i]) out.push_back(std::sqrt(da[i]));
    return out;
}

/// 95th percentile (linear rank interpolation) of the pooled symmetric surface distances.
inline double hd95(const Volume& a, const Volume& b, int label)
{
    return percentile(symmetric_surface_distances(a, b, label), 0.95);
}

/// |gt - pred| inside the mask, 0 outside.
inline Volume error_map(const Volume& gt, const Volume& pred, const BodyMask& mask)
{
    detail::check_pair(gt, pred, "error_map");
    if (!same_geometry(gt.geometry(), mask.geometry())) throw ValidationError("error_map: mask geometry mismatch");
    Volume out(gt.geometry(), 1, Semantics::hu, 0.0f);
    const auto a = gt.data(), b = pred.data();
    auto d = out.data();
    for (std::size_t i = 0; i < a.size(); ++i)
        if (mask.inside(i)) d[i] = static_cast<float>(std::abs(static_cast<double>(a[i]) - b[i]));
    return out;
}

// ---------------------------------------------------------------------------
// Region aggregation

enum class Region { AB, HN, TH, other };

inline std::string region_name(Region r)
{
    switch (r) {
    case Region::AB: return "AB";
    case Region::HN: return "HN";
    case Region::TH: return "TH";
    case Region::other: return "other";
    }
    return "other";
}

inline Region parse_region(const std::string& s)
{
    if (s == "AB") return Region::AB;
    if (s == "HN") return Region::HN;
    if (s == "TH") return Region::TH;
    if (s == "other") return Region::other;
    throw ValidationError("unknown region '" + s + "' (expected AB|HN|TH|other)");
}

/// Mean metric values of one region (or of the aggregate row).
struct RegionMetrics {
    double mae = 0;
    double psnr = 0;
    double ms_ssim = 0;
    std::optional<double> dice;
    std::optional<double> hd95;
};

struct AggregateReport {
    std::map<Region, RegionMetrics> per_region;
    RegionMetrics aggregated; // unrounded
};

inline double round2(double x) { return std::round(x * 100.0) / 100.0; }

/// Unweighted mean of the region means. Optional metrics are averaged over
/// the regions that report them.
inline AggregateReport aggregate_regions(const std::map<Region, RegionMetrics>& per_region)
{
    if (per_region.empty()) throw ValidationError("aggregate_regions: no regions");
    AggregateReport out;
    out.per_region = per_region;
    double dice_sum = 0, hd_sum = 0;
    int dice_n = 0, hd_n = 0;
    for (const auto& [region, m] : per_region) {
        out.aggregated.mae += m.mae;
        out.aggregated.psnr += m.psnr;
        out.aggregated.ms_ssim += m.ms_ssim;
        if (m.dice) { dice_sum += *m.dice; ++dice_n; }
        if (m.hd95) { hd_sum += *m.hd95; ++hd_n; }
    }
    const double n = static_cast<double>(per_region.size());
    out.aggregated.mae /= n;
    out.aggregated.psnr /= n;
    out.aggregated.ms_ssim /= n;
    if (dice_n) out.aggregated.dice = dice_sum / dice_n;
    if (hd_n) out.aggregated.hd95 = hd_sum / hd_n;
    return out;
}

} // namespace sctreg
