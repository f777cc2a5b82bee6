#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "sctreg/errors.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

/// Binary body mask. Any input is binarized with value > 0.5 as foreground.
class BodyMask {
public:
    BodyMask() = default;

    explicit BodyMask(const Volume& v)
    {
        if (v.channels() != 1) throw ValidationError("mask: must be single-channel");
        std::vector<float> bin(v.voxel_count());
        const auto src = v.data();
        for (std::size_t i = 0; i < bin.size(); ++i) bin[i] = src[i] > 0.5f ? 1.0f : 0.0f;
        volume_ = Volume(v.geometry(), 1, std::move(bin), Semantics::label);
        count_ = static_cast<std::size_t>(std::count(volume_.data().begin(), volume_.data().end(), 1.0f));
    }

    const Volume& volume() const { return volume_; }
    const Geometry& geometry() const { return volume_.geometry(); }
    bool inside(std::size_t voxel) const { return volume_.data()[voxel] > 0.5f; }
    std::size_t count() const { return count_; }
    bool empty() const { return count_ == 0; }

    /// Mask values sampled on another grid, re-thresholded at 0.5.
    BodyMask resampled(const Geometry& target) const { return BodyMask(resample(volume_, target, 0.0)); }

private:
    Volume volume_;
    std::size_t count_ = 0;
};

enum class Modality { ct, cbct, mri };

struct NormalizationSpec {
    Modality modality = Modality::ct;
    double ct_clip_lo = -1024.0;
    double ct_clip_hi = 3071.0;
    double cbct_upper_percentile = 0.995;
    double fill_value = -1.0;

    void validate() const
    {
        if (!(ct_clip_lo < ct_clip_hi)) throw ValidationError("normalization: ct_clip_lo must be < ct_clip_hi");
        if (!(cbct_upper_percentile > 0 && cbct_upper_percentile < 1))
            throw ValidationError("normalization: percentile must lie in (0, 1)");
    }
};

/// Linear-interpolation percentile on rank q*(n-1) of the sorted values.
inline double percentile(std::vector<double> values, double q)
{
    if (values.empty()) throw ValidationError("percentile: empty sequence");
    if (!(q >= 0 && q <= 1)) throw ValidationError("percentile: q must lie in [0, 1]");
    const double rank = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double vlo = values[lo];
    double vhi = vlo;
    if (hi != lo) vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    const double frac = rank - static_cast<double>(lo);
    return frac == 0 ? vlo : vlo + frac * (vhi - vlo);
}

namespace detail {

inline void check_mask_geometry(const Volume& v, const BodyMask& m, const char* op)
{
    if (v.channels() != 1) throw ValidationError(std::string(op) + ": image must be single-channel");
    if (!same_geometry(v.geometry(), m.geometry()))
        throw ValidationError(std::string(op) + ": image and mask geometries differ");
}

inline std::vector<double> masked_values(const Volume& v, const BodyMask& m)
{
    std::vector<double> out;
    out.reserve(m.count());
    const auto d = v.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        if (m.inside(i)) out.push_back(d[i]);
    return out;
}

template <class Fn>
Volume map_inside(const Volume& v, const BodyMask& m, double fill, Fn&& fn)
{
    Volume out(v.geometry(), 1, Semantics::normalized, static_cast<float>(fill));
    const auto src = v.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i)
        if (m.inside(i)) dst[i] = static_cast<float>(fn(static_cast<double>(src[i])));
    return out;
}

} // namespace detail

/// CT: clip to [lo, hi] HU and map linearly to [-1, 1]; fill outside the mask.
inline Volume preprocess_ct(const Volume& v, const BodyMask& mask, const NormalizationSpec& spec = {})
{
    spec.validate();
    detail::check_mask_geometry(v, mask, "preprocess_ct");
    const double lo = spec.ct_clip_lo, hi = spec.ct_clip_hi;
    return detail::map_inside(v, mask, spec.fill_value,
                              [&](double x) { return 2.0 * (std::clamp(x, lo, hi) - lo) / (hi - lo) - 1.0; });
}

/// CBCT: clip between the in-mask minimum and upper percentile, map to [-1, 1].
inline Volume preprocess_cbct(const Volume& v, const BodyMask& mask, const NormalizationSpec& spec = {})
{
    spec.validate();
    detail::check_mask_geometry(v, mask, "preprocess_cbct");
    if (mask.empty()) throw ValidationError("preprocess_cbct: mask is empty");
    auto vals = detail::masked_values(v, mask);
    const double lo = *std::min_element(vals.begin(), vals.end());
    const double hi = percentile(std::move(vals), spec.cbct_upper_percentile);
    if (!(hi > lo)) throw ValidationError("preprocess_cbct: degenerate intensity range inside mask (min == upper percentile)");
    return detail::map_inside(v, mask, spec.fill_value,
                              [&](double x) { return 2.0 * (std::clamp(x, lo, hi) - lo) / (hi - lo) - 1.0; });
}

/// MRI: z-score with in-mask mean and population standard deviation.
inline Volume preprocess_mri(const Volume& v, const BodyMask& mask, const NormalizationSpec& spec = {})
{
    detail::check_mask_geometry(v, mask, "preprocess_mri");
    if (mask.count() < 2) throw ValidationError("preprocess_mri: mask needs at least 2 voxels");
    const auto vals = detail::masked_values(v, mask);
    double mean = 0;
    for (double x : vals) mean += x;
    mean /= static_cast<double>(vals.size());
    double var = 0;
    for (double x : vals) var += (x - mean) * (x - mean);
    var /= static_cast<double>(vals.size());
    const double sd = std::sqrt(var);
    if (!(sd > 0)) throw ValidationError("preprocess_mri: zero intensity variance inside mask");
    return detail::map_inside(v, mask, spec.fill_value, [&](double x) { return (x - mean) / sd; });
}

inline Volume preprocess(const Volume& v, const BodyMask& mask, const NormalizationSpec& spec)
{
    switch (spec.modality) {
    case Modality::ct: return preprocess_ct(v, mask, spec);
    case Modality::cbct: return preprocess_cbct(v, mask, spec);
    case Modality::mri: return preprocess_mri(v, mask, spec);
    }
    throw ValidationError("preprocess: unknown modality");
}

// ---------------------------------------------------------------------------
// Body-mask construction

namespace detail {

inline std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& in, const Index3& d, int r)
{
    std::vector<std::uint8_t> out(in.size(), 0);
    const auto idx = [&](int i, int j, int k) {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k);
    };
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                if (!in[idx(i, j, k)]) continue;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            if (dx * dx + dy * dy + dz * dz > r * r) continue;
                            const int a = i + dx, b = j + dy, c = k + dz;
                            if (a < 0 || b < 0 || c < 0 || a >= d[0] || b >= d[1] || c >= d[2]) continue;
                            out[idx(a, b, c)] = 1;
                        }
            }
    return out;
}

/// Erosion that ignores out-of-grid neighbours, so closing never shrinks the input.
inline std::vector<std::uint8_t> erode(const std::vector<std::uint8_t>& in, const Index3& d, int r)
{
    std::vector<std::uint8_t> inv(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) inv[i] = in[i] ? 0 : 1;
    auto grown = dilate(inv, d, r);
    for (auto& x : grown) x = x ? 0 : 1;
    return grown;
}

/// Labels 6-connected foreground components; returns the voxels of the largest
/// (ties broken by lowest first voxel index).
inline std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& in, const Index3& d)
{
    std::vector<int> label(in.size(), 0);
    int best_label = 0;
    std::size_t best_size = 0;
    int next = 0;
    std::queue<std::size_t> q;
    const std::size_t nx = static_cast<std::size_t>(d[0]), nxy = nx * static_cast<std::size_t>(d[1]);
    for (std::size_t s = 0; s < in.size(); ++s) {
        if (!in[s] || label[s]) continue;
        ++next;
        std::size_t size = 0;
        label[s] = next;
        q.push(s);
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop();
            ++size;
            const int i = static_cast<int>(v % nx), j = static_cast<int>((v / nx) % d[1]), k = static_cast<int>(v / nxy);
            const int nb[6][3] = {{i - 1, j, k}, {i + 1, j, k}, {i, j - 1, k}, {i, j + 1, k}, {i, j, k - 1}, {i, j, k + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= d[0] || n[1] >= d[1] || n[2] >= d[2]) continue;
                const std::size_t u = static_cast<std::size_t>(n[0]) + nx * static_cast<std::size_t>(n[1]) + nxy * static_cast<std::size_t>(n[2]);
                if (in[u] && !label[u]) {
                    label[u] = next;
                    q.push(u);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
    }
    std::vector<std::uint8_t> out(in.size(), 0);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = (best_label != 0 && label[i] == best_label) ? 1 : 0;
    return out;
}

} // namespace detail

/// Threshold (value > threshold), morphological closing with a spherical
/// element of radius closing_radius voxels, then keep the largest 6-connected component.
inline BodyMask compute_body_mask(const Volume& v, double threshold, int closing_radius)
{
    if (v.channels() != 1) throw ValidationError("compute_body_mask: image must be single-channel");
    const auto src = v.data();
    std::vector<std::uint8_t> bin(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) bin[i] = src[i] > threshold ? 1 : 0;
    if (closing_radius > 0) bin = detail::erode(detail::dilate(bin, v.dims(), closing_radius), v.dims(), closing_radius);
    bin = detail::largest_component(bin, v.dims());
    std::vector<float> data(bin.begin(), bin.end());
    BodyMask m(Volume(v.geometry(), 1, std::move(data), Semantics::label));
    if (m.empty()) throw ValidationError("compute_body_mask: no voxel above threshold " + std::to_string(threshold));
    return m;
}

} // namespace sctreg
