#pragma once

// Flip test-time augmentation and fold averaging of predicted volumes.
// Flips act on index space only; geometry is left untouched.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sctreg/errors.hpp"
#include "sctreg/parallel.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

struct FlipSpec {
    bool x = false, y = false, z = false;

    bool empty() const { return !x && !y && !z; }
    bool axis(int a) const { return a == 0 ? x : a == 1 ? y : z; }
    bool operator==(const FlipSpec&) const = default;
};

/// Parses "", "x", "yz", "x,z", ... into a FlipSpec.
inline FlipSpec parse_flip(const std::string& s)
{
    FlipSpec f;
    for (char c : s) {
        switch (c) {
        case 'x': case 'X': f.x = true; break;
        case 'y': case 'Y': f.y = true; break;
        case 'z': case 'Z': f.z = true; break;
        case ',': case '+': case ' ': break;
        default: throw ValidationError("flip: unknown axis '" + std::string(1, c) + "' in '" + s + "'");
        }
    }
    return f;
}

inline std::string flip_name(const FlipSpec& f)
{
    std::string s;
    if (f.x) s += 'x';
    if (f.y) s += 'y';
    if (f.z) s += 'z';
    return s;
}

inline Volume flip(const Volume& v, const FlipSpec& s)
{
    if (s.empty()) return v;
    const Index3 d = v.dims();
    const int c = v.channels();
    Volume out(v.geometry(), c, v.semantics());
    const auto src = v.data();
    auto dst = out.data();
    parallel_for(static_cast<std::size_t>(d[2]), [&](std::size_t kk) {
        const int k = static_cast<int>(kk);
        const int sk = s.z ? d[2] - 1 - k : k;
        for (int j = 0; j < d[1]; ++j) {
            const int sj = s.y ? d[1] - 1 - j : j;
            for (int i = 0; i < d[0]; ++i) {
                const int si = s.x ? d[0] - 1 - i : i;
                const std::size_t a = v.voxel_index(i, j, k) * c, b = v.voxel_index(si, sj, sk) * c;
                for (int ch = 0; ch < c; ++ch) dst[a + ch] = src[b + ch];
            }
        }
    });
    return out;
}

namespace detail {

/// Pairwise (tree) sum of vals[lo, hi).
inline double pairwise_sum(const double* vals, std::size_t n)
{
    if (n == 1) return vals[0];
    if (n == 2) return vals[0] + vals[1];
    const std::size_t h = n / 2;
    return pairwise_sum(vals, h) + pairwise_sum(vals + h, n - h);
}

inline Volume mean_of(const std::vector<const Volume*>& vols, const char* op)
{
    if (vols.empty()) throw ValidationError(std::string(op) + ": no predictions");
    const Volume& first = *vols.front();
    for (const Volume* v : vols)
        if (!same_geometry(v->geometry(), first.geometry()) || v->channels() != first.channels())
            throw ValidationError(std::string(op) + ": geometry mismatch between predictions");
    Volume out(first.geometry(), first.channels(), first.semantics());
    auto dst = out.data();
    const std::size_t n = vols.size();
    parallel_chunks(dst.size(), kReductionChunks, [&](std::size_t, std::size_t b, std::size_t e) {
        std::vector<double> buf(n);
        for (std::size_t i = b; i < e; ++i) {
            for (std::size_t p = 0; p < n; ++p) buf[p] = vols[p]->data()[i];
            dst[i] = static_cast<float>(pairwise_sum(buf.data(), n) / static_cast<double>(n));
        }
    });
    return out;
}

} // namespace detail

/// Unflips every prediction by its tag and returns the voxel-wise mean.
inline Volume tta_average(std::span<const std::pair<Volume, FlipSpec>> predictions)
{
    std::vector<Volume> unflipped;
    unflipped.reserve(predictions.size());
    for (const auto& [v, s] : predictions) unflipped.push_back(flip(v, s));
    std::vector<const Volume*> ptrs;
    for (const auto& v : unflipped) ptrs.push_back(&v);
    return detail::mean_of(ptrs, "tta_average");
}

inline Volume fold_ensemble(std::span<const Volume> predictions)
{
    std::vector<const Volume*> ptrs;
    for (const auto& v : predictions) ptrs.push_back(&v);
    return detail::mean_of(ptrs, "fold_ensemble");
}

} // namespace sctreg
