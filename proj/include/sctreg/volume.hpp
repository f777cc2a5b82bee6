#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sctreg/errors.hpp"
#include "sctreg/parallel.hpp"

namespace sctreg {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;
/// Row-major 3x3; column c is the world direction of index axis c.
using Mat3 = std::array<std::array<double, 3>, 3>;

inline constexpr Mat3 identity_matrix() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 mul(const Mat3& m, const Vec3& v)
{
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

inline Vec3 mul_transposed(const Mat3& m, const Vec3& v)
{
    return {m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]};
}

inline bool is_orthonormal(const Mat3& m, double tol = 1e-6)
{
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double d = 0;
            for (int r = 0; r < 3; ++r) d += m[r][a] * m[r][b];
            if (std::abs(d - (a == b ? 1.0 : 0.0)) > tol) return false;
        }
    return true;
}

/// Sampling grid of a volume: world = origin + direction * (index .* spacing).
struct Geometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    Mat3 direction = identity_matrix();

    std::size_t voxel_count() const
    {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    Vec3 index_to_world(const Vec3& idx) const
    {
        return origin + mul(direction, Vec3{idx[0] * spacing[0], idx[1] * spacing[1], idx[2] * spacing[2]});
    }

    Vec3 world_to_index(const Vec3& p) const
    {
        const Vec3 r = mul_transposed(direction, p - origin);
        return {r[0] / spacing[0], r[1] / spacing[1], r[2] / spacing[2]};
    }

    Vec3 voxel_center(int i, int j, int k) const
    {
        return index_to_world({static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)});
    }

    /// Throws ValidationError on non-positive dims/spacing or a non-orthonormal direction.
    void validate() const
    {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] <= 0) throw ValidationError("geometry: dims must be positive");
            if (!(spacing[a] > 0) || !std::isfinite(spacing[a]))
                throw ValidationError("geometry: spacing must be positive and finite");
            if (!std::isfinite(origin[a])) throw ValidationError("geometry: origin must be finite");
        }
        if (!is_orthonormal(direction)) throw ValidationError("geometry: direction matrix is not orthonormal");
    }

    bool operator==(const Geometry&) const = default;
};

/// Geometries equal up to floating tolerance (headers round-trip, resampled masks).
inline bool same_geometry(const Geometry& a, const Geometry& b, double tol = 1e-6)
{
    if (a.dims != b.dims) return false;
    for (int r = 0; r < 3; ++r) {
        if (std::abs(a.spacing[r] - b.spacing[r]) > tol) return false;
        if (std::abs(a.origin[r] - b.origin[r]) > tol) return false;
        for (int c = 0; c < 3; ++c)
            if (std::abs(a.direction[r][c] - b.direction[r][c]) > tol) return false;
    }
    return true;
}

enum class Semantics { hu, normalized, feature, label, probability };

/// Voxel grid with geometry. Layout: x fastest, then y, then z; channels
/// contiguous per voxel.
class Volume {
public:
    Volume() = default;

    Volume(Geometry geometry, int channels = 1, Semantics semantics = Semantics::normalized, float fill = 0.0f)
        : geometry_(std::move(geometry)), channels_(channels), semantics_(semantics)
    {
        geometry_.validate();
        if (channels_ < 1) throw ValidationError("volume: channels must be >= 1");
        data_.assign(geometry_.voxel_count() * static_cast<std::size_t>(channels_), fill);
    }

    Volume(Geometry geometry, int channels, std::vector<float> data, Semantics semantics)
        : geometry_(std::move(geometry)), channels_(channels), semantics_(semantics), data_(std::move(data))
    {
        geometry_.validate();
        if (channels_ < 1) throw ValidationError("volume: channels must be >= 1");
        if (data_.size() != geometry_.voxel_count() * static_cast<std::size_t>(channels_))
            throw ValidationError("volume: data length does not match dims * channels");
    }

    const Geometry& geometry() const { return geometry_; }
    const Index3& dims() const { return geometry_.dims; }
    int channels() const { return channels_; }
    Semantics semantics() const { return semantics_; }
    void set_semantics(Semantics s) { semantics_ = s; }
    std::size_t voxel_count() const { return geometry_.voxel_count(); }
    bool empty() const { return data_.empty(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    std::size_t voxel_index(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(geometry_.dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(geometry_.dims[1]) * static_cast<std::size_t>(k));
    }

    Index3 voxel_coords(std::size_t v) const
    {
        const auto nx = static_cast<std::size_t>(geometry_.dims[0]);
        const auto ny = static_cast<std::size_t>(geometry_.dims[1]);
        return {static_cast<int>(v % nx), static_cast<int>((v / nx) % ny), static_cast<int>(v / (nx * ny))};
    }

    float at(int i, int j, int k, int c = 0) const { return data_[voxel_index(i, j, k) * channels_ + c]; }
    float& at(int i, int j, int k, int c = 0) { return data_[voxel_index(i, j, k) * channels_ + c]; }

    bool all_finite() const
    {
        for (float x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    bool operator==(const Volume&) const = default;

private:
    Geometry geometry_{};
    int channels_ = 1;
    Semantics semantics_ = Semantics::normalized;
    std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// Trilinear interpolation

/// Eight-corner stencil at a continuous index, with weight derivatives along each index axis.
struct TrilinearStencil {
    std::array<std::size_t, 8> voxel{};
    std::array<double, 8> weight{};
    std::array<std::array<double, 8>, 3> dweight{};
};

namespace detail {
inline constexpr double kBoundsTolerance = 1e-6;

inline bool axis_cell(double x, int dim, int& lo, int& hi, double& t)
{
    if (x < -kBoundsTolerance || x > (dim - 1) + kBoundsTolerance) return false;
    if (dim == 1) {
        lo = hi = 0;
        t = 0;
        return true;
    }
    x = std::clamp(x, 0.0, static_cast<double>(dim - 1));
    lo = std::min(static_cast<int>(std::floor(x)), dim - 2);
    hi = lo + 1;
    t = x - lo;
    return true;
}
} // namespace detail

/// Fills the stencil; returns false when the index lies outside the grid.
inline bool trilinear_stencil(const Geometry& g, const Vec3& cidx, TrilinearStencil& s)
{
    int lo[3], hi[3];
    double t[3];
    for (int a = 0; a < 3; ++a)
        if (!detail::axis_cell(cidx[a], g.dims[a], lo[a], hi[a], t[a])) return false;
    const auto nx = static_cast<std::size_t>(g.dims[0]);
    const auto nxy = nx * static_cast<std::size_t>(g.dims[1]);
    int n = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++n) {
                const int ii = dx ? hi[0] : lo[0];
                const int jj = dy ? hi[1] : lo[1];
                const int kk = dz ? hi[2] : lo[2];
                s.voxel[n] = static_cast<std::size_t>(ii) + nx * static_cast<std::size_t>(jj) +
                             nxy * static_cast<std::size_t>(kk);
                const double wx = dx ? t[0] : 1 - t[0];
                const double wy = dy ? t[1] : 1 - t[1];
                const double wz = dz ? t[2] : 1 - t[2];
                const double gx = (g.dims[0] == 1) ? 0.0 : (dx ? 1.0 : -1.0);
                const double gy = (g.dims[1] == 1) ? 0.0 : (dy ? 1.0 : -1.0);
                const double gz = (g.dims[2] == 1) ? 0.0 : (dz ? 1.0 : -1.0);
                s.weight[n] = wx * wy * wz;
                s.dweight[0][n] = gx * wy * wz;
                s.dweight[1][n] = wx * gy * wz;
                s.dweight[2][n] = wx * wy * gz;
            }
    return true;
}

/// Trilinear sample of every channel at world point p into out; background outside the grid.
inline bool sample_linear_into(const Volume& v, const Vec3& p, double background, std::span<double> out)
{
    TrilinearStencil s;
    const auto data = v.data();
    const int nc = v.channels();
    if (!trilinear_stencil(v.geometry(), v.geometry().world_to_index(p), s)) {
        for (int c = 0; c < nc; ++c) out[c] = background;
        return false;
    }
    for (int c = 0; c < nc; ++c) {
        double acc = 0;
        for (int n = 0; n < 8; ++n) acc += s.weight[n] * data[s.voxel[n] * nc + c];
        out[c] = acc;
    }
    return true;
}

inline std::vector<double> sample_linear(const Volume& v, const Vec3& p, double background = -1.0)
{
    std::vector<double> out(static_cast<std::size_t>(v.channels()));
    sample_linear_into(v, p, background, out);
    return out;
}

/// Trilinear value and exact world-space gradient of the interpolant for every channel.
/// grad is laid out channel-major: grad[3*c + axis]. Returns false outside the grid.
inline bool sample_linear_with_gradient(const Volume& v, const Vec3& p, std::span<double> value,
                                        std::span<double> grad)
{
    TrilinearStencil s;
    const Geometry& g = v.geometry();
    if (!trilinear_stencil(g, g.world_to_index(p), s)) return false;
    const auto data = v.data();
    const int nc = v.channels();
    for (int c = 0; c < nc; ++c) {
        double acc = 0;
        Vec3 gi{0, 0, 0};
        for (int n = 0; n < 8; ++n) {
            const double x = data[s.voxel[n] * nc + c];
            acc += s.weight[n] * x;
            gi[0] += s.dweight[0][n] * x;
            gi[1] += s.dweight[1][n] * x;
            gi[2] += s.dweight[2][n] * x;
        }
        value[c] = acc;
        const Vec3 gw = mul(g.direction, Vec3{gi[0] / g.spacing[0], gi[1] / g.spacing[1], gi[2] / g.spacing[2]});
        grad[3 * c + 0] = gw[0];
        grad[3 * c + 1] = gw[1];
        grad[3 * c + 2] = gw[2];
    }
    return true;
}

/// Maps each target voxel center to world and samples v there.
inline Volume resample(const Volume& v, const Geometry& target, double background)
{
    target.validate();
    Volume out(target, v.channels(), v.semantics());
    const int nc = v.channels();
    auto dst = out.data();
    parallel_for(static_cast<std::size_t>(target.dims[2]), [&](std::size_t k) {
        std::vector<double> buf(static_cast<std::size_t>(nc));
        for (int j = 0; j < target.dims[1]; ++j)
            for (int i = 0; i < target.dims[0]; ++i) {
                sample_linear_into(v, target.voxel_center(i, j, static_cast<int>(k)), background, buf);
                const std::size_t base = out.voxel_index(i, j, static_cast<int>(k)) * nc;
                for (int c = 0; c < nc; ++c) dst[base + c] = static_cast<float>(buf[c]);
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian smoothing and pyramid

/// Normalized discrete Gaussian truncated at 3 sigma (sigma in voxels).
inline std::vector<double> gaussian_kernel(double sigma)
{
    if (sigma <= 0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& w : k) w /= sum;
    return k;
}

/// Separable Gaussian smoothing with per-axis sigma in voxels. Taps falling
/// outside the grid are dropped and the remaining ones renormalized, so
/// constants are preserved exactly.
inline Volume gaussian_smooth(const Volume& v, const Vec3& sigma_voxels)
{
    Volume cur = v;
    const Index3 d = v.dims();
    const int nc = v.channels();
    for (int axis = 0; axis < 3; ++axis) {
        if (sigma_voxels[axis] <= 0) continue;
        const auto kernel = gaussian_kernel(sigma_voxels[axis]);
        const int radius = static_cast<int>(kernel.size() / 2);
        Volume next(cur.geometry(), nc, cur.semantics());
        const auto src = cur.data();
        auto dst = next.data();
        const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d[0])
                                                           : static_cast<std::size_t>(d[0]) * d[1];
        parallel_for(static_cast<std::size_t>(d[2]), [&](std::size_t kz) {
            const int k = static_cast<int>(kz);
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i) {
                    const int pos = axis == 0 ? i : axis == 1 ? j : k;
                    const std::size_t vi = cur.voxel_index(i, j, k);
                    const int lo = std::max(-radius, -pos);
                    const int hi = std::min(radius, d[axis] - 1 - pos);
                    double wsum = 0;
                    for (int o = lo; o <= hi; ++o) wsum += kernel[static_cast<std::size_t>(o + radius)];
                    for (int c = 0; c < nc; ++c) {
                        double acc = 0;
                        for (int o = lo; o <= hi; ++o) {
                            const std::size_t ni = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(vi) +
                                                                            static_cast<std::ptrdiff_t>(o) *
                                                                                static_cast<std::ptrdiff_t>(stride));
                            acc += kernel[static_cast<std::size_t>(o + radius)] * src[ni * nc + c];
                        }
                        dst[vi * nc + c] = static_cast<float>(acc / wsum);
                    }
                }
        });
        cur = std::move(next);
    }
    return cur;
}

/// Geometry of pyramid level `level`: dims divided by 2^level, spacing
/// multiplied, origin moved to the center of the first 2^level block.
inline Geometry pyramid_geometry(const Geometry& g, int level)
{
    const int f = 1 << level;
    Geometry out = g;
    for (int a = 0; a < 3; ++a) {
        out.dims[a] = g.dims[a] / f;
        out.spacing[a] = g.spacing[a] * f;
    }
    const double shift = 0.5 * (f - 1);
    out.origin = g.index_to_world({shift, shift, shift});
    return out;
}

/// Level 0 is v itself; level L is smoothed with sigma 2^(L-1) voxels and
/// downsampled by 2^L per axis.
inline std::vector<Volume> gaussian_pyramid(const Volume& v, int levels)
{
    if (levels < 1) throw ValidationError("gaussian_pyramid: levels must be >= 1");
    const int need = 1 << (levels - 1);
    for (int a = 0; a < 3; ++a)
        if (v.dims()[a] < need)
            throw ValidationError("gaussian_pyramid: volume too small for " + std::to_string(levels) + " levels");
    std::vector<Volume> out;
    out.reserve(static_cast<std::size_t>(levels));
    out.push_back(v);
    for (int L = 1; L < levels; ++L) {
        const double sigma = static_cast<double>(1 << (L - 1));
        const Volume smooth = gaussian_smooth(v, {sigma, sigma, sigma});
        out.push_back(resample(smooth, pyramid_geometry(v.geometry(), L), 0.0));
    }
    return out;
}

} // namespace sctreg
