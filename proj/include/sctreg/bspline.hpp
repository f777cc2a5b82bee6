#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sctreg/errors.hpp"
#include "sctreg/parallel.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

/// Uniform cubic B-spline basis at fractional offset t in [0, 1).
inline std::array<double, 4> bspline_weights(double t)
{
    const double s = 1.0 - t;
    const double t2 = t * t, t3 = t2 * t;
    return {s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0};
}

inline std::array<double, 4> bspline_weight_derivatives(double t)
{
    const double s = 1.0 - t;
    return {-0.5 * s * s, 1.5 * t * t - 2.0 * t, -1.5 * t * t + t + 0.5, 0.5 * t * t};
}

/// Control points influencing one world point: the 4x4x4 block starting at base.
struct SplineSupport {
    Index3 base{};
    std::array<std::array<double, 4>, 3> w{};
    std::array<std::array<double, 4>, 3> dw{}; // d/d(grid index)
};

/// Nonzero entries of dT(p)/dc: every listed control point contributes weight * I3.
struct ParameterJacobian {
    std::array<std::size_t, 64> control_point{};
    std::array<double, 64> weight{};
    int size = 0;

    bool empty() const { return size == 0; }
};

/// Cubic B-spline free-form deformation with world-space displacement coefficients.
///
/// Coefficients are stored Elastix style: all x components (control points
/// x-fastest, then y, then z), then all y components, then all z components.
/// The displacement is zero wherever the full 4x4x4 support does not lie on the grid.
class BSplineTransform {
public:
    BSplineTransform() = default;

    BSplineTransform(Index3 grid_dims, Vec3 grid_spacing, Vec3 grid_origin, Mat3 grid_direction,
                     std::vector<double> coefficients = {})
        : dims_(grid_dims), spacing_(grid_spacing), origin_(grid_origin), direction_(grid_direction),
          coefficients_(std::move(coefficients))
    {
        for (int a = 0; a < 3; ++a) {
            if (dims_[a] < 4) throw ValidationError("bspline: grid needs at least 4 control points per axis");
            if (!(spacing_[a] > 0)) throw ValidationError("bspline: grid spacing must be positive");
        }
        if (!is_orthonormal(direction_)) throw ValidationError("bspline: grid direction is not orthonormal");
        if (coefficients_.empty()) coefficients_.assign(num_parameters(), 0.0);
        if (coefficients_.size() != num_parameters())
            throw ValidationError("bspline: expected " + std::to_string(num_parameters()) + " coefficients, got " +
                                  std::to_string(coefficients_.size()));
    }

    /// Grid of the requested spacing covering `domain` with one control point
    /// of margin before the first voxel and at least two after the last.
    static BSplineTransform for_domain(const Geometry& domain, const Vec3& spacing)
    {
        Index3 n{};
        for (int a = 0; a < 3; ++a) {
            const double extent = (domain.dims[a] - 1) * domain.spacing[a];
            n[a] = static_cast<int>(std::floor(extent / spacing[a] + 1e-9)) + 4;
        }
        const Vec3 origin = domain.origin - mul(domain.direction, spacing);
        return BSplineTransform(n, spacing, origin, domain.direction);
    }

    static BSplineTransform for_domain(const Geometry& domain, double spacing)
    {
        return for_domain(domain, Vec3{spacing, spacing, spacing});
    }

    const Index3& grid_dims() const { return dims_; }
    const Vec3& grid_spacing() const { return spacing_; }
    const Vec3& grid_origin() const { return origin_; }
    const Mat3& grid_direction() const { return direction_; }
    std::span<const double> coefficients() const { return coefficients_; }
    std::span<double> coefficients() { return coefficients_; }
    void set_coefficients(std::vector<double> c)
    {
        if (c.size() != num_parameters()) throw ValidationError("bspline: coefficient count mismatch");
        coefficients_ = std::move(c);
    }

    std::size_t num_control_points() const
    {
        return static_cast<std::size_t>(dims_[0]) * static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(dims_[2]);
    }
    std::size_t num_parameters() const { return 3 * num_control_points(); }

    std::size_t control_point_id(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims_[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(k));
    }

    Vec3 control_point_position(int i, int j, int k) const
    {
        return origin_ + mul(direction_, Vec3{i * spacing_[0], j * spacing_[1], k * spacing_[2]});
    }

    Vec3 grid_index(const Vec3& p) const
    {
        const Vec3 r = mul_transposed(direction_, p - origin_);
        return {r[0] / spacing_[0], r[1] / spacing_[1], r[2] / spacing_[2]};
    }

    /// False when p lies outside the region with full spline support.
    bool support(const Vec3& p, SplineSupport& s, bool with_derivatives = false) const
    {
        const Vec3 g = grid_index(p);
        for (int a = 0; a < 3; ++a) {
            constexpr double eps = 1e-9;
            const double hi = dims_[a] - 2;
            if (!(g[a] >= 1.0 - eps && g[a] <= hi + eps)) return false;
            const double x = std::clamp(g[a], 1.0, hi);
            int f = static_cast<int>(std::floor(x));
            if (f > dims_[a] - 3) f = dims_[a] - 3;
            const double t = x - f;
            s.base[a] = f - 1;
            s.w[a] = bspline_weights(t);
            if (with_derivatives) s.dw[a] = bspline_weight_derivatives(t);
        }
        return true;
    }

    Vec3 displacement(const Vec3& p) const
    {
        SplineSupport s;
        if (!support(p, s)) return {0, 0, 0};
        return displacement(s);
    }

    Vec3 displacement(const SplineSupport& s) const
    {
        const std::size_t ncp = num_control_points();
        Vec3 u{0, 0, 0};
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b) {
                const double wyz = s.w[1][b] * s.w[2][c];
                const std::size_t row = control_point_id(s.base[0], s.base[1] + b, s.base[2] + c);
                for (int a = 0; a < 4; ++a) {
                    const double w = s.w[0][a] * wyz;
                    const std::size_t id = row + a;
                    u[0] += w * coefficients_[id];
                    u[1] += w * coefficients_[ncp + id];
                    u[2] += w * coefficients_[2 * ncp + id];
                }
            }
        return u;
    }

    Vec3 transform_point(const Vec3& p) const { return p + displacement(p); }

    ParameterJacobian jacobian_params(const Vec3& p) const
    {
        ParameterJacobian J;
        SplineSupport s;
        if (!support(p, s)) return J;
        fill_jacobian(s, J);
        return J;
    }

    void fill_jacobian(const SplineSupport& s, ParameterJacobian& J) const
    {
        J.size = 0;
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b) {
                const double wyz = s.w[1][b] * s.w[2][c];
                const std::size_t row = control_point_id(s.base[0], s.base[1] + b, s.base[2] + c);
                for (int a = 0; a < 4; ++a) {
                    J.control_point[J.size] = row + a;
                    J.weight[J.size] = s.w[0][a] * wyz;
                    ++J.size;
                }
            }
    }

    /// dT/dp at p (identity outside the support region).
    Mat3 spatial_jacobian(const Vec3& p) const
    {
        Mat3 J = identity_matrix();
        SplineSupport s;
        if (!support(p, s, true)) return J;
        const std::size_t ncp = num_control_points();
        Mat3 dg{}; // du_i / dg_j
        for (int c = 0; c < 4; ++c)
            for (int b = 0; b < 4; ++b)
                for (int a = 0; a < 4; ++a) {
                    const std::size_t id = control_point_id(s.base[0] + a, s.base[1] + b, s.base[2] + c);
                    const Vec3 dw{s.dw[0][a] * s.w[1][b] * s.w[2][c], s.w[0][a] * s.dw[1][b] * s.w[2][c],
                                  s.w[0][a] * s.w[1][b] * s.dw[2][c]};
                    for (int i = 0; i < 3; ++i) {
                        const double coef = coefficients_[i * ncp + id];
                        for (int j = 0; j < 3; ++j) dg[i][j] += coef * dw[j];
                    }
                }
        // dg/dp = diag(1/spacing) * direction^T
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) {
                double acc = 0;
                for (int j = 0; j < 3; ++j) acc += dg[i][j] / spacing_[j] * direction_[k][j];
                J[i][k] += acc;
            }
        return J;
    }

    bool is_identity() const
    {
        for (double c : coefficients_)
            if (c != 0) return false;
        return true;
    }

    bool operator==(const BSplineTransform&) const = default;

private:
    Index3 dims_{4, 4, 4};
    Vec3 spacing_{1, 1, 1};
    Vec3 origin_{0, 0, 0};
    Mat3 direction_ = identity_matrix();
    std::vector<double> coefficients_ = std::vector<double>(192, 0.0);
};

inline double determinant(const Mat3& m)
{
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

/// Halves the grid spacing with exact cubic subdivision; the represented
/// displacement field is unchanged. Grid dims grow as 2n - 3 per axis.
inline BSplineTransform refine_dyadic(const BSplineTransform& T)
{
    const Index3 od = T.grid_dims();
    Index3 nd{};
    for (int a = 0; a < 3; ++a) nd[a] = 2 * od[a] - 3;
    const std::size_t ncp_old = T.num_control_points();
    const auto old = T.coefficients();

    // Subdivide one axis of a component block; dims `cur` -> `next`.
    auto refine_axis = [](const std::vector<double>& in, Index3 cur, int axis) {
        Index3 next = cur;
        next[axis] = 2 * cur[axis] - 3;
        std::vector<double> out(static_cast<std::size_t>(next[0]) * next[1] * next[2]);
        const auto id = [](const Index3& d, int i, int j, int k) {
            return static_cast<std::size_t>(i) + static_cast<std::size_t>(d[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d[1]) * k);
        };
        for (int k = 0; k < next[2]; ++k)
            for (int j = 0; j < next[1]; ++j)
                for (int i = 0; i < next[0]; ++i) {
                    int pos[3] = {i, j, k};
                    const int J = pos[axis] + 1; // position in old half-steps
                    auto at = [&](int old_index) {
                        int q[3] = {i, j, k};
                        q[axis] = old_index;
                        return in[id(cur, q[0], q[1], q[2])];
                    };
                    double v;
                    if (J % 2 == 0) {
                        const int c = J / 2;
                        v = (at(c - 1) + 6.0 * at(c) + at(c + 1)) / 8.0;
                    } else {
                        const int c = (J - 1) / 2;
                        v = (at(c) + at(c + 1)) / 2.0;
                    }
                    out[id(next, i, j, k)] = v;
                }
        return std::pair{out, next};
    };

    std::vector<double> coeffs;
    coeffs.reserve(3 * static_cast<std::size_t>(nd[0]) * nd[1] * nd[2]);
    for (int comp = 0; comp < 3; ++comp) {
        std::vector<double> block(old.begin() + static_cast<std::ptrdiff_t>(comp * ncp_old),
                                  old.begin() + static_cast<std::ptrdiff_t>((comp + 1) * ncp_old));
        Index3 cur = od;
        for (int axis = 0; axis < 3; ++axis) {
            auto [out, next] = refine_axis(block, cur, axis);
            block = std::move(out);
            cur = next;
        }
        coeffs.insert(coeffs.end(), block.begin(), block.end());
    }
    const Vec3 half{T.grid_spacing()[0] / 2, T.grid_spacing()[1] / 2, T.grid_spacing()[2] / 2};
    const Vec3 origin = T.grid_origin() + mul(T.grid_direction(), half);
    return BSplineTransform(nd, half, origin, T.grid_direction(), std::move(coeffs));
}

struct DeformationSpec {
    double max_amplitude = 0.0; // mm
    std::uint64_t seed = 0;
    double grid_spacing = 20.0; // mm
};

/// Smallest Jacobian determinant of T over 3^3 samples per grid cell of the support region.
inline double min_jacobian_determinant(const BSplineTransform& T)
{
    const Index3 d = T.grid_dims();
    const double frac[3] = {1.0 / 6.0, 0.5, 5.0 / 6.0};
    double best = std::numeric_limits<double>::infinity();
    for (int k = 1; k < d[2] - 2; ++k)
        for (int j = 1; j < d[1] - 2; ++j)
            for (int i = 1; i < d[0] - 2; ++i)
                for (double fz : frac)
                    for (double fy : frac)
                        for (double fx : frac) {
                            const Vec3 p = T.grid_origin() + mul(T.grid_direction(), Vec3{(i + fx) * T.grid_spacing()[0],
                                                                                            (j + fy) * T.grid_spacing()[1],
                                                                                            (k + fz) * T.grid_spacing()[2]});
                            best = std::min(best, determinant(T.spatial_jacobian(p)));
                        }
    return best;
}

/// Seeded random FFD with coefficients uniform in [-A, A]^3 on a grid covering `domain`.
inline BSplineTransform random_deformation(const Geometry& domain, const DeformationSpec& spec)
{
    if (spec.max_amplitude < 0) throw ValidationError("random_deformation: amplitude must be >= 0");
    if (!(spec.grid_spacing > 0)) throw ValidationError("random_deformation: grid spacing must be positive");
    if (!(spec.max_amplitude < 0.4 * spec.grid_spacing))
        throw ValidationError("random_deformation: amplitude " + std::to_string(spec.max_amplitude) +
                              " mm risks folding (must be < 0.4 * grid spacing)");
    BSplineTransform T = BSplineTransform::for_domain(domain, spec.grid_spacing);
    if (spec.max_amplitude == 0) return T;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> dist(-spec.max_amplitude, spec.max_amplitude);
    std::vector<double> c(T.num_parameters());
    for (double& x : c) x = dist(rng);
    T.set_coefficients(std::move(c));
    if (!(min_jacobian_determinant(T) > 0))
        throw ValidationError("random_deformation: generated deformation folds (non-positive Jacobian determinant)");
    return T;
}

/// out(x) = v(T(x)) sampled trilinearly at each target voxel center.
inline Volume warp_volume(const Volume& v, const BSplineTransform& T, const Geometry& target, double background)
{
    target.validate();
    Volume out(target, v.channels(), v.semantics());
    const int nc = v.channels();
    auto dst = out.data();
    parallel_for(static_cast<std::size_t>(target.dims[2]), [&](std::size_t kz) {
        std::vector<double> buf(static_cast<std::size_t>(nc));
        const int k = static_cast<int>(kz);
        for (int j = 0; j < target.dims[1]; ++j)
            for (int i = 0; i < target.dims[0]; ++i) {
                sample_linear_into(v, T.transform_point(target.voxel_center(i, j, k)), background, buf);
                const std::size_t base = out.voxel_index(i, j, k) * nc;
                for (int c = 0; c < nc; ++c) dst[base + c] = static_cast<float>(buf[c]);
            }
    });
    return out;
}

} // namespace sctreg
