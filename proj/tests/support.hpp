#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "sctreg/volume.hpp"

namespace testsupport {

using namespace sctreg;

inline Geometry cube(int n, double spacing = 1.0, Vec3 origin = {0, 0, 0})
{
    Geometry g;
    g.dims = {n, n, n};
    g.spacing = {spacing, spacing, spacing};
    g.origin = origin;
    return g;
}

/// Rotation about z by `deg` composed with rotation about x by `deg2`.
inline Mat3 rotation(double deg, double deg2 = 0)
{
    const double a = deg * 3.141592653589793 / 180, b = deg2 * 3.141592653589793 / 180;
    const Mat3 rz{{{std::cos(a), -std::sin(a), 0}, {std::sin(a), std::cos(a), 0}, {0, 0, 1}}};
    const Mat3 rx{{{1, 0, 0}, {0, std::cos(b), -std::sin(b)}, {0, std::sin(b), std::cos(b)}}};
    Mat3 m{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 3; ++k) m[r][c] += rz[r][k] * rx[k][c];
    return m;
}

inline Volume random_volume(const Geometry& g, std::uint64_t seed, double lo = -1, double hi = 1, int channels = 1,
                            Semantics sem = Semantics::normalized)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(lo, hi);
    Volume v(g, channels, sem);
    for (float& x : v.data()) x = static_cast<float>(U(rng));
    return v;
}

/// Smooth sum of blurred random blobs, roughly in [-1, 1].
inline Volume smooth_random_volume(const Geometry& g, std::uint64_t seed, double sigma_vox = 2.0)
{
    Volume v = random_volume(g, seed, -1, 1);
    v = gaussian_smooth(v, {sigma_vox, sigma_vox, sigma_vox});
    double mx = 0;
    for (float x : v.data()) mx = std::max(mx, std::abs(static_cast<double>(x)));
    for (float& x : v.data()) x = static_cast<float>(x / mx);
    return v;
}

inline std::filesystem::path temp_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("sctreg_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testsupport
