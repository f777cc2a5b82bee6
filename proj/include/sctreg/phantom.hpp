#pragma once

// Deterministic synthetic CT-like phantoms, modality remapping, landmark
// extraction and target registration error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sctreg/bspline.hpp"
#include "sctreg/errors.hpp"
#include "sctreg/metaimage.hpp"
#include "sctreg/preprocess.hpp"
#include "sctreg/volume.hpp"

namespace sctreg {

inline constexpr double kAirHU = -1000.0;

struct Phantom {
    Volume image;
    BodyMask mask;
    std::vector<Vec3> landmarks;
    std::optional<Volume> modality_twin;
};

struct PhantomOptions {
    std::size_t landmarks = 256;
    double edge_width = 1.0;       // voxels
    double mask_margin = 0.0;      // voxels of air kept around the body
    double texture_amplitude = 100; // HU, summed over all waves
    int texture_waves = 8;
    double texture_wavelength_min = 8.0;  // mm
    double texture_wavelength_max = 16.0; // mm
    bool make_twin = true;
};

enum class RemapMode { invert, gamma, piecewise };

inline RemapMode parse_remap_mode(const std::string& s)
{
    if (s == "invert") return RemapMode::invert;
    if (s == "gamma") return RemapMode::gamma;
    if (s == "piecewise") return RemapMode::piecewise;
    throw ValidationError("unknown remap mode '" + s + "' (expected invert|gamma|piecewise)");
}

/// Monotone intensity remapping over the volume's own [min, max] range.
/// invert: min + max - v. gamma: u^0.5. piecewise: knees at (0.3, 0.6), (0.7, 0.7).
inline Volume modality_remap(const Volume& v, RemapMode mode)
{
    const auto src = v.data();
    if (src.empty()) return v;
    const auto [mn, mx] = std::minmax_element(src.begin(), src.end());
    const double lo = *mn, hi = *mx, range = hi - lo;
    Volume out(v.geometry(), v.channels(), v.semantics());
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double x = src[i];
        double y = x;
        if (mode == RemapMode::invert) {
            y = (lo + hi) - x;
        } else if (range > 0) {
            const double u = (x - lo) / range;
            double w = u;
            if (mode == RemapMode::gamma) {
                w = std::sqrt(u);
            } else if (u < 0.3) {
                w = u * 2.0;
            } else if (u < 0.7) {
                w = 0.6 + (u - 0.3) * 0.25;
            } else {
                w = 0.7 + (u - 0.7);
            }
            y = lo + w * range;
        }
        dst[i] = static_cast<float>(y);
    }
    return out;
}

namespace detail {

struct Blob {
    Vec3 center;
    Vec3 radii;
    double hu;
    bool tube; // infinite along z, clipped by the body
};

inline double blob_alpha(const Blob& b, const Vec3& p, double width)
{
    double f = 0;
    for (int a = 0; a < (b.tube ? 2 : 3); ++a) {
        const double q = (p[a] - b.center[a]) / b.radii[a];
        f += q * q;
    }
    const double rmean = b.tube ? 0.5 * (b.radii[0] + b.radii[1]) : (b.radii[0] + b.radii[1] + b.radii[2]) / 3.0;
    const double d = (std::sqrt(f) - 1.0) * rmean;
    return 0.5 * (1.0 - std::tanh(d / width));
}

inline double ellipsoid_level(const Vec3& p, const Vec3& c, const Vec3& r)
{
    double f = 0;
    for (int a = 0; a < 3; ++a) {
        const double q = (p[a] - c[a]) / r[a];
        f += q * q;
    }
    return std::sqrt(f);
}

inline std::vector<double> gradient_magnitude(const Volume& v)
{
    const Index3 d = v.dims();
    const Vec3 s = v.geometry().spacing;
    std::vector<double> out(v.voxel_count(), 0.0);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                double g2 = 0;
                const int idx[3] = {i, j, k};
                for (int a = 0; a < 3; ++a) {
                    int lo[3] = {i, j, k}, hi[3] = {i, j, k};
                    lo[a] = std::max(0, idx[a] - 1);
                    hi[a] = std::min(d[a] - 1, idx[a] + 1);
                    if (hi[a] == lo[a]) continue;
                    const double g = (v.at(hi[0], hi[1], hi[2]) - v.at(lo[0], lo[1], lo[2])) / ((hi[a] - lo[a]) * s[a]);
                    g2 += g * g;
                }
                out[v.voxel_index(i, j, k)] = std::sqrt(g2);
            }
    return out;
}

} // namespace detail

/// Voxel-centre landmarks on gradient-magnitude maxima inside an eroded mask.
/// Candidates are 3x3x3 local maxima, taken strongest first with a minimum
/// separation that halves until `count` points are found.
inline std::vector<Vec3> extract_landmarks(const Volume& image, const BodyMask& mask, std::size_t count, int erosion = 3)
{
    const Index3 d = image.dims();
    std::vector<std::uint8_t> m(mask.volume().data().size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.inside(i) ? 1 : 0;
    const auto core = erosion > 0 ? detail::erode(m, d, erosion) : m;
    const auto gm = detail::gradient_magnitude(image);

    struct Cand {
        double g;
        Index3 c;
    };
    std::vector<Cand> cands;
    for (int k = 1; k < d[2] - 1; ++k)
        for (int j = 1; j < d[1] - 1; ++j)
            for (int i = 1; i < d[0] - 1; ++i) {
                const std::size_t v = image.voxel_index(i, j, k);
                if (!core[v] || gm[v] <= 0) continue;
                bool is_max = true;
                for (int dz = -1; dz <= 1 && is_max; ++dz)
                    for (int dy = -1; dy <= 1 && is_max; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (!dx && !dy && !dz) continue;
                            const std::size_t u = image.voxel_index(i + dx, j + dy, k + dz);
                            // Ties broken by index so plateaus yield one maximum.
                            if (gm[u] > gm[v] || (gm[u] == gm[v] && u < v)) { is_max = false; break; }
                        }
                if (is_max) cands.push_back({gm[v], {i, j, k}});
            }
    // Ridges of equal strength are rarely strict local maxima; admit all
    // in-core edge voxels as a second tier.
    std::vector<Cand> tier2;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const std::size_t v = image.voxel_index(i, j, k);
                if (core[v] && gm[v] > 0) tier2.push_back({gm[v], {i, j, k}});
            }
    const auto by_strength = [&](const Cand& a, const Cand& b) {
        if (a.g != b.g) return a.g > b.g;
        return image.voxel_index(a.c[0], a.c[1], a.c[2]) < image.voxel_index(b.c[0], b.c[1], b.c[2]);
    };
    std::sort(cands.begin(), cands.end(), by_strength);
    std::sort(tier2.begin(), tier2.end(), by_strength);
    cands.insert(cands.end(), tier2.begin(), tier2.end());

    std::vector<Index3> chosen;
    for (double sep = 6.0; sep >= 1.0 && chosen.size() < count; sep /= 2) {
        for (const auto& c : cands) {
            if (chosen.size() >= count) break;
            bool ok = true;
            for (const auto& q : chosen) {
                const double dx = c.c[0] - q[0], dy = c.c[1] - q[1], dz = c.c[2] - q[2];
                if (dx * dx + dy * dy + dz * dz < sep * sep) { ok = false; break; }
            }
            if (ok) chosen.push_back(c.c);
        }
    }
    if (chosen.size() < count)
        throw ValidationError("extract_landmarks: only " + std::to_string(chosen.size()) + " of " + std::to_string(count) +
                              " landmarks found");
    std::vector<Vec3> out;
    out.reserve(chosen.size());
    for (const auto& c : chosen) out.push_back(image.geometry().voxel_center(c[0], c[1], c[2]));
    return out;
}

/// Body ellipsoid in air with nested bone, soft-tissue and air structures,
/// smooth edges and low-amplitude sinusoidal texture.
inline Phantom make_phantom(const Index3& dims, double spacing, std::uint64_t seed, const PhantomOptions& opt = {})
{
    if (dims[0] < 32 || dims[1] < 32 || dims[2] < 32) throw ValidationError("make_phantom: dims must be >= 32 per axis");
    if (!(spacing > 0)) throw ValidationError("make_phantom: spacing must be positive");
    Geometry g;
    g.dims = dims;
    g.spacing = {spacing, spacing, spacing};
    g.origin = {0, 0, 0};
    const Vec3 extent{(dims[0] - 1) * spacing, (dims[1] - 1) * spacing, (dims[2] - 1) * spacing};

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };

    const Vec3 center{0.5 * extent[0] + uni(-1, 1) * spacing, 0.5 * extent[1] + uni(-1, 1) * spacing, 0.5 * extent[2]};
    const Vec3 body_r{extent[0] * uni(0.40, 0.44), extent[1] * uni(0.33, 0.38), extent[2] * uni(0.40, 0.44)};

    std::vector<detail::Blob> blobs;
    const auto inner_point = [&](double reach) {
        return Vec3{center[0] + uni(-reach, reach) * body_r[0], center[1] + uni(-reach, reach) * body_r[1],
                    center[2] + uni(-reach, reach) * body_r[2]};
    };
    const double rmin = std::min({body_r[0], body_r[1], body_r[2]});
    // Soft-tissue organs.
    for (int n = 0; n < 6; ++n)
        blobs.push_back({inner_point(0.5), {rmin * uni(0.15, 0.3), rmin * uni(0.15, 0.3), rmin * uni(0.15, 0.3)},
                         uni(0.0, 100.0), false});
    // Air pockets.
    for (int n = 0; n < 2; ++n)
        blobs.push_back({inner_point(0.45), {rmin * uni(0.1, 0.2), rmin * uni(0.1, 0.2), rmin * uni(0.1, 0.2)}, kAirHU, false});
    // Bones: two tubes and a few compact pieces.
    for (int n = 0; n < 2; ++n) {
        const double rr = rmin * uni(0.07, 0.11);
        blobs.push_back({inner_point(0.5), {rr, rr, 1.0}, uni(900.0, 1400.0), true});
    }
    for (int n = 0; n < 3; ++n)
        blobs.push_back({inner_point(0.55), {rmin * uni(0.08, 0.16), rmin * uni(0.08, 0.16), rmin * uni(0.08, 0.16)},
                         uni(700.0, 1200.0), false});

    struct Wave {
        Vec3 k;
        double phase;
    };
    std::vector<Wave> waves;
    for (int n = 0; n < opt.texture_waves; ++n) {
        const double wavelength = uni(opt.texture_wavelength_min, opt.texture_wavelength_max);
        Vec3 dir{uni(-1, 1), uni(-1, 1), uni(-1, 1)};
        const double len = std::max(norm(dir), 1e-3);
        waves.push_back({(2 * 3.141592653589793 / (wavelength * len)) * dir, uni(0, 2 * 3.141592653589793)});
    }

    const double width = opt.edge_width * spacing;
    const double margin = opt.mask_margin * spacing;
    Volume img(g, 1, Semantics::hu, static_cast<float>(kAirHU));
    std::vector<float> maskv(g.voxel_count(), 0.0f);
    auto dst = img.data();
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i) {
                const Vec3 p = g.voxel_center(i, j, k);
                const double f = detail::ellipsoid_level(p, center, body_r);
                const double body_alpha = 0.5 * (1.0 - std::tanh((f - 1.0) * rmin / width));
                double tissue = 40.0;
                for (const auto& w : waves) tissue += opt.texture_amplitude / static_cast<double>(waves.size()) * std::sin(dot(w.k, p) + w.phase);
                for (const auto& b : blobs) {
                    const double a = detail::blob_alpha(b, p, width);
                    tissue = (1 - a) * tissue + a * b.hu;
                }
                const std::size_t v = img.voxel_index(i, j, k);
                dst[v] = static_cast<float>(body_alpha * tissue + (1 - body_alpha) * kAirHU);
                maskv[v] = (f - 1.0) * rmin < margin ? 1.0f : 0.0f;
            }

    Phantom ph{std::move(img), BodyMask(Volume(g, 1, std::move(maskv), Semantics::label)), {}, std::nullopt};
    ph.landmarks = extract_landmarks(ph.image, ph.mask, opt.landmarks);
    if (opt.make_twin) ph.modality_twin = modality_remap(ph.image, RemapMode::invert);
    return ph;
}

/// Six smooth feature channels derived from a CT-like HU volume: two blurred
/// intensities, a blurred squared intensity and soft air / soft-tissue /
/// bone memberships.
inline Volume synthetic_features(const Volume& hu)
{
    if (hu.channels() != 1) throw ValidationError("synthetic_features: image must be single-channel");
    const std::size_t n = hu.voxel_count();
    const auto src = hu.data();
    const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    std::vector<Volume> raw;
    for (int c = 0; c < 6; ++c) raw.emplace_back(hu.geometry(), 1, Semantics::feature);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (src[i] + 1000.0) / 2500.0;
        raw[0].data()[i] = static_cast<float>(u);
        raw[1].data()[i] = static_cast<float>(u);
        raw[2].data()[i] = static_cast<float>(u * u);
        raw[3].data()[i] = static_cast<float>(sig(-(src[i] + 500.0) / 100.0));
        raw[4].data()[i] = static_cast<float>(sig((src[i] - 50.0) / 40.0));
        raw[5].data()[i] = static_cast<float>(sig((src[i] - 500.0) / 100.0));
    }
    const double sig_vox[6] = {1.0, 1.5, 1.0, 1.0, 1.0, 1.0};
    Volume out(hu.geometry(), 6, Semantics::feature);
    auto dst = out.data();
    for (int c = 0; c < 6; ++c) {
        const Volume s = gaussian_smooth(raw[static_cast<std::size_t>(c)], {sig_vox[c], sig_vox[c], sig_vox[c]});
        const auto sd = s.data();
        for (std::size_t i = 0; i < n; ++i) dst[i * 6 + static_cast<std::size_t>(c)] = sd[i];
    }
    return out;
}

struct TreStats {
    double mean = 0;
    double max = 0;
    double p95 = 0;
    std::vector<double> per_landmark;
};

inline TreStats landmark_tre(const BSplineTransform& T_true, const BSplineTransform& T_est, const std::vector<Vec3>& landmarks)
{
    if (landmarks.empty()) throw ValidationError("landmark_tre: no landmarks");
    TreStats out;
    out.per_landmark.reserve(landmarks.size());
    double sum = 0;
    for (const auto& p : landmarks) {
        const double e = norm(T_est.transform_point(p) - T_true.transform_point(p));
        out.per_landmark.push_back(e);
        sum += e;
        out.max = std::max(out.max, e);
    }
    out.mean = sum / static_cast<double>(landmarks.size());
    out.p95 = percentile(out.per_landmark, 0.95);
    return out;
}

/// One "x y z" world coordinate per line after a "# landmarks N" header.
inline void write_landmarks(const std::vector<Vec3>& pts, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("landmarks: cannot open '" + path + "' for writing");
    out << "# landmarks " << pts.size() << "\n";
    for (const auto& p : pts) out << format_real(p[0]) << " " << format_real(p[1]) << " " << format_real(p[2]) << "\n";
    if (!out) throw IoError("landmarks: write failed for '" + path + "'");
}

inline std::vector<Vec3> read_landmarks(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("landmarks: cannot open '" + path + "'");
    std::vector<Vec3> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Vec3 p{};
        if (!(ss >> p[0] >> p[1] >> p[2])) throw ParseError("landmarks: malformed point on line " + std::to_string(lineno));
        out.push_back(p);
    }
    return out;
}

} // namespace sctreg
