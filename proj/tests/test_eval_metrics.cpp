#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eval_oracles.hpp"
#include "reference_table.hpp"
#include "sctreg/eval_metrics.hpp"
#include "support.hpp"

using namespace sctreg;
using namespace testsupport;

namespace {

BodyMask full_mask(const Geometry& g) { return BodyMask(Volume(g, 1, Semantics::label, 1.0f)); }

BodyMask random_mask(const Geometry& g, std::uint64_t seed)
{
    Volume m = random_volume(g, seed, 0, 1, 1, Semantics::label);
    std::vector<float> d(m.data().begin(), m.data().end());
    for (float& x : d) x = x < 0.7f ? 1.0f : 0.0f;
    return BodyMask(Volume(g, 1, std::move(d), Semantics::label));
}

Volume offset(const Volume& v, const BodyMask& m, float c)
{
    std::vector<float> d(v.data().begin(), v.data().end());
    for (std::size_t i = 0; i < d.size(); ++i)
        if (m.inside(i)) d[i] += c;
    return Volume(v.geometry(), 1, std::move(d), v.semantics());
}

Volume add_noise(const Volume& v, double sd, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0, sd);
    std::vector<float> d(v.data().begin(), v.data().end());
    for (float& x : d) x = static_cast<float>(x + N(rng));
    return Volume(v.geometry(), 1, std::move(d), v.semantics());
}

Volume smooth_hu(const Geometry& g, std::uint64_t seed)
{
    Volume v = smooth_random_volume(g, seed, 2.0);
    std::vector<float> d(v.data().begin(), v.data().end());
    for (float& x : d) x = 800.0f * x;
    return Volume(g, 1, std::move(d), Semantics::hu);
}

} // namespace

TEST(Mae, MatchesOracleOnRandomCases)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Geometry g = cube(16);
        const Volume a = random_volume(g, s, -1000, 2000, 1, Semantics::hu);
        const Volume b = random_volume(g, s + 100, -1000, 2000, 1, Semantics::hu);
        const BodyMask m = random_mask(g, s + 200);
        EXPECT_NEAR(mae(a, b, m), oracle_mae(a, b, m), 1e-9 * oracle_mae(a, b, m));
        EXPECT_EQ(mae(a, b, m), mae(b, a, m));
    }
}

TEST(Mae, ConstantOffsetAndIdentity)
{
    const Geometry g = cube(8);
    const Volume a = random_volume(g, 1, -500, 500, 1, Semantics::hu);
    const BodyMask m = random_mask(g, 2);
    EXPECT_EQ(mae(a, a, m), 0.0);
    EXPECT_NEAR(mae(a, offset(a, m, 10.0f), m), 10.0, 1e-4);
}

TEST(Mae, RejectsMismatchAndEmptyMask)
{
    const Volume a(cube(8), 1, Semantics::hu, 0.0f), b(cube(9), 1, Semantics::hu, 0.0f);
    EXPECT_THROW(mae(a, b, full_mask(cube(8))), ValidationError);
    EXPECT_THROW(mae(a, a, BodyMask(Volume(cube(8), 1, Semantics::label, 0.0f))), ValidationError);
    EXPECT_THROW(mae(a, a, full_mask(cube(9))), ValidationError);
}

TEST(Psnr, KnownValuesAndOracle)
{
    const Geometry g = cube(8);
    const Volume a = random_volume(g, 3, -500, 500, 1, Semantics::hu);
    const BodyMask m = full_mask(g);
    EXPECT_NEAR(psnr(a, offset(a, m, 40.95f), m), 40.0, 1e-4);
    EXPECT_TRUE(std::isinf(psnr(a, a, m)));
    for (std::uint64_t s = 0; s < 10; ++s) {
        const Volume b = random_volume(g, s + 9, -500, 500, 1, Semantics::hu);
        const BodyMask rm = random_mask(g, s);
        EXPECT_NEAR(psnr(a, b, rm), oracle_psnr(a, b, rm, 4095.0), 1e-9);
        EXPECT_NEAR(psnr(a, b, rm, 2000.0), oracle_psnr(a, b, rm, 2000.0), 1e-9);
    }
}

TEST(Dice, KnownValues)
{
    const Geometry g = cube(10);
    std::vector<float> a(g.voxel_count(), 0.0f), b(g.voxel_count(), 0.0f);
    for (int i = 0; i < 100; ++i) a[static_cast<std::size_t>(i)] = 1.0f;
    for (int i = 50; i < 150; ++i) b[static_cast<std::size_t>(i)] = 1.0f;
    const Volume A(g, 1, a, Semantics::label), B(g, 1, b, Semantics::label);
    EXPECT_DOUBLE_EQ(dice(A, B, 1).value, 0.5);
    EXPECT_DOUBLE_EQ(dice(A, A, 1).value, 1.0);
    const auto empty = dice(A, B, 7);
    EXPECT_TRUE(empty.both_empty);
    EXPECT_EQ(empty.value, 1.0);
    EXPECT_FALSE(dice(A, B, 1).both_empty);
}

TEST(Dice, MatchesSetOracle)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Geometry g = cube(16);
        const Volume a = random_labels(g, s), b = random_labels(g, s + 50);
        EXPECT_DOUBLE_EQ(dice(a, b, 1).value, oracle_dice(a, b, 1));
        EXPECT_DOUBLE_EQ(dice(a, b, 1).value, dice(b, a, 1).value);
    }
}

TEST(Hd95, KnownValues)
{
    const Geometry g = cube(12, 1.0);
    std::vector<float> a(g.voxel_count(), 0.0f), b(g.voxel_count(), 0.0f);
    const Volume probe(g);
    a[probe.voxel_index(2, 3, 4)] = 1.0f;
    b[probe.voxel_index(7, 3, 4)] = 1.0f;
    const Volume A(g, 1, a, Semantics::label), B(g, 1, b, Semantics::label);
    EXPECT_NEAR(hd95(A, B, 1), 5.0, 1e-12);
    EXPECT_EQ(hd95(A, A, 1), 0.0);
    EXPECT_THROW(hd95(A, B, 3), ValidationError);
}

TEST(Hd95, MatchesBruteForceWithAnisotropicSpacing)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        Geometry g;
        g.dims = {8 + static_cast<int>(s % 5), 12, 7 + static_cast<int>(s % 3)};
        g.spacing = {0.8 + 0.1 * static_cast<double>(s % 4), 1.3, 2.0};
        const Volume a = random_labels(g, s), b = random_labels(g, s + 77);
        EXPECT_NEAR(hd95(a, b, 1), oracle_hd95(a, b, 1), 1e-6) << "seed " << s;
        EXPECT_NEAR(hd95(a, b, 1), hd95(b, a, 1), 1e-12);
    }
}

TEST(MsSsim, IdentityIsOne)
{
    const Geometry g = cube(32);
    const Volume v = smooth_hu(g, 4);
    const auto r = ms_ssim(v, v, full_mask(g));
    EXPECT_NEAR(r.value, 1.0, 1e-9);
    EXPECT_TRUE(r.scales_reduced);
    EXPECT_EQ(r.scales_used, 2);
    EXPECT_EQ(r.scales_requested, 5);
}

TEST(MsSsim, SingleScaleMatchesDirectOracle)
{
    const Geometry g = cube(32);
    const Volume a = smooth_hu(g, 5);
    const Volume b = add_noise(a, 60.0, 6);
    SsimOptions o;
    const auto r = ms_ssim(a, b, full_mask(g), 1, o);
    EXPECT_FALSE(r.scales_reduced);
    EXPECT_NEAR(r.value, oracle_ssim(a, b, o.data_range), 1e-6);
    o.data_range = 500;
    EXPECT_NEAR(ms_ssim(a, b, full_mask(g), 1, o).value, oracle_ssim(a, b, 500), 1e-6);
}

TEST(MsSsim, AnticorrelatedRampIsLow)
{
    const Geometry g = cube(24);
    Volume a(g, 1, Semantics::hu);
    std::vector<float> d(g.voxel_count()), e(g.voxel_count());
    for (int k = 0; k < 24; ++k)
        for (int j = 0; j < 24; ++j)
            for (int i = 0; i < 24; ++i) {
                const double v = 100.0 * (i - 11.5) + 60.0 * (j - 11.5) + 40.0 * (k - 11.5);
                d[a.voxel_index(i, j, k)] = static_cast<float>(v);
                e[a.voxel_index(i, j, k)] = static_cast<float>(-v);
            }
    const Volume x(g, 1, d, Semantics::hu), y(g, 1, e, Semantics::hu);
    EXPECT_LT(ms_ssim(x, y, full_mask(g)).value, 0.2);
}

TEST(MsSsim, DecreasesWithNoise)
{
    const Geometry g = cube(32);
    const Volume a = smooth_hu(g, 8);
    const BodyMask m = full_mask(g);
    double prev = 1.0;
    for (double sd : {20.0, 80.0, 300.0}) {
        const double v = ms_ssim(a, add_noise(a, sd, 11), m).value;
        EXPECT_LT(v, prev);
        EXPECT_LE(v, 1.0);
        prev = v;
    }
}

TEST(MsSsim, MaskBoxSmallerThanWindowIsRejected)
{
    const Geometry g = cube(32);
    const Volume a = smooth_hu(g, 8);
    std::vector<float> m(g.voxel_count(), 0.0f);
    for (int k = 3; k < 9; ++k)
        for (int j = 3; j < 9; ++j)
            for (int i = 3; i < 9; ++i) m[a.voxel_index(i, j, k)] = 1.0f;
    EXPECT_THROW(ms_ssim(a, a, BodyMask(Volume(g, 1, m, Semantics::label))), ValidationError);
}

TEST(ErrorMap, MatchesMaeAndZeroOutside)
{
    const Geometry g = cube(12);
    const Volume a = random_volume(g, 1, -1000, 1000, 1, Semantics::hu), b = random_volume(g, 2, -1000, 1000, 1, Semantics::hu);
    const BodyMask m = random_mask(g, 3);
    const Volume e = error_map(a, b, m);
    double s = 0;
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        if (m.inside(v)) {
            s += e.data()[v];
            EXPECT_NEAR(e.data()[v], std::abs(a.data()[v] - b.data()[v]), 1e-3);
        } else {
            EXPECT_EQ(e.data()[v], 0.0f);
        }
    }
    EXPECT_NEAR(s / static_cast<double>(m.count()), mae(a, b, m), 1e-6 * mae(a, b, m));
    const Volume z = error_map(a, offset(a, m, 10.0f), m);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) EXPECT_NEAR(z.data()[v], m.inside(v) ? 10.0f : 0.0f, 1e-3);
}

TEST(Aggregate, ReproducesReferenceTable)
{
    for (const auto& col : reference_table()) {
        std::map<Region, RegionMetrics> per;
        const Region regions[3] = {Region::AB, Region::HN, Region::TH};
        for (int r = 0; r < 3; ++r) {
            RegionMetrics m;
            if (col.metric == "mae") m.mae = col.regions[static_cast<std::size_t>(r)];
            if (col.metric == "psnr") m.psnr = col.regions[static_cast<std::size_t>(r)];
            if (col.metric == "ms_ssim") m.ms_ssim = col.regions[static_cast<std::size_t>(r)];
            per[regions[r]] = m;
        }
        const auto rep = aggregate_regions(per);
        const double got = col.metric == "mae" ? rep.aggregated.mae : col.metric == "psnr" ? rep.aggregated.psnr : rep.aggregated.ms_ssim;
        EXPECT_NEAR(got, col.aggregated, 0.005) << col.task << " " << col.method << " " << col.metric;
    }
}

TEST(Aggregate, OptionalMetricsAndErrors)
{
    std::map<Region, RegionMetrics> per;
    per[Region::AB] = {10, 30, 0.9, 0.8, 4.0};
    per[Region::HN] = {20, 32, 0.95, std::nullopt, std::nullopt};
    const auto rep = aggregate_regions(per);
    EXPECT_DOUBLE_EQ(rep.aggregated.mae, 15.0);
    EXPECT_DOUBLE_EQ(*rep.aggregated.dice, 0.8);
    EXPECT_DOUBLE_EQ(*rep.aggregated.hd95, 4.0);
    EXPECT_THROW(aggregate_regions({}), ValidationError);
    EXPECT_DOUBLE_EQ(round2(63.3667), 63.37);
    EXPECT_EQ(parse_region("TH"), Region::TH);
    EXPECT_THROW(parse_region("XX"), ValidationError);
}
