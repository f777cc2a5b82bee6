#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "sctreg/mind.hpp"
#include "sctreg/similarity.hpp"
#include "support.hpp"

using namespace sctreg;
using testsupport::cube;

namespace {

BodyMask full_mask(const Geometry& g) { return BodyMask(Volume(g, 1, Semantics::label, 1.0f)); }

BSplineTransform identity_for(const Geometry& g) { return BSplineTransform::for_domain(g, 6.0); }

bool all_zero(const std::vector<double>& g)
{
    return std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; });
}

} // namespace

TEST(SamplePlan, DeterministicAndInsideMask)
{
    const Geometry g = cube(10);
    Volume m(g, 1, Semantics::label);
    for (int k = 2; k < 6; ++k)
        for (int j = 0; j < 10; ++j)
            for (int i = 0; i < 5; ++i) m.at(i, j, k) = 1;
    const BodyMask mask(m);
    const SamplePlan a = make_sample_plan(mask, 500, 9), b = make_sample_plan(mask, 500, 9);
    EXPECT_EQ(a.points, b.points);
    EXPECT_NE(a.points, make_sample_plan(mask, 500, 10).points);
    for (const Vec3& p : a.points) {
        const Vec3 idx = g.world_to_index(p);
        EXPECT_TRUE(mask.inside(m.voxel_index(static_cast<int>(std::lround(idx[0])), static_cast<int>(std::lround(idx[1])),
                                               static_cast<int>(std::lround(idx[2])))));
    }
    EXPECT_EQ(make_sample_plan(mask, 1, 0, SampleStrategy::full_grid).count(), mask.count());
    EXPECT_THROW(make_sample_plan(BodyMask(Volume(g, 1, Semantics::label)), 10, 0), ValidationError);
}

TEST(Mse, IdentityAndConstants)
{
    const Geometry g = cube(12, 2.0);
    const Volume v = testsupport::smooth_random_volume(g, 1);
    const SamplePlan plan = make_sample_plan(full_mask(g), 0, 0, SampleStrategy::full_grid);
    const auto r = mse_metric(v, v, identity_for(g), plan);
    EXPECT_EQ(r.cost, 0.0);
    EXPECT_TRUE(all_zero(r.grad));
    EXPECT_EQ(r.grad.size(), identity_for(g).num_parameters());

    const Volume a(g, 1, Semantics::normalized, 0.25f), b(g, 1, Semantics::normalized, -0.5f);
    const auto c = mse_metric(a, b, identity_for(g), plan);
    EXPECT_NEAR(c.cost, 0.5625, 1e-12);
    EXPECT_TRUE(all_zero(c.grad));
    EXPECT_THROW(mse_metric(a, b, identity_for(g), SamplePlan{}), ValidationError);
}

TEST(Mse, GradientMatchesFiniteDifferences)
{
    const auto fx = testsupport::gradient_fixture(32, 5);
    const auto res = testsupport::check_gradient(
        [&](const BSplineTransform& T, bool g) { return mse_metric(fx.fixed, fx.moving, T, fx.plan, g); }, fx.T, 20, 1);
    EXPECT_EQ(res.checked, 20);
    EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(FeatureL1, IdentityConstantOffsetAndChannels)
{
    const Geometry g = cube(12, 2.0);
    const Volume f = testsupport::trig_features(g, 0.0);
    const SamplePlan plan = make_sample_plan(full_mask(g), 0, 0, SampleStrategy::full_grid);
    const auto r = feature_l1_metric(f, f, identity_for(g), plan);
    EXPECT_EQ(r.cost, 0.0);
    EXPECT_TRUE(all_zero(r.grad));

    const Volume a(g, 6, Semantics::feature, 1.0f), b(g, 6, Semantics::feature, 1.75f);
    const auto c = feature_l1_metric(a, b, identity_for(g), plan);
    EXPECT_NEAR(c.cost, 0.75, 1e-12);
    EXPECT_TRUE(all_zero(c.grad));
    EXPECT_THROW(feature_l1_metric(a, Volume(g, 5, Semantics::feature), identity_for(g), plan), ValidationError);
    const auto l2 = feature_metric(a, b, identity_for(g), plan, FeatureDistance::l2);
    EXPECT_NEAR(l2.cost, 0.5625, 1e-12);
}

TEST(FeatureL1, GradientMatchesFiniteDifferencesAwayFromKink)
{
    const Geometry g = cube(32, 2.0);
    const Volume ff = testsupport::trig_features(g, 0.0), mf = testsupport::trig_features(g, 0.4);
    BSplineTransform T = BSplineTransform::for_domain(g, 10.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-1, 1);
    for (double& c : T.coefficients()) c = U(rng);
    const SamplePlan all = testsupport::away_from_cell_faces(make_sample_plan(full_mask(g), 4000, 4), T, g);
    SamplePlan plan;
    for (const Vec3& p : all.points) {
        const auto fv = sample_linear(ff, p), mv = sample_linear(mf, T.transform_point(p));
        bool ok = true;
        for (int c = 0; c < 6; ++c) ok = ok && std::abs(fv[c] - mv[c]) > 1e-3;
        if (ok) plan.points.push_back(p);
    }
    ASSERT_GT(plan.count(), 1000u);
    const auto res = testsupport::check_gradient(
        [&](const BSplineTransform& X, bool gr) { return feature_l1_metric(ff, mf, X, plan, gr); }, T, 20, 2);
    EXPECT_EQ(res.checked, 20);
    EXPECT_LT(res.max_rel_err, 1e-3);
}

TEST(Mattes, IdentityEqualsEntropy)
{
    const Geometry g = cube(16);
    Volume v(g);
    std::mt19937_64 rng(1);
    std::discrete_distribution<int> level({1, 2, 3, 4});
    for (float& x : v.data()) x = 100.0f * static_cast<float>(level(rng));
    const SamplePlan plan = make_sample_plan(full_mask(g), 0, 0, SampleStrategy::full_grid);
    double counts[4] = {0, 0, 0, 0};
    for (float x : v.data()) counts[static_cast<int>(x / 100)] += 1;
    double H = 0;
    for (double c : counts) {
        const double p = c / static_cast<double>(v.voxel_count());
        if (p > 0) H -= p * std::log(p);
    }
    const auto r = mattes_mi_metric(v, v, identity_for(g), plan);
    EXPECT_NEAR(r.cost, -H, 1e-3);
}

TEST(Mattes, IndependentNoiseNearZero)
{
    const Geometry g = cube(47);
    const Volume a = testsupport::random_volume(g, 1), b = testsupport::random_volume(g, 2);
    const SamplePlan plan = make_sample_plan(full_mask(g), 0, 0, SampleStrategy::full_grid);
    ASSERT_GE(plan.count(), 100000u);
    const auto r = mattes_mi_metric(a, b, identity_for(g), plan, {}, false);
    EXPECT_LT(std::abs(r.cost), 0.02);
}

TEST(Mattes, AffineRemapInvariantAndDegenerate)
{
    const auto fx = testsupport::gradient_fixture(32, 8);
    Volume remapped(fx.moving.geometry());
    for (std::size_t i = 0; i < remapped.data().size(); ++i) remapped.data()[i] = 2.0f * fx.moving.data()[i] + 100.0f;
    const double a = mattes_mi_metric(fx.fixed, fx.moving, fx.T, fx.plan, {}, false).cost;
    const double b = mattes_mi_metric(fx.fixed, remapped, fx.T, fx.plan, {}, false).cost;
    EXPECT_NEAR(a, b, 1e-3);
    const Volume flat(fx.fixed.geometry(), 1, Semantics::normalized, 1.0f);
    EXPECT_THROW(mattes_mi_metric(fx.fixed, flat, fx.T, fx.plan), ValidationError);
    EXPECT_THROW(mattes_mi_metric(fx.fixed, fx.moving, fx.T, fx.plan, MattesConfig{4}), ValidationError);
}

TEST(Mattes, GradientMatchesFiniteDifferences)
{
    const auto fx = testsupport::gradient_fixture(32, 6);
    const MattesMutualInformation mi(fx.fixed, fx.moving);
    const auto res = testsupport::check_gradient(
        [&](const BSplineTransform& T, bool g) { return mi.evaluate(T, fx.plan, g); }, fx.T, 20, 3);
    EXPECT_EQ(res.checked, 20);
    EXPECT_LT(res.max_rel_err, 1e-2);
}

TEST(Mind, ConstantImageAndRange)
{
    const Geometry g = cube(8);
    const Volume c(g, 1, Semantics::normalized, 3.0f);
    const Volume d = mind_descriptor(c);
    EXPECT_EQ(d.channels(), 6);
    for (float x : d.data()) EXPECT_EQ(x, 1.0f);

    const Volume v = testsupport::random_volume(cube(10), 4);
    const Volume dv = mind_descriptor(v);
    for (std::size_t x = 0; x < v.voxel_count(); ++x) {
        float mx = 0;
        for (int r = 0; r < 6; ++r) {
            const float e = dv.data()[x * 6 + r];
            EXPECT_GT(e, 0.0f);
            EXPECT_LE(e, 1.0f);
            mx = std::max(mx, e);
        }
        EXPECT_EQ(mx, 1.0f);
    }
}

TEST(Mind, MatchesDirectDescriptorOracle)
{
    const Geometry g = cube(9);
    const Volume v = testsupport::random_volume(g, 12);
    const Volume d = mind_descriptor(v);
    const double w1 = std::exp(-0.5 / 0.25), ws = 1 + 2 * w1;
    const double w[3] = {w1 / ws, 1 / ws, w1 / ws};
    const auto at = [&](int i, int j, int k) {
        return static_cast<double>(v.at(std::clamp(i, 0, 8), std::clamp(j, 0, 8), std::clamp(k, 0, 8)));
    };
    const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    double mean = 0, var = 0;
    for (float x : v.data()) mean += x;
    mean /= v.voxel_count();
    for (float x : v.data()) var += (x - mean) * (x - mean);
    const double floor = std::max(1e-6 * var / v.voxel_count(), 1e-12);
    for (int k = 0; k < 9; k += 2)
        for (int j = 0; j < 9; j += 2)
            for (int i = 0; i < 9; i += 2) {
                double dist[6];
                for (int r = 0; r < 6; ++r) {
                    double s = 0;
                    for (int c = -1; c <= 1; ++c)
                        for (int b = -1; b <= 1; ++b)
                            for (int a = -1; a <= 1; ++a) {
                                // Patch squared differences, edges replicated at the patch sample.
                                const int x = std::clamp(i + a, 0, 8), y = std::clamp(j + b, 0, 8), z = std::clamp(k + c, 0, 8);
                                const double diff = at(x, y, z) - at(x + off[r][0], y + off[r][1], z + off[r][2]);
                                s += w[a + 1] * w[b + 1] * w[c + 1] * diff * diff;
                            }
                    dist[r] = s;
                }
                double m = 0, mn = dist[0];
                for (double x : dist) { m += x; mn = std::min(mn, x); }
                const double V = std::max(m / 6, floor);
                for (int r = 0; r < 6; ++r)
                    EXPECT_NEAR(d.at(i, j, k, r), std::exp(-(dist[r] - mn) / V), 1e-5) << i << " " << j << " " << k;
            }
}

TEST(Mind, IdenticalZeroAndInversionInvariant)
{
    const auto fx = testsupport::gradient_fixture(32, 9);
    const auto same = mind_metric(fx.fixed, fx.fixed, identity_for(fx.fixed.geometry()), fx.plan);
    EXPECT_EQ(same.cost, 0.0);
    Volume inv(fx.fixed.geometry());
    const auto [mn, mx] = std::minmax_element(fx.fixed.data().begin(), fx.fixed.data().end());
    for (std::size_t i = 0; i < inv.data().size(); ++i) inv.data()[i] = *mx - fx.fixed.data()[i];
    const BSplineTransform I = identity_for(fx.fixed.geometry());
    const double mind_cost = mind_metric(fx.fixed, inv, I, fx.plan, {}, false).cost;
    EXPECT_LT(mind_cost, 5e-3);
    // Intensity MSE on [0,1]-normalized intensities is large for the same pair.
    Volume a(fx.fixed.geometry()), b(fx.fixed.geometry());
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        a.data()[i] = (fx.fixed.data()[i] - *mn) / (*mx - *mn);
        b.data()[i] = (inv.data()[i] - *mn) / (*mx - *mn);
    }
    const double mse_cost = mse_metric(a, b, I, fx.plan, false).cost;
    EXPECT_LT(mind_cost, 0.05 * mse_cost);
    // Inverting the moving image leaves the cost against a deformed pair unchanged.
    Volume minv(fx.moving.geometry());
    const auto [mmn, mmx] = std::minmax_element(fx.moving.data().begin(), fx.moving.data().end());
    for (std::size_t i = 0; i < minv.data().size(); ++i) minv.data()[i] = *mmx - fx.moving.data()[i];
    const double c1 = mind_metric(fx.fixed, fx.moving, fx.T, fx.plan, {}, false).cost;
    const double c2 = mind_metric(fx.fixed, minv, fx.T, fx.plan, {}, false).cost;
    EXPECT_NEAR(c1, c2, 5e-3);
}

TEST(Mind, GradientMatchesFiniteDifferences)
{
    const auto fx = testsupport::gradient_fixture(32, 10);
    const Volume df = mind_descriptor(fx.fixed), dm = mind_descriptor(fx.moving);
    const auto res = testsupport::check_gradient(
        [&](const BSplineTransform& T, bool g) { return descriptor_ssd_metric(df, dm, T, fx.plan, g); }, fx.T, 20, 4);
    EXPECT_EQ(res.checked, 20);
    EXPECT_LT(res.max_rel_err, 1e-3);
}

TEST(Metrics, DeterministicAcrossThreadCounts)
{
    const auto fx = testsupport::gradient_fixture(32, 11);
    set_threads(1);
    const auto a = mattes_mi_metric(fx.fixed, fx.moving, fx.T, fx.plan);
    const auto m1 = mse_metric(fx.fixed, fx.moving, fx.T, fx.plan);
    set_threads(4);
    const auto b = mattes_mi_metric(fx.fixed, fx.moving, fx.T, fx.plan);
    const auto m2 = mse_metric(fx.fixed, fx.moving, fx.T, fx.plan);
    set_threads(0);
    EXPECT_EQ(a.cost, b.cost);
    EXPECT_EQ(a.grad, b.grad);
    EXPECT_EQ(m1.cost, m2.cost);
    EXPECT_EQ(m1.grad, m2.grad);
}
