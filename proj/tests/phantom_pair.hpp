#pragma once

// Registration pair built from a synthetic phantom and a known deformation.

#include <cstdint>
#include <vector>

#include "sctreg/phantom.hpp"
#include "sctreg/preprocess.hpp"
#include "sctreg/registration.hpp"

namespace testsupport {

using namespace sctreg;

struct PhantomPair {
    Phantom phantom;
    BSplineTransform truth;
    Volume fixed_hu, moving_hu;
    Volume fixed, moving; // preprocessed
    BodyMask fixed_mask;
    Volume fixed_features, moving_features;
};

/// fixed = phantom warped by a random deformation; moving = phantom or its
/// contrast-inverted twin. The moving image is normalized without a mask so
/// it has no artificial fill edge at the body boundary.
inline PhantomPair make_phantom_pair(int n, std::uint64_t phantom_seed, std::uint64_t deformation_seed, bool twin,
                                     double amplitude = 6.0, double truth_spacing = 20.0)
{
    PhantomPair p;
    p.phantom = make_phantom({n, n, n}, 2.0, phantom_seed);
    const Geometry& g = p.phantom.image.geometry();
    p.truth = random_deformation(g, {amplitude, deformation_seed, truth_spacing});
    p.fixed_hu = warp_volume(p.phantom.image, p.truth, g, kAirHU);
    p.fixed_mask = BodyMask(warp_volume(p.phantom.mask.volume(), p.truth, g, 0.0));
    p.moving_hu = twin ? *p.phantom.modality_twin : p.phantom.image;
    p.fixed = preprocess_ct(p.fixed_hu, p.fixed_mask);
    p.moving = preprocess_ct(p.moving_hu, BodyMask(Volume(g, 1, Semantics::label, 1.0f)));
    p.fixed_features = synthetic_features(p.fixed_hu);
    p.moving_features = synthetic_features(p.phantom.image);
    return p;
}

inline RegistrationResult register_pair(const PhantomPair& p, RegistrationConfig cfg)
{
    FeatureVolumes fv;
    if (cfg.metric.kind == MetricKind::feature) fv = {&p.fixed_features, &p.moving_features};
    return register_volumes(p.fixed, p.moving, p.fixed_mask, cfg, fv);
}

inline double initial_tre(const PhantomPair& p)
{
    return landmark_tre(p.truth, BSplineTransform::for_domain(p.phantom.image.geometry(), 10.0), p.phantom.landmarks).mean;
}

inline double pair_tre(const PhantomPair& p, const BSplineTransform& T)
{
    return landmark_tre(p.truth, T, p.phantom.landmarks).mean;
}

} // namespace testsupport
