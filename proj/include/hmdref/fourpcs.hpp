#pragma once

#include <cstdint>

#include "hmdref/geometry.hpp"
#include "hmdref/icp.hpp"
#include "hmdref/preprocess.hpp"

namespace hmdref {

struct FourPcsConfig {
    double overlap_estimate = 0.5;  // fraction in (0, 1]
    double delta = 0.01;            // meters, congruence / LCP tolerance
    int sample_size = 400;          // working subsample per cloud
    int max_bases = 200;
    std::uint64_t rng_seed = 0;
};

struct CoarseResult {
    RigidTransform transform;  // model frame -> cluster frame
    double lcp_score = 0.0;    // fraction of model sample within delta of the cluster
    int bases_tried = 0;
};

/// Global coarse alignment by congruent 4-point bases: wide coplanar bases are
/// drawn from the model and matched in the cluster through the two
/// diagonal-intersection ratios, candidates scored by largest-common-pointset.
CoarseResult register_4pcs(const PointCloud& model, const PointCloud& cluster,
                           const FourPcsConfig& cfg);

/// Plane removal, clustering, then 4PCS + ICP on each size-compatible cluster.
/// Raises SegmentationFailed when no cluster matches the model footprint or
/// the only match is an oversized merged blob.
RegistrationResult segment_then_register(const PointCloud& scene, const PointCloud& model,
                                         const PlaneRemovalConfig& plane_cfg,
                                         const ClusterConfig& cluster_cfg,
                                         const FourPcsConfig& cfg, const IcpConfig& icp_cfg);

}  // namespace hmdref
