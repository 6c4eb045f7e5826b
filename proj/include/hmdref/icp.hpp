#pragma once

#include <vector>

#include "hmdref/geometry.hpp"

namespace hmdref {

/// Coarse user-supplied robot base position and heading about world z.
struct SeedPose {
    Point3 position = Point3::Zero();
    double yaw = 0.0;  // radians, normalized to (-pi, pi]
};

/// Normalizes an angle into (-pi, pi].
double normalize_angle(double angle);

/// Rotation = yaw about world z, translation = seed position.
RigidTransform seed_to_transform(const SeedPose& seed);

struct IcpConfig {
    double max_correspondence_distance = 0.5;  // meters
    int max_iterations = 100;
    double translation_epsilon = 1e-6;  // meters
    double rms_epsilon = 1e-4;          // millimeters
};

struct RegistrationResult {
    RigidTransform transform;  // model frame -> scene frame
    double rms_mm = 0.0;
    int iterations_used = 0;
    bool converged = false;
};

/// Closed-form best rigid fit mapping source[i] onto target[i] (SVD / Kabsch).
RigidTransform best_rigid_fit(const std::vector<Point3>& source,
                              const std::vector<Point3>& target);

/// Point-to-point ICP with a distance-gated nearest-neighbor correspondence
/// step. Throws NoCorrespondences when the initial pose yields no gated pairs.
RegistrationResult register_icp(const PointCloud& model, const PointCloud& scene,
                                const RigidTransform& init, const IcpConfig& cfg);
RegistrationResult register_icp(const PointCloud& model, const KdTree& scene_tree,
                                const RigidTransform& init, const IcpConfig& cfg);

/// Four ICP starts with yaw 0/90/180/270 degrees about z at `center`; returns
/// the converged run with the smallest rms, ties broken by lower yaw index.
struct MultiStartResult {
    RegistrationResult best;
    int winning_start = -1;  // 0..3, yaw = 90 deg * index
};
MultiStartResult register_icp_4rot(const PointCloud& model, const PointCloud& scene,
                                   const Point3& center, const IcpConfig& cfg);

}  // namespace hmdref
