#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstddef>
#include <vector>

#include "hmdref/error.hpp"

namespace hmdref {

using Point3 = Eigen::Vector3d;

/// Point cloud with optional per-point unit normals. Coordinates are meters.
struct PointCloud {
    std::vector<Point3> points;
    std::vector<Eigen::Vector3d> normals;  // empty, or same length as points

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_normals() const { return !normals.empty() && normals.size() == points.size(); }

    Point3 centroid() const;
};

/// Proper rigid motion: x -> rotation * x + translation.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }
    static RigidTransform from_yaw(double yaw, const Point3& position = Point3::Zero());

    Point3 apply(const Point3& p) const { return rotation * p + translation; }

    /// this ∘ other: (this * other)(x) = this(other(x))
    RigidTransform compose(const RigidTransform& other) const;
    RigidTransform inverse() const;

    /// Heading about world z, in (-pi, pi].
    double yaw() const;

    /// True when rotation is orthonormal with det +1 within tol.
    bool is_rigid(double tol = 1e-9) const;
};

PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud);

/// Rotation angle between two transforms, radians.
double rotation_angle_between(const RigidTransform& a, const RigidTransform& b);

/// Axis-aligned bounding box, min <= max componentwise.
struct Aabb {
    Point3 min = Point3::Zero();
    Point3 max = Point3::Zero();

    static Aabb of(const PointCloud& cloud);

    bool contains(const Point3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Point3 center() const { return 0.5 * (min + max); }
    Eigen::Vector3d sides() const { return max - min; }
    double diagonal() const { return (max - min).norm(); }
    double volume() const { return (max - min).prod(); }
};

/// Immutable nearest-neighbor index over a point cloud.
/// Queries are exact and tie-break toward the lowest point index, matching a
/// linear scan that only replaces the incumbent on strictly smaller distance.
class KdTree {
public:
    explicit KdTree(const PointCloud& cloud);

    struct Nearest {
        std::size_t index;
        double distance;
    };

    Nearest nearest(const Point3& query) const;

    /// k nearest neighbors ordered by (distance, index). k is clamped to size().
    std::vector<Nearest> knn(const Point3& query, std::size_t k) const;

    /// All indices with ||p - query|| <= radius, ascending index order.
    std::vector<std::size_t> radius_search(const Point3& query, double radius) const;

    std::size_t size() const { return points_.size(); }
    const Point3& point(std::size_t i) const { return points_[i]; }

private:
    struct Node {
        int axis = -1;          // -1 marks a leaf
        double split = 0.0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::uint32_t begin = 0;  // leaf range into order_
        std::uint32_t end = 0;
    };

    std::int32_t build(std::uint32_t begin, std::uint32_t end);

    std::vector<Point3> points_;
    std::vector<std::uint32_t> order_;
    std::vector<Node> nodes_;
    std::int32_t root_ = -1;
};

/// Root mean square nearest-neighbor distance from each model point to the
/// scene, reported in millimeters.
double rms_closest_point_mm(const PointCloud& model, const KdTree& scene_tree);
double rms_closest_point_mm(const PointCloud& model, const KdTree& scene_tree,
                            const RigidTransform& model_pose);

}  // namespace hmdref
