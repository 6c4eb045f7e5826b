#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "hmdref/geometry.hpp"

namespace hmdref {

struct CropConfig {
    Point3 center = Point3::Zero();
    double radius = 2.0;
};

enum class MlsUpsampling { None, VoxelGridDilation };

struct MlsConfig {
    double search_radius = 0.05;
    int polynomial_order = 2;
    MlsUpsampling upsampling = MlsUpsampling::None;
    double upsample_param = 0.05;  // voxel size when VoxelGridDilation
};

struct PlaneRemovalConfig {
    double distance_threshold = 0.02;
    int max_iterations = 200;
    double min_inlier_fraction = 0.25;
    std::uint64_t rng_seed = 0;
};

struct ClusterConfig {
    double tolerance = 0.1;
    std::size_t min_cluster_size = 1;
    std::size_t max_cluster_size = SIZE_MAX;
};

/// Points with ||p - center|| <= radius, input order preserved.
PointCloud sphere_crop(const PointCloud& cloud, const CropConfig& cfg);

/// One centroid per occupied voxel, ordered by first occurrence in the input.
/// Normals, when present, are averaged and renormalized.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

/// k-NN covariance normals, unit length, oriented toward `viewpoint`.
PointCloud estimate_normals(const PointCloud& cloud, int k,
                            const Point3& viewpoint = Point3::Zero());

/// Moving-least-squares projection onto local polynomial fits. Points with
/// fewer than 3 radius neighbors are dropped; more than 10% such points is a
/// RadiusTooSmall error.
PointCloud mls_smooth(const PointCloud& cloud, const MlsConfig& cfg);

struct PlaneRemovalResult {
    PointCloud remaining;
    std::vector<Eigen::Vector4d> planes;        // unit normal (a,b,c) and offset d
    std::vector<std::size_t> removed_indices;   // into the input cloud, ascending
};

/// Iterative RANSAC plane removal; stops when the best plane holds less than
/// min_inlier_fraction of the points still standing.
PlaneRemovalResult remove_planes(const PointCloud& cloud, const PlaneRemovalConfig& cfg);

/// Connected components under the within-tolerance adjacency, size-filtered,
/// ordered by size descending then lowest contained input index.
std::vector<PointCloud> euclidean_cluster(const PointCloud& cloud, const ClusterConfig& cfg);

}  // namespace hmdref
