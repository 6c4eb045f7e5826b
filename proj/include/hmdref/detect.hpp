#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "hmdref/geometry.hpp"
#include "hmdref/icp.hpp"

namespace hmdref {

enum class DescriptorKind { LocalHistogram, GlobalSignature };

struct DetectionConfig {
    double step_fraction = 0.2;   // of the matching model box side, per axis
    std::size_t min_points = 3;   // boxes below this are filtered out
    DescriptorKind descriptor = DescriptorKind::LocalHistogram;
    double keypoint_voxel = 0.06;  // meters
    double match_ratio_max = 0.8;  // nearest / second-nearest gate
    bool planar = false;           // slide over x/y only, box resting at scene z-min
};

struct DescriptorSet {
    PointCloud keypoints;
    std::vector<Eigen::VectorXd> descriptors;  // one per keypoint, uniform length

    std::size_t size() const { return descriptors.size(); }
};

struct BoxCandidate {
    Aabb box;
    std::vector<std::size_t> point_indices;  // into the scene cloud, ascending
    double match_score = 0.0;
    std::size_t grid_index = 0;
};

/// Descriptors for a cloud that already carries normals. LocalHistogram is a
/// 33-bin angular histogram per voxel keypoint; GlobalSignature is a single
/// 64-bin viewpoint-angle + radial shape histogram for the whole cloud.
DescriptorSet compute_descriptors(const PointCloud& cloud, const DetectionConfig& cfg);

/// Model-sized boxes on a regular grid covering the scene bounds, stepped by
/// step_fraction of each model side; boxes holding fewer than min_points
/// points are dropped.
std::vector<BoxCandidate> slide_boxes(const PointCloud& scene, const Aabb& model_box,
                                      const DetectionConfig& cfg);

/// Scores each candidate by mutual-nearest descriptor matches against the
/// model set (ratio-tested), normalized by the model keypoint count; sorted
/// descending, ties by lower grid index.
std::vector<BoxCandidate> score_candidates(std::vector<BoxCandidate> candidates,
                                           const PointCloud& scene,
                                           const DescriptorSet& model_desc,
                                           const DetectionConfig& cfg);

struct DetectionResult {
    RegistrationResult registration;
    int winning_start = -1;
    BoxCandidate winning_box;
    std::size_t candidates_scored = 0;
};

/// Full one-shot detection: slide, score, then 4-rotation ICP at the center
/// of the best box.
DetectionResult detect_robot(const PointCloud& scene, const PointCloud& model,
                             const DetectionConfig& cfg, const IcpConfig& icp_cfg);

}  // namespace hmdref
