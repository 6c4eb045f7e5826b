#include "hmdref/detect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hmdref/preprocess.hpp"

namespace hmdref {

namespace {

constexpr int kAngleBins = 11;          // per angular feature, 3 features = 33
constexpr int kGlobalBins = 32;         // per half of the global signature
constexpr double kDescriptorRadiusFactor = 2.5;  // of keypoint_voxel

int bin_of(double value, double lo, double hi, int bins) {
    const double t = (value - lo) / (hi - lo);
    return std::clamp(static_cast<int>(t * bins), 0, bins - 1);
}

// Darboux-frame angles between a keypoint and one neighbor, binned into the
// three 11-bin sub-histograms.
void accumulate_pair(Eigen::VectorXd& hist, const Point3& p, const Eigen::Vector3d& np,
                     const Point3& q, const Eigen::Vector3d& nq) {
    const Eigen::Vector3d diff = q - p;
    const double dist = diff.norm();
    if (dist < 1e-12) return;
    const Eigen::Vector3d d = diff / dist;
    const Eigen::Vector3d u = np;
    Eigen::Vector3d v = d.cross(u);
    const double vlen = v.norm();
    if (vlen < 1e-12) return;  // normal parallel to the connecting line
    v /= vlen;
    const Eigen::Vector3d w = u.cross(v);

    const double alpha = v.dot(nq);                       // [-1, 1]
    const double phi = u.dot(d);                          // [-1, 1]
    const double theta = std::atan2(w.dot(nq), u.dot(nq));  // [-pi, pi]

    hist[bin_of(alpha, -1.0, 1.0, kAngleBins)] += 1.0;
    hist[kAngleBins + bin_of(phi, -1.0, 1.0, kAngleBins)] += 1.0;
    hist[2 * kAngleBins + bin_of(theta, -M_PI, M_PI, kAngleBins)] += 1.0;
}

void l1_normalize(Eigen::VectorXd& hist) {
    const double sum = hist.sum();
    if (sum > 0.0) hist /= sum;
}

DescriptorSet local_histograms(const PointCloud& cloud, const DetectionConfig& cfg) {
    if (cloud.size() < 10)
        throw Error(ErrorCode::TooFewPoints, "local histograms need at least 10 points");
    PointCloud keypoints = voxel_downsample(cloud, cfg.keypoint_voxel);
    if (!keypoints.has_normals()) {
        const int k = std::min<int>(10, static_cast<int>(keypoints.size()) - 1);
        if (k < 3) throw Error(ErrorCode::TooFewPoints, "not enough keypoints for normals");
        keypoints = estimate_normals(keypoints, k);
    }

    const KdTree tree(keypoints);
    const double radius = kDescriptorRadiusFactor * cfg.keypoint_voxel;
    DescriptorSet set;
    set.keypoints = keypoints;
    set.descriptors.reserve(keypoints.size());
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        Eigen::VectorXd hist = Eigen::VectorXd::Zero(3 * kAngleBins);
        for (std::size_t nb : tree.radius_search(keypoints.points[i], radius)) {
            if (nb == i) continue;
            accumulate_pair(hist, keypoints.points[i], keypoints.normals[i],
                            keypoints.points[nb], keypoints.normals[nb]);
        }
        l1_normalize(hist);
        set.descriptors.push_back(std::move(hist));
    }
    return set;
}

DescriptorSet global_signature(const PointCloud& cloud, const Point3& viewpoint) {
    if (cloud.size() < 3)
        throw Error(ErrorCode::TooFewPoints, "global signature needs at least 3 points");
    const Point3 centroid = cloud.centroid();
    Eigen::Vector3d toward = viewpoint - centroid;
    if (toward.norm() < 1e-9) toward = Eigen::Vector3d::UnitZ();
    toward.normalize();

    Eigen::VectorXd hist = Eigen::VectorXd::Zero(2 * kGlobalBins);
    double max_dist = 0.0;
    for (const auto& p : cloud.points) max_dist = std::max(max_dist, (p - centroid).norm());
    if (max_dist < 1e-12) max_dist = 1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double cosang = std::clamp(cloud.normals[i].dot(toward), -1.0, 1.0);
        hist[bin_of(cosang, -1.0, 1.0, kGlobalBins)] += 1.0;
        const double r = (cloud.points[i] - centroid).norm() / max_dist;
        hist[kGlobalBins + bin_of(r, 0.0, 1.0, kGlobalBins)] += 1.0;
    }
    l1_normalize(hist);

    DescriptorSet set;
    set.keypoints.points.push_back(centroid);
    set.descriptors.push_back(std::move(hist));
    return set;
}

}  // namespace

DescriptorSet compute_descriptors(const PointCloud& cloud, const DetectionConfig& cfg) {
    PointCloud with_normals = cloud;
    if (!cloud.has_normals()) {
        const int k = std::min<int>(10, static_cast<int>(cloud.size()) - 1);
        if (k >= 3) with_normals = estimate_normals(cloud, k);
    }
    if (cfg.descriptor == DescriptorKind::GlobalSignature)
        return global_signature(with_normals, Point3::Zero());
    return local_histograms(with_normals, cfg);
}

std::vector<BoxCandidate> slide_boxes(const PointCloud& scene, const Aabb& model_box,
                                      const DetectionConfig& cfg) {
    if (scene.empty()) return {};
    if (cfg.step_fraction <= 0.0 || cfg.step_fraction > 1.0)
        throw Error(ErrorCode::InvalidArgument, "step_fraction must be in (0, 1]");
    if (cfg.min_points < 1)
        throw Error(ErrorCode::InvalidArgument, "min_points must be >= 1");

    const Aabb scene_box = Aabb::of(scene);
    const Eigen::Vector3d sides = model_box.sides();
    const Eigen::Vector3d extent = scene_box.sides();

    std::array<std::size_t, 3> counts{};
    std::array<double, 3> steps{};
    for (int axis = 0; axis < 3; ++axis) {
        steps[axis] = std::max(cfg.step_fraction * sides[axis], 1e-9);
        if (extent[axis] <= sides[axis]) {
            counts[axis] = 1;
        } else {
            auto n = static_cast<std::size_t>(
                         std::ceil((extent[axis] - sides[axis]) / steps[axis])) + 1;
            // guard against the ceil landing short in floating point
            while (scene_box.min[axis] + static_cast<double>(n - 1) * steps[axis] + sides[axis] <
                   scene_box.max[axis])
                ++n;
            counts[axis] = n;
        }
    }
    if (cfg.planar) counts[2] = 1;

    const std::size_t total = counts[0] * counts[1] * counts[2];
    std::vector<std::vector<std::size_t>> members(total);

    // Each point lands in the (closed) boxes whose origin index range covers
    // it; filling point-major keeps per-candidate index lists ascending.
    for (std::size_t pi = 0; pi < scene.size(); ++pi) {
        const Point3& p = scene.points[pi];
        std::array<std::size_t, 3> lo{}, hi{};
        bool inside = true;
        for (int axis = 0; axis < 3; ++axis) {
            const double rel = p[axis] - scene_box.min[axis];
            const double k_min = (rel - sides[axis]) / steps[axis];
            const double k_max = rel / steps[axis];
            auto first = static_cast<std::int64_t>(std::ceil(k_min));
            auto last = static_cast<std::int64_t>(std::floor(k_max));
            first = std::max<std::int64_t>(first, 0);
            last = std::min<std::int64_t>(last, static_cast<std::int64_t>(counts[axis]) - 1);
            // Nudge for boundary rounding: the closed-box test below is
            // authoritative, so widen by one on both ends.
            first = std::max<std::int64_t>(first - 1, 0);
            last = std::min<std::int64_t>(last + 1, static_cast<std::int64_t>(counts[axis]) - 1);
            if (first > last) {
                inside = false;
                break;
            }
            lo[axis] = static_cast<std::size_t>(first);
            hi[axis] = static_cast<std::size_t>(last);
        }
        if (!inside) continue;
        for (std::size_t iz = lo[2]; iz <= hi[2]; ++iz)
            for (std::size_t iy = lo[1]; iy <= hi[1]; ++iy)
                for (std::size_t ix = lo[0]; ix <= hi[0]; ++ix) {
                    const Point3 origin(scene_box.min.x() + static_cast<double>(ix) * steps[0],
                                        scene_box.min.y() + static_cast<double>(iy) * steps[1],
                                        scene_box.min.z() + static_cast<double>(iz) * steps[2]);
                    const Aabb box{origin, origin + sides};
                    if (box.contains(p))
                        members[(iz * counts[1] + iy) * counts[0] + ix].push_back(pi);
                }
    }

    std::vector<BoxCandidate> out;
    for (std::size_t iz = 0; iz < counts[2]; ++iz)
        for (std::size_t iy = 0; iy < counts[1]; ++iy)
            for (std::size_t ix = 0; ix < counts[0]; ++ix) {
                const std::size_t idx = (iz * counts[1] + iy) * counts[0] + ix;
                if (members[idx].size() < cfg.min_points) continue;
                BoxCandidate cand;
                const Point3 origin(scene_box.min.x() + static_cast<double>(ix) * steps[0],
                                    scene_box.min.y() + static_cast<double>(iy) * steps[1],
                                    scene_box.min.z() + static_cast<double>(iz) * steps[2]);
                cand.box = {origin, origin + sides};
                cand.point_indices = std::move(members[idx]);
                cand.grid_index = idx;
                out.push_back(std::move(cand));
            }
    return out;
}

std::vector<BoxCandidate> score_candidates(std::vector<BoxCandidate> candidates,
                                           const PointCloud& scene,
                                           const DescriptorSet& model_desc,
                                           const DetectionConfig& cfg) {
    if (model_desc.size() == 0)
        throw Error(ErrorCode::InvalidArgument, "model descriptor set is empty");

    for (auto& cand : candidates) {
        PointCloud sub;
        sub.points.reserve(cand.point_indices.size());
        for (std::size_t idx : cand.point_indices) {
            sub.points.push_back(scene.points[idx]);
            if (scene.has_normals()) sub.normals.push_back(scene.normals[idx]);
        }
        DescriptorSet cand_desc;
        try {
            cand_desc = compute_descriptors(sub, cfg);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::TooFewPoints) {
                cand.match_score = 0.0;
                continue;
            }
            throw;
        }

        if (cfg.descriptor == DescriptorKind::GlobalSignature) {
            // One signature per side: similarity from the L1 distance of the
            // normalized histograms.
            const double l1 = (model_desc.descriptors[0] - cand_desc.descriptors[0])
                                  .cwiseAbs()
                                  .sum();
            cand.match_score = std::max(0.0, 1.0 - 0.5 * l1);
            continue;
        }

        // Mutual nearest-neighbor matching with Lowe's ratio test.
        auto nearest_two = [](const Eigen::VectorXd& d, const std::vector<Eigen::VectorXd>& set,
                              std::size_t& arg) {
            double d1 = std::numeric_limits<double>::infinity();
            double d2 = std::numeric_limits<double>::infinity();
            arg = 0;
            for (std::size_t i = 0; i < set.size(); ++i) {
                const double dist = (set[i] - d).norm();
                if (dist < d1) {
                    d2 = d1;
                    d1 = dist;
                    arg = i;
                } else if (dist < d2) {
                    d2 = dist;
                }
            }
            return std::pair{d1, d2};
        };

        std::size_t matches = 0;
        for (std::size_t mi = 0; mi < model_desc.size(); ++mi) {
            std::size_t ci = 0;
            const auto [d1, d2] = nearest_two(model_desc.descriptors[mi], cand_desc.descriptors, ci);
            if (!(d1 <= cfg.match_ratio_max * d2)) continue;
            std::size_t back = 0;
            nearest_two(cand_desc.descriptors[ci], model_desc.descriptors, back);
            if (back == mi) ++matches;
        }
        cand.match_score =
            static_cast<double>(matches) / static_cast<double>(model_desc.size());
    }

    std::sort(candidates.begin(), candidates.end(), [](const BoxCandidate& a, const BoxCandidate& b) {
        if (a.match_score != b.match_score) return a.match_score > b.match_score;
        return a.grid_index < b.grid_index;
    });
    return candidates;
}

DetectionResult detect_robot(const PointCloud& scene, const PointCloud& model,
                             const DetectionConfig& cfg, const IcpConfig& icp_cfg) {
    if (scene.empty()) throw Error(ErrorCode::NoCandidateBox, "scene cloud is empty");
    if (model.empty()) throw Error(ErrorCode::EmptyCloud, "model cloud is empty");

    PointCloud scene_n = scene;
    if (!scene.has_normals() && scene.size() > 10) scene_n = estimate_normals(scene, 10);
    PointCloud model_n = model;
    if (!model.has_normals() && model.size() > 10) model_n = estimate_normals(model, 10);

    const DescriptorSet model_desc = compute_descriptors(model_n, cfg);
    std::vector<BoxCandidate> candidates = slide_boxes(scene_n, Aabb::of(model_n), cfg);
    if (candidates.empty())
        throw Error(ErrorCode::NoCandidateBox, "every sliding box fell below min_points");
    candidates = score_candidates(std::move(candidates), scene_n, model_desc, cfg);

    DetectionResult result;
    result.winning_box = candidates.front();
    result.candidates_scored = candidates.size();

    // The box center marks the model's bounding-box center in the scene, not
    // its base origin; register a bbox-centered copy and shift back after.
    const Point3 model_center = Aabb::of(model).center();
    RigidTransform recenter;
    recenter.translation = -model_center;
    const PointCloud centered = apply_transform(recenter, model);
    const MultiStartResult multi =
        register_icp_4rot(centered, scene, result.winning_box.box.center(), icp_cfg);
    result.registration = multi.best;
    result.registration.transform = multi.best.transform.compose(recenter);
    result.winning_start = multi.winning_start;
    return result;
}

}  // namespace hmdref
