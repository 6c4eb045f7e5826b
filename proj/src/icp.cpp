#include "hmdref/icp.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <limits>

namespace hmdref {

double normalize_angle(double angle) {
    angle = std::fmod(angle, 2.0 * M_PI);
    if (angle <= -M_PI) angle += 2.0 * M_PI;
    if (angle > M_PI) angle -= 2.0 * M_PI;
    return angle;
}

RigidTransform seed_to_transform(const SeedPose& seed) {
    return RigidTransform::from_yaw(seed.yaw, seed.position);
}

RigidTransform best_rigid_fit(const std::vector<Point3>& source,
                              const std::vector<Point3>& target) {
    if (source.size() != target.size() || source.empty())
        throw Error(ErrorCode::InvalidArgument, "best_rigid_fit needs matched non-empty sets");
    const double n = static_cast<double>(source.size());
    Point3 src_mean = Point3::Zero();
    Point3 tgt_mean = Point3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        src_mean += source[i];
        tgt_mean += target[i];
    }
    src_mean /= n;
    tgt_mean /= n;

    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < source.size(); ++i)
        cross += (source[i] - src_mean) * (target[i] - tgt_mean).transpose();

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d rotation = svd.matrixV() * svd.matrixU().transpose();
    if (rotation.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        rotation = svd.matrixV() * flip * svd.matrixU().transpose();
    }
    RigidTransform t;
    t.rotation = rotation;
    t.translation = tgt_mean - rotation * src_mean;
    return t;
}

namespace {

struct Correspondences {
    std::vector<Point3> model;
    std::vector<Point3> scene;

    double rms_mm(const RigidTransform& t) const {
        double sum = 0.0;
        for (std::size_t i = 0; i < model.size(); ++i)
            sum += (t.apply(model[i]) - scene[i]).squaredNorm();
        return std::sqrt(sum / static_cast<double>(model.size())) * 1000.0;
    }
};

Correspondences gated_correspondences(const PointCloud& model, const KdTree& scene_tree,
                                      const RigidTransform& pose, double gate) {
    Correspondences corr;
    for (const auto& p : model.points) {
        const auto nn = scene_tree.nearest(pose.apply(p));
        if (nn.distance <= gate) {
            corr.model.push_back(p);
            corr.scene.push_back(scene_tree.point(nn.index));
        }
    }
    return corr;
}

}  // namespace

RegistrationResult register_icp(const PointCloud& model, const KdTree& scene_tree,
                                const RigidTransform& init, const IcpConfig& cfg) {
    if (model.empty()) throw Error(ErrorCode::EmptyCloud, "icp model cloud is empty");
    if (cfg.max_correspondence_distance <= 0.0 || cfg.max_iterations <= 0 ||
        cfg.translation_epsilon <= 0.0 || cfg.rms_epsilon <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "icp config fields must be positive");

    RegistrationResult result;
    RigidTransform pose = init;
    double prev_rms = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;

    for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
        iterations = iter;
        const Correspondences corr =
            gated_correspondences(model, scene_tree, pose, cfg.max_correspondence_distance);
        if (corr.model.empty() && iter == 1)
            throw Error(ErrorCode::NoCorrespondences,
                        "no scene point within " + std::to_string(cfg.max_correspondence_distance) +
                            " m of the initial pose");
        if (corr.model.size() < 3) break;  // stalls below the minimum; not converged

        const RigidTransform next = best_rigid_fit(corr.model, corr.scene);
        const double translation_delta = (next.translation - pose.translation).norm();
        const double rms = corr.rms_mm(next);
        pose = next;
        if (translation_delta < cfg.translation_epsilon &&
            std::abs(prev_rms - rms) < cfg.rms_epsilon) {
            converged = true;
            break;
        }
        prev_rms = rms;
    }

    result.transform = pose;
    result.iterations_used = iterations;
    result.converged = converged;
    const Correspondences final_corr =
        gated_correspondences(model, scene_tree, pose, cfg.max_correspondence_distance);
    if (final_corr.model.empty()) {
        result.rms_mm = std::numeric_limits<double>::infinity();
        result.converged = false;
    } else {
        result.rms_mm = final_corr.rms_mm(pose);
    }
    return result;
}

RegistrationResult register_icp(const PointCloud& model, const PointCloud& scene,
                                const RigidTransform& init, const IcpConfig& cfg) {
    if (scene.empty()) throw Error(ErrorCode::EmptyCloud, "icp scene cloud is empty");
    return register_icp(model, KdTree(scene), init, cfg);
}

MultiStartResult register_icp_4rot(const PointCloud& model, const PointCloud& scene,
                                   const Point3& center, const IcpConfig& cfg) {
    if (scene.empty()) throw Error(ErrorCode::EmptyCloud, "icp scene cloud is empty");
    const KdTree scene_tree(scene);
    MultiStartResult out;
    for (int start = 0; start < 4; ++start) {
        const double yaw = normalize_angle(start * M_PI / 2.0);
        RegistrationResult run;
        try {
            run = register_icp(model, scene_tree, RigidTransform::from_yaw(yaw, center), cfg);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NoCorrespondences) continue;
            throw;
        }
        if (!run.converged) continue;
        if (out.winning_start < 0 || run.rms_mm < out.best.rms_mm) {
            out.best = run;
            out.winning_start = start;
        }
    }
    if (out.winning_start < 0)
        throw Error(ErrorCode::AllStartsFailed,
                    "none of the four 90-degree starts converged at the given center");
    return out;
}

}  // namespace hmdref
