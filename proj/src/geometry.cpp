#include "hmdref/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hmdref {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::EmptyCloud: return "EmptyCloud";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::DegenerateMesh: return "DegenerateMesh";
        case ErrorCode::TooFewPoints: return "TooFewPoints";
        case ErrorCode::RadiusTooSmall: return "RadiusTooSmall";
        case ErrorCode::NoCorrespondences: return "NoCorrespondences";
        case ErrorCode::AllStartsFailed: return "AllStartsFailed";
        case ErrorCode::NoCongruentBase: return "NoCongruentBase";
        case ErrorCode::SegmentationFailed: return "SegmentationFailed";
        case ErrorCode::NoCandidateBox: return "NoCandidateBox";
        case ErrorCode::BadFrame: return "BadFrame";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

ErrorCode error_code_from_string(std::string_view name) {
    for (int c = 0; c <= static_cast<int>(ErrorCode::InvalidArgument); ++c) {
        if (to_string(static_cast<ErrorCode>(c)) == name) return static_cast<ErrorCode>(c);
    }
    return ErrorCode::InvalidArgument;
}

Point3 PointCloud::centroid() const {
    if (points.empty()) throw Error(ErrorCode::EmptyCloud, "centroid of empty cloud");
    Point3 sum = Point3::Zero();
    for (const auto& p : points) sum += p;
    return sum / static_cast<double>(points.size());
}

RigidTransform RigidTransform::from_yaw(double yaw, const Point3& position) {
    RigidTransform t;
    const double c = std::cos(yaw);
    const double s = std::sin(yaw);
    t.rotation << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
    t.translation = position;
    return t;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
}

double RigidTransform::yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

bool RigidTransform::is_rigid(double tol) const {
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
}

PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud) {
    PointCloud out;
    out.points.reserve(cloud.points.size());
    for (const auto& p : cloud.points) out.points.push_back(t.apply(p));
    if (cloud.has_normals()) {
        out.normals.reserve(cloud.normals.size());
        for (const auto& n : cloud.normals) out.normals.push_back(t.rotation * n);
    }
    return out;
}

double rotation_angle_between(const RigidTransform& a, const RigidTransform& b) {
    const Eigen::Matrix3d rel = a.rotation.transpose() * b.rotation;
    const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(c);
}

Aabb Aabb::of(const PointCloud& cloud) {
    if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "bounding box of empty cloud");
    Aabb box;
    box.min = box.max = cloud.points.front();
    for (const auto& p : cloud.points) {
        box.min = box.min.cwiseMin(p);
        box.max = box.max.cwiseMax(p);
    }
    return box;
}

namespace {
constexpr std::uint32_t kLeafSize = 8;
}

KdTree::KdTree(const PointCloud& cloud) : points_(cloud.points) {
    if (points_.empty()) throw Error(ErrorCode::EmptyCloud, "kd-tree over empty cloud");
    order_.resize(points_.size());
    for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    root_ = build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
        node.begin = begin;
        node.end = end;
        nodes_.push_back(node);
        return static_cast<std::int32_t>(nodes_.size() - 1);
    }
    Point3 lo = points_[order_[begin]];
    Point3 hi = lo;
    for (std::uint32_t i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);

    const std::uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                         const double pa = points_[a][axis];
                         const double pb = points_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    node.axis = axis;
    node.split = points_[order_[mid]][axis];
    nodes_.push_back(node);
    const auto self = static_cast<std::int32_t>(nodes_.size() - 1);
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
}

KdTree::Nearest KdTree::nearest(const Point3& query) const {
    std::size_t best_index = 0;
    double best_d2 = std::numeric_limits<double>::infinity();

    // Near child first; far child is pushed with its splitting-plane distance
    // and re-checked at pop. Pruning is non-strict (<=) because the far side
    // may hold an equidistant point with a lower index.
    std::vector<std::pair<std::int32_t, double>> stack;
    stack.emplace_back(root_, 0.0);
    while (!stack.empty()) {
        const auto [id, plane_d2] = stack.back();
        stack.pop_back();
        if (plane_d2 > best_d2) continue;
        const Node& node = nodes_[id];
        if (node.axis < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                const double d2 = (points_[idx] - query).squaredNorm();
                if (d2 < best_d2 || (d2 == best_d2 && idx < best_index)) {
                    best_d2 = d2;
                    best_index = idx;
                }
            }
            continue;
        }
        const double diff = query[node.axis] - node.split;
        const std::int32_t near = diff < 0.0 ? node.left : node.right;
        const std::int32_t far = diff < 0.0 ? node.right : node.left;
        stack.emplace_back(far, diff * diff);
        stack.emplace_back(near, 0.0);
    }
    return {best_index, std::sqrt(best_d2)};
}

std::vector<KdTree::Nearest> KdTree::knn(const Point3& query, std::size_t k) const {
    k = std::min(k, points_.size());
    // (d2, index) max-heap of current best k.
    std::vector<std::pair<double, std::size_t>> heap;
    heap.reserve(k + 1);
    auto cmp = [](const auto& a, const auto& b) { return a < b; };

    auto worst = [&]() {
        return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.front().first;
    };

    std::vector<std::pair<std::int32_t, double>> stack;
    stack.emplace_back(root_, 0.0);
    while (!stack.empty()) {
        const auto [id, plane_d2] = stack.back();
        stack.pop_back();
        if (plane_d2 > worst()) continue;
        const Node& node = nodes_[id];
        if (node.axis < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                const double d2 = (points_[idx] - query).squaredNorm();
                const std::pair<double, std::size_t> cand{d2, idx};
                if (heap.size() < k) {
                    heap.push_back(cand);
                    std::push_heap(heap.begin(), heap.end(), cmp);
                } else if (cand < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end(), cmp);
                    heap.back() = cand;
                    std::push_heap(heap.begin(), heap.end(), cmp);
                }
            }
            continue;
        }
        const double diff = query[node.axis] - node.split;
        const std::int32_t near = diff < 0.0 ? node.left : node.right;
        const std::int32_t far = diff < 0.0 ? node.right : node.left;
        stack.emplace_back(far, diff * diff);
        stack.emplace_back(near, 0.0);
    }
    std::sort(heap.begin(), heap.end());
    std::vector<Nearest> out;
    out.reserve(heap.size());
    for (const auto& [d2, idx] : heap) out.push_back({idx, std::sqrt(d2)});
    return out;
}

std::vector<std::size_t> KdTree::radius_search(const Point3& query, double radius) const {
    const double r2 = radius * radius;
    std::vector<std::size_t> out;
    std::vector<std::int32_t> stack;
    stack.push_back(root_);
    while (!stack.empty()) {
        const std::int32_t id = stack.back();
        stack.pop_back();
        const Node& node = nodes_[id];
        if (node.axis < 0) {
            for (std::uint32_t i = node.begin; i < node.end; ++i) {
                const std::uint32_t idx = order_[i];
                if ((points_[idx] - query).squaredNorm() <= r2) out.push_back(idx);
            }
            continue;
        }
        const double diff = query[node.axis] - node.split;
        const std::int32_t near = diff < 0.0 ? node.left : node.right;
        const std::int32_t far = diff < 0.0 ? node.right : node.left;
        if (diff * diff <= r2) stack.push_back(far);
        stack.push_back(near);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double rms_closest_point_mm(const PointCloud& model, const KdTree& scene_tree) {
    if (model.empty()) throw Error(ErrorCode::EmptyCloud, "rms metric over empty model");
    double sum = 0.0;
    for (const auto& p : model.points) {
        const auto nn = scene_tree.nearest(p);
        sum += nn.distance * nn.distance;
    }
    return std::sqrt(sum / static_cast<double>(model.size())) * 1000.0;
}

double rms_closest_point_mm(const PointCloud& model, const KdTree& scene_tree,
                            const RigidTransform& model_pose) {
    return rms_closest_point_mm(apply_transform(model_pose, model), scene_tree);
}

}  // namespace hmdref
