#include "hmdref/fourpcs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hmdref/rng.hpp"

namespace hmdref {

namespace {

// Closest-point parameters of two segments p1p2 and q1q2; the clamped
// parametric coordinates become the affine-invariant ratios of the base, and
// the return value is the gap between the two diagonals at that point.
double segment_gap(const Point3& p1, const Point3& p2, const Point3& q1, const Point3& q2,
                   double& ratio1, double& ratio2) {
    const Eigen::Vector3d u = p2 - p1;
    const Eigen::Vector3d v = q2 - q1;
    const Eigen::Vector3d w = p1 - q1;
    const double a = u.dot(u);
    const double b = u.dot(v);
    const double c = v.dot(v);
    const double d = u.dot(w);
    const double e = v.dot(w);
    const double denom = a * c - b * b;
    double s, t;
    if (denom < 1e-12) {  // near-parallel diagonals
        s = 0.0;
        t = c > 0.0 ? e / c : 0.0;
    } else {
        s = (b * e - c * d) / denom;
        t = (a * e - b * d) / denom;
    }
    s = std::clamp(s, 0.0, 1.0);
    t = std::clamp(t, 0.0, 1.0);
    ratio1 = s;
    ratio2 = t;
    return (w + s * u - t * v).norm();
}

struct Base {
    std::array<std::size_t, 4> ids;  // into the model sample, ordered as two diagonals
    double ratio1 = 0.0;
    double ratio2 = 0.0;
    double d1 = 0.0;  // |b1 - b2|
    double d2 = 0.0;  // |b3 - b4|
};

// Reorders four points into the diagonal pairing whose segments pass closest
// to each other; fails when every pairing leaves a wide gap (non-planar) or a
// degenerate zero-length diagonal.
bool order_as_diagonals(const std::vector<Point3>& pts, std::array<std::size_t, 4>& ids,
                        Base& base, double coplanarity_tol) {
    static constexpr std::array<std::array<int, 4>, 3> kPairings{
        {{0, 1, 2, 3}, {0, 2, 1, 3}, {0, 3, 1, 2}}};
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& perm : kPairings) {
        const Point3& p1 = pts[ids[perm[0]]];
        const Point3& p2 = pts[ids[perm[1]]];
        const Point3& q1 = pts[ids[perm[2]]];
        const Point3& q2 = pts[ids[perm[3]]];
        double r1, r2;
        const double gap = segment_gap(p1, p2, q1, q2, r1, r2);
        // Reject pairings whose "intersection" sits on a segment endpoint;
        // those ratios carry no information.
        const double margin = 1e-3;
        if (r1 < margin || r1 > 1.0 - margin || r2 < margin || r2 > 1.0 - margin) continue;
        if (gap < best_gap) {
            best_gap = gap;
            base.ids = {ids[perm[0]], ids[perm[1]], ids[perm[2]], ids[perm[3]]};
            base.ratio1 = r1;
            base.ratio2 = r2;
        }
    }
    return best_gap <= coplanarity_tol;
}

// Deterministic subsample of up to `target` points.
PointCloud subsample(const PointCloud& cloud, std::size_t target, Rng& rng) {
    if (cloud.size() <= target) return cloud;
    std::vector<std::size_t> idx(cloud.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < target; ++i) {
        const std::size_t j = i + uniform_index(rng, idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(target);
    std::sort(idx.begin(), idx.end());
    PointCloud out;
    out.points.reserve(target);
    for (std::size_t i : idx) out.points.push_back(cloud.points[i]);
    return out;
}

struct PairList {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // ordered (both directions)
};

PairList pairs_with_distance(const std::vector<Point3>& pts, double dist, double delta) {
    PairList out;
    const double lo = dist - delta;
    const double hi = dist + delta;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double d = (pts[i] - pts[j]).norm();
            if (d >= lo && d <= hi) {
                out.pairs.emplace_back(i, j);
                out.pairs.emplace_back(j, i);
            }
        }
    }
    return out;
}

double lcp_score(const RigidTransform& t, const PointCloud& model_eval, const KdTree& cluster_tree,
                 double delta) {
    std::size_t hits = 0;
    for (const auto& p : model_eval.points)
        if (cluster_tree.nearest(t.apply(p)).distance <= delta) ++hits;
    return static_cast<double>(hits) / static_cast<double>(model_eval.size());
}

}  // namespace

CoarseResult register_4pcs(const PointCloud& model, const PointCloud& cluster,
                           const FourPcsConfig& cfg) {
    if (model.size() < 4 || cluster.size() < 4)
        throw Error(ErrorCode::TooFewPoints, "4pcs needs at least 4 points per cloud");
    if (cfg.overlap_estimate <= 0.0 || cfg.overlap_estimate > 1.0 || cfg.delta <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "4pcs config out of range");

    Rng rng(cfg.rng_seed);
    const PointCloud model_sample = subsample(model, static_cast<std::size_t>(cfg.sample_size), rng);
    const PointCloud cluster_sample =
        subsample(cluster, static_cast<std::size_t>(cfg.sample_size), rng);
    const PointCloud model_eval = subsample(model, 2000, rng);
    const PointCloud cluster_eval = subsample(cluster, 2000, rng);
    const KdTree cluster_eval_tree(cluster_eval);

    const double diameter = Aabb::of(model_sample).diagonal();
    const double min_side = 0.2 * diameter;
    const double coplanarity_tol = std::max(cfg.delta, 1e-4 * diameter);

    CoarseResult best;
    best.lcp_score = -1.0;

    const auto& q = cluster_sample.points;
    int bases_tried = 0;
    constexpr int kTriangleTrials = 60;

    for (int base_iter = 0; base_iter < cfg.max_bases; ++base_iter) {
        // Draw a wide triangle, then the most coplanar 4th point.
        Base base;
        bool have_base = false;
        for (int trial = 0; trial < kTriangleTrials && !have_base; ++trial) {
            const std::size_t i1 = uniform_index(rng, model_sample.size());
            const std::size_t i2 = uniform_index(rng, model_sample.size());
            const std::size_t i3 = uniform_index(rng, model_sample.size());
            if (i1 == i2 || i2 == i3 || i1 == i3) continue;
            const Point3& a = model_sample.points[i1];
            const Point3& b = model_sample.points[i2];
            const Point3& c = model_sample.points[i3];
            if ((a - b).norm() < min_side || (b - c).norm() < min_side || (a - c).norm() < min_side)
                continue;
            Eigen::Vector3d n = (b - a).cross(c - a);
            if (n.norm() < 1e-3 * min_side * min_side) continue;  // collinear
            n.normalize();

            // 4th point: closest to the triangle plane among sufficiently
            // distant points.
            std::size_t best4 = SIZE_MAX;
            double best_plane_dist = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < model_sample.size(); ++i) {
                if (i == i1 || i == i2 || i == i3) continue;
                const Point3& p = model_sample.points[i];
                if ((p - a).norm() < min_side || (p - b).norm() < min_side ||
                    (p - c).norm() < min_side)
                    continue;
                const double plane_dist = std::abs(n.dot(p - a));
                if (plane_dist < best_plane_dist) {
                    best_plane_dist = plane_dist;
                    best4 = i;
                }
            }
            if (best4 == SIZE_MAX) continue;
            std::array<std::size_t, 4> ids{i1, i2, i3, best4};
            if (order_as_diagonals(model_sample.points, ids, base, coplanarity_tol)) {
                base.d1 = (model_sample.points[base.ids[0]] - model_sample.points[base.ids[1]]).norm();
                base.d2 = (model_sample.points[base.ids[2]] - model_sample.points[base.ids[3]]).norm();
                have_base = true;
            }
        }
        if (!have_base) continue;
        ++bases_tried;

        const PairList list1 = pairs_with_distance(q, base.d1, cfg.delta);
        const PairList list2 = pairs_with_distance(q, base.d2, cfg.delta);
        if (list1.pairs.empty() || list2.pairs.empty()) continue;

        // Candidate intersection points from the first diagonal, indexed for
        // range queries against the second diagonal's intersections.
        PointCloud mid1;
        mid1.points.reserve(list1.pairs.size());
        for (const auto& [i, j] : list1.pairs) mid1.points.push_back(q[i] + base.ratio1 * (q[j] - q[i]));
        const KdTree mid1_tree(mid1);

        const std::vector<Point3> base_pts{
            model_sample.points[base.ids[0]], model_sample.points[base.ids[1]],
            model_sample.points[base.ids[2]], model_sample.points[base.ids[3]]};

        for (const auto& [k, l] : list2.pairs) {
            const Point3 mid2 = q[k] + base.ratio2 * (q[l] - q[k]);
            for (std::size_t hit : mid1_tree.radius_search(mid2, cfg.delta)) {
                const auto [i, j] = list1.pairs[hit];
                if (i == k || i == l || j == k || j == l) continue;
                const std::vector<Point3> cand_pts{q[i], q[j], q[k], q[l]};
                const RigidTransform t = best_rigid_fit(base_pts, cand_pts);
                // Cheap congruence sanity check before the full LCP pass.
                double fit_err = 0.0;
                for (int m = 0; m < 4; ++m)
                    fit_err = std::max(fit_err, (t.apply(base_pts[m]) - cand_pts[m]).norm());
                if (fit_err > 2.0 * cfg.delta) continue;
                const double score = lcp_score(t, model_eval, cluster_eval_tree, cfg.delta);
                if (score > best.lcp_score) {
                    best.lcp_score = score;
                    best.transform = t;
                }
            }
        }
        if (best.lcp_score >= cfg.overlap_estimate) break;  // good enough
    }

    best.bases_tried = bases_tried;
    if (bases_tried == 0)
        throw Error(ErrorCode::NoCongruentBase, "no wide coplanar base could be drawn");
    if (best.lcp_score < 0.5 * cfg.overlap_estimate)
        throw Error(ErrorCode::NoCongruentBase,
                    "best LCP " + std::to_string(std::max(best.lcp_score, 0.0)) +
                        " below half the overlap estimate");
    return best;
}

RegistrationResult segment_then_register(const PointCloud& scene, const PointCloud& model,
                                         const PlaneRemovalConfig& plane_cfg,
                                         const ClusterConfig& cluster_cfg,
                                         const FourPcsConfig& cfg, const IcpConfig& icp_cfg) {
    if (scene.empty()) throw Error(ErrorCode::EmptyCloud, "scene cloud is empty");
    if (model.empty()) throw Error(ErrorCode::EmptyCloud, "model cloud is empty");

    const PlaneRemovalResult planes = remove_planes(scene, plane_cfg);
    if (planes.remaining.empty())
        throw Error(ErrorCode::SegmentationFailed, "scene is empty after plane removal");
    const std::vector<PointCloud> clusters = euclidean_cluster(planes.remaining, cluster_cfg);
    if (clusters.empty())
        throw Error(ErrorCode::SegmentationFailed, "no clusters after plane removal");

    const Aabb model_box = Aabb::of(model);
    const double model_diag = model_box.diagonal();

    std::vector<const PointCloud*> compatible;
    for (const auto& cluster : clusters) {
        const double diag = Aabb::of(cluster).diagonal();
        if (diag >= 0.5 * model_diag && diag <= 2.0 * model_diag) compatible.push_back(&cluster);
    }
    if (compatible.empty())
        throw Error(ErrorCode::SegmentationFailed, "no cluster matches the model footprint");
    if (compatible.size() == 1 &&
        Aabb::of(*compatible.front()).volume() > 1.5 * model_box.volume())
        throw Error(ErrorCode::SegmentationFailed,
                    "the only size-compatible cluster is an oversized merged blob");

    bool any = false;
    RegistrationResult best;
    best.rms_mm = std::numeric_limits<double>::infinity();
    for (const PointCloud* cluster : compatible) {
        CoarseResult coarse;
        try {
            coarse = register_4pcs(model, *cluster, cfg);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NoCongruentBase || e.code() == ErrorCode::TooFewPoints)
                continue;
            throw;
        }
        RegistrationResult refined;
        try {
            refined = register_icp(model, *cluster, coarse.transform, icp_cfg);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NoCorrespondences) continue;
            throw;
        }
        if (refined.rms_mm < best.rms_mm) {
            best = refined;
            any = true;
        }
    }
    if (!any)
        throw Error(ErrorCode::SegmentationFailed,
                    "no size-compatible cluster produced a coarse alignment");
    return best;
}

}  // namespace hmdref
