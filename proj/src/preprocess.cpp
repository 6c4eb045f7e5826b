#include "hmdref/preprocess.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "hmdref/rng.hpp"

namespace hmdref {

namespace {

struct VoxelKey {
    std::int64_t x, y, z;
    bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
    std::size_t operator()(const VoxelKey& k) const {
        std::uint64_t h = mix_seed(static_cast<std::uint64_t>(k.x), 0x10001);
        h ^= mix_seed(static_cast<std::uint64_t>(k.y), 0x20002);
        h ^= mix_seed(static_cast<std::uint64_t>(k.z), 0x30003);
        return static_cast<std::size_t>(h);
    }
};

VoxelKey voxel_key(const Point3& p, double voxel) {
    return {static_cast<std::int64_t>(std::floor(p.x() / voxel)),
            static_cast<std::int64_t>(std::floor(p.y() / voxel)),
            static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

// Local frame from the PCA of a neighborhood: u,v span the fitted plane,
// w is its normal. Signs fixed deterministically. `planar` is false when the
// points are (near-)collinear and no plane is defined.
struct LocalFrame {
    Point3 origin;
    Eigen::Vector3d u, v, w;
    bool planar = false;
};

LocalFrame fit_local_frame(const std::vector<Point3>& pts) {
    Point3 mean = Point3::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts) {
        const Eigen::Vector3d d = p - mean;
        cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    LocalFrame frame;
    frame.origin = mean;
    // eigenvalues ascending: [0] is the normal direction
    frame.w = eig.eigenvectors().col(0);
    frame.u = eig.eigenvectors().col(2);
    frame.planar = eig.eigenvalues()[1] > 1e-9 * eig.eigenvalues()[2];
    for (auto* axis : {&frame.u, &frame.w}) {
        int imax;
        axis->cwiseAbs().maxCoeff(&imax);
        if ((*axis)[imax] < 0.0) *axis = -*axis;
    }
    frame.v = frame.w.cross(frame.u);
    return frame;
}

// Least-squares bivariate polynomial w(u,v) of total degree <= order.
// Returns coefficients in the term order produced by poly_terms().
std::vector<std::pair<int, int>> poly_terms(int order) {
    std::vector<std::pair<int, int>> terms;
    for (int total = 0; total <= order; ++total)
        for (int a = total; a >= 0; --a) terms.emplace_back(a, total - a);
    return terms;
}

double eval_poly(const std::vector<std::pair<int, int>>& terms, const Eigen::VectorXd& coeff,
                 double u, double v) {
    double w = 0.0;
    for (std::size_t t = 0; t < terms.size(); ++t)
        w += coeff[static_cast<Eigen::Index>(t)] *
             std::pow(u, terms[t].first) * std::pow(v, terms[t].second);
    return w;
}

// Projects `target` onto the polynomial surface fitted to `neighborhood`.
Point3 mls_project(const Point3& target, const std::vector<Point3>& neighborhood, int order) {
    const LocalFrame frame = fit_local_frame(neighborhood);
    const auto terms = poly_terms(order);
    const Eigen::Index n_terms = static_cast<Eigen::Index>(terms.size());

    const Eigen::Vector3d rel = target - frame.origin;
    const double tu = rel.dot(frame.u);
    const double tv = rel.dot(frame.v);

    if (static_cast<Eigen::Index>(neighborhood.size()) < n_terms) {
        // Too few samples for the polynomial; fall back to the plane.
        return frame.origin + tu * frame.u + tv * frame.v;
    }

    Eigen::MatrixXd design(neighborhood.size(), n_terms);
    Eigen::VectorXd rhs(neighborhood.size());
    for (std::size_t i = 0; i < neighborhood.size(); ++i) {
        const Eigen::Vector3d d = neighborhood[i] - frame.origin;
        const double u = d.dot(frame.u);
        const double v = d.dot(frame.v);
        rhs[static_cast<Eigen::Index>(i)] = d.dot(frame.w);
        for (Eigen::Index t = 0; t < n_terms; ++t)
            design(static_cast<Eigen::Index>(i), t) =
                std::pow(u, terms[t].first) * std::pow(v, terms[t].second);
    }
    const Eigen::VectorXd coeff = design.colPivHouseholderQr().solve(rhs);
    const double tw = eval_poly(terms, coeff, tu, tv);
    return frame.origin + tu * frame.u + tv * frame.v + tw * frame.w;
}

}  // namespace

PointCloud sphere_crop(const PointCloud& cloud, const CropConfig& cfg) {
    if (cfg.radius <= 0.0) throw Error(ErrorCode::InvalidArgument, "crop radius must be > 0");
    const double r2 = cfg.radius * cfg.radius;
    PointCloud out;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if ((cloud.points[i] - cfg.center).squaredNorm() <= r2) {
            out.points.push_back(cloud.points[i]);
            if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
        }
    }
    return out;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
    if (voxel <= 0.0) throw Error(ErrorCode::InvalidArgument, "voxel size must be > 0");
    struct Cell {
        Point3 point_sum = Point3::Zero();
        Eigen::Vector3d normal_sum = Eigen::Vector3d::Zero();
        Eigen::Vector3d first_normal = Eigen::Vector3d::Zero();
        std::size_t count = 0;
    };
    std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot_of;
    std::vector<Cell> cells;  // first-occurrence order keeps the result deterministic
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const VoxelKey key = voxel_key(cloud.points[i], voxel);
        auto [it, inserted] = slot_of.try_emplace(key, cells.size());
        if (inserted) cells.emplace_back();
        Cell& cell = cells[it->second];
        cell.point_sum += cloud.points[i];
        if (cloud.has_normals()) {
            cell.normal_sum += cloud.normals[i];
            if (cell.count == 0) cell.first_normal = cloud.normals[i];
        }
        ++cell.count;
    }
    PointCloud out;
    out.points.reserve(cells.size());
    for (const auto& cell : cells) {
        out.points.push_back(cell.point_sum / static_cast<double>(cell.count));
        if (cloud.has_normals()) {
            Eigen::Vector3d n = cell.normal_sum;
            const double len = n.norm();
            out.normals.push_back(len > 1e-12 ? Eigen::Vector3d(n / len) : cell.first_normal);
        }
    }
    return out;
}

PointCloud estimate_normals(const PointCloud& cloud, int k, const Point3& viewpoint) {
    if (k < 3 || cloud.size() <= static_cast<std::size_t>(k))
        throw Error(ErrorCode::TooFewPoints,
                    "normal estimation needs cloud size > k >= 3 (cloud " +
                        std::to_string(cloud.size()) + ", k " + std::to_string(k) + ")");
    const KdTree tree(cloud);
    PointCloud out;
    out.points = cloud.points;
    out.normals.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto neighbors = tree.knn(cloud.points[i], static_cast<std::size_t>(k));
        Point3 mean = Point3::Zero();
        for (const auto& nb : neighbors) mean += cloud.points[nb.index];
        mean /= static_cast<double>(neighbors.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const auto& nb : neighbors) {
            const Eigen::Vector3d d = cloud.points[nb.index] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        Eigen::Vector3d normal = eig.eigenvectors().col(0);
        const double toward = normal.dot(viewpoint - cloud.points[i]);
        if (toward < 0.0 || (toward == 0.0 && normal.z() < 0.0)) normal = -normal;
        out.normals[i] = normal;
    }
    return out;
}

PointCloud mls_smooth(const PointCloud& cloud, const MlsConfig& cfg) {
    if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "mls on empty cloud");
    if (cfg.search_radius <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "mls search radius must be > 0");
    if (cfg.polynomial_order < 1)
        throw Error(ErrorCode::InvalidArgument, "mls polynomial order must be >= 1");
    if (cfg.upsampling != MlsUpsampling::None && cfg.upsample_param <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "mls upsample voxel must be > 0");

    const KdTree tree(cloud);
    auto radius_neighborhood = [&](const Point3& q) {
        std::vector<Point3> pts;
        for (std::size_t idx : tree.radius_search(q, cfg.search_radius))
            pts.push_back(cloud.points[idx]);
        return pts;
    };

    PointCloud out;
    std::size_t starved = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto neighborhood = radius_neighborhood(cloud.points[i]);
        if (neighborhood.size() < 3) {
            ++starved;
            continue;
        }
        out.points.push_back(mls_project(cloud.points[i], neighborhood, cfg.polynomial_order));
    }
    if (starved * 10 > cloud.size())
        throw Error(ErrorCode::RadiusTooSmall,
                    std::to_string(starved) + " of " + std::to_string(cloud.size()) +
                        " points have fewer than 3 neighbors within " +
                        std::to_string(cfg.search_radius) + " m");

    if (cfg.upsampling == MlsUpsampling::VoxelGridDilation) {
        const double voxel = cfg.upsample_param;
        std::unordered_map<VoxelKey, bool, VoxelKeyHash> occupied;
        for (const auto& p : cloud.points) occupied[voxel_key(p, voxel)] = true;
        std::vector<VoxelKey> dilated;
        std::unordered_map<VoxelKey, bool, VoxelKeyHash> seen;
        for (const auto& [key, _] : occupied) {
            for (int dx = -1; dx <= 1; ++dx)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dz = -1; dz <= 1; ++dz) {
                        const VoxelKey k{key.x + dx, key.y + dy, key.z + dz};
                        if (seen.try_emplace(k, true).second) dilated.push_back(k);
                    }
        }
        std::sort(dilated.begin(), dilated.end(), [](const VoxelKey& a, const VoxelKey& b) {
            return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
        });
        for (const auto& key : dilated) {
            const Point3 seed((key.x + 0.5) * voxel, (key.y + 0.5) * voxel, (key.z + 0.5) * voxel);
            const auto neighborhood = radius_neighborhood(seed);
            if (neighborhood.size() < 3) continue;
            out.points.push_back(mls_project(seed, neighborhood, cfg.polynomial_order));
        }
    }
    return out;
}

PlaneRemovalResult remove_planes(const PointCloud& cloud, const PlaneRemovalConfig& cfg) {
    if (cfg.distance_threshold <= 0.0)
        throw Error(ErrorCode::InvalidArgument, "plane distance threshold must be > 0");
    PlaneRemovalResult result;
    std::vector<std::size_t> active(cloud.size());
    for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;

    Rng rng(cfg.rng_seed);
    while (active.size() >= 3) {
        std::size_t best_count = 0;
        Eigen::Vector4d best_plane = Eigen::Vector4d::Zero();
        for (int iter = 0; iter < cfg.max_iterations; ++iter) {
            const std::size_t ia = uniform_index(rng, active.size());
            const std::size_t ib = uniform_index(rng, active.size());
            const std::size_t ic = uniform_index(rng, active.size());
            if (ia == ib || ib == ic || ia == ic) continue;
            const Point3& a = cloud.points[active[ia]];
            const Point3& b = cloud.points[active[ib]];
            const Point3& c = cloud.points[active[ic]];
            Eigen::Vector3d n = (b - a).cross(c - a);
            const double len = n.norm();
            if (len < 1e-12) continue;
            n /= len;
            const double d = -n.dot(a);
            std::size_t count = 0;
            for (std::size_t idx : active)
                if (std::abs(n.dot(cloud.points[idx]) + d) <= cfg.distance_threshold) ++count;
            if (count > best_count) {
                best_count = count;
                best_plane << n.x(), n.y(), n.z(), d;
            }
        }
        if (best_count == 0 ||
            static_cast<double>(best_count) <
                cfg.min_inlier_fraction * static_cast<double>(active.size()))
            break;

        std::vector<std::size_t> survivors;
        survivors.reserve(active.size() - best_count);
        const Eigen::Vector3d n = best_plane.head<3>();
        for (std::size_t idx : active) {
            if (std::abs(n.dot(cloud.points[idx]) + best_plane[3]) <= cfg.distance_threshold)
                result.removed_indices.push_back(idx);
            else
                survivors.push_back(idx);
        }
        result.planes.push_back(best_plane);
        active.swap(survivors);
    }

    for (std::size_t idx : active) {
        result.remaining.points.push_back(cloud.points[idx]);
        if (cloud.has_normals()) result.remaining.normals.push_back(cloud.normals[idx]);
    }
    std::sort(result.removed_indices.begin(), result.removed_indices.end());
    return result;
}

std::vector<PointCloud> euclidean_cluster(const PointCloud& cloud, const ClusterConfig& cfg) {
    if (cfg.tolerance <= 0.0) throw Error(ErrorCode::InvalidArgument, "tolerance must be > 0");
    if (cfg.min_cluster_size == 0 || cfg.min_cluster_size > cfg.max_cluster_size)
        throw Error(ErrorCode::InvalidArgument, "need 0 < min_cluster_size <= max_cluster_size");
    if (cloud.empty()) return {};

    const KdTree tree(cloud);
    std::vector<bool> visited(cloud.size(), false);
    struct Component {
        std::vector<std::size_t> indices;  // ascending
    };
    std::vector<Component> components;
    for (std::size_t seed = 0; seed < cloud.size(); ++seed) {
        if (visited[seed]) continue;
        Component comp;
        std::vector<std::size_t> frontier{seed};
        visited[seed] = true;
        while (!frontier.empty()) {
            const std::size_t cur = frontier.back();
            frontier.pop_back();
            comp.indices.push_back(cur);
            for (std::size_t nb : tree.radius_search(cloud.points[cur], cfg.tolerance)) {
                if (!visited[nb]) {
                    visited[nb] = true;
                    frontier.push_back(nb);
                }
            }
        }
        std::sort(comp.indices.begin(), comp.indices.end());
        components.push_back(std::move(comp));
    }

    std::erase_if(components, [&](const Component& c) {
        return c.indices.size() < cfg.min_cluster_size || c.indices.size() > cfg.max_cluster_size;
    });
    std::sort(components.begin(), components.end(), [](const Component& a, const Component& b) {
        if (a.indices.size() != b.indices.size()) return a.indices.size() > b.indices.size();
        return a.indices.front() < b.indices.front();
    });

    std::vector<PointCloud> clusters;
    clusters.reserve(components.size());
    for (const auto& comp : components) {
        PointCloud c;
        for (std::size_t idx : comp.indices) {
            c.points.push_back(cloud.points[idx]);
            if (cloud.has_normals()) c.normals.push_back(cloud.normals[idx]);
        }
        clusters.push_back(std::move(c));
    }
    return clusters;
}

}  // namespace hmdref
