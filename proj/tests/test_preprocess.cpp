#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <set>

#include <hmdref/preprocess.hpp>
#include <hmdref/rng.hpp>

using namespace hmdref;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, double extent = 2.0) {
    PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i)
        cloud.points.emplace_back(uniform(rng, -extent, extent), uniform(rng, -extent, extent),
                                  uniform(rng, -extent, extent));
    return cloud;
}

PointCloud grid_plane(int nx, int ny, double spacing, double z = 0.0) {
    PointCloud cloud;
    for (int x = 0; x < nx; ++x)
        for (int y = 0; y < ny; ++y) cloud.points.emplace_back(x * spacing, y * spacing, z);
    return cloud;
}

PointCloud sphere_samples(std::size_t n, double radius, Rng& rng) {
    PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Vector3d dir(gaussian(rng), gaussian(rng), gaussian(rng));
        dir.normalize();
        cloud.points.push_back(radius * dir);
    }
    return cloud;
}

// Union-find oracle over the epsilon graph.
std::vector<std::vector<std::size_t>> brute_components(const PointCloud& cloud, double tol) {
    std::vector<std::size_t> parent(cloud.size());
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    std::function<std::size_t(std::size_t)> find = [&](std::size_t i) {
        while (parent[i] != i) i = parent[i] = parent[parent[i]];
        return i;
    };
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t j = i + 1; j < cloud.size(); ++j)
            if ((cloud.points[i] - cloud.points[j]).norm() <= tol) parent[find(i)] = find(j);
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < cloud.size(); ++i) groups[find(i)].push_back(i);
    std::vector<std::vector<std::size_t>> out;
    for (auto& [root, members] : groups) out.push_back(members);
    return out;
}

}  // namespace

TEST_CASE("sphere crop keeps the boundary cases straight") {
    PointCloud cloud;
    cloud.points.emplace_back(1.9, 0, 0);
    cloud.points.emplace_back(2.1, 0, 0);
    const PointCloud out = sphere_crop(cloud, {Point3::Zero(), 2.0});
    REQUIRE(out.size() == 1);
    CHECK(out.points[0].x() == 1.9);
}

TEST_CASE("sphere crop of an empty cloud is empty and cropping is idempotent") {
    CHECK(sphere_crop(PointCloud{}, {Point3::Zero(), 2.0}).empty());

    Rng rng(21);
    const PointCloud cloud = random_cloud(500, rng, 3.0);
    const CropConfig cfg{Point3(0.5, -0.5, 0), 1.5};
    const PointCloud once = sphere_crop(cloud, cfg);
    const PointCloud twice = sphere_crop(once, cfg);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(once.points[i] == twice.points[i]);
}

TEST_CASE("sphere crop equals the linear-scan filter and preserves order") {
    Rng rng(22);
    const PointCloud cloud = random_cloud(800, rng, 3.0);
    const CropConfig cfg{Point3(0.2, 0.1, -0.3), 1.2};
    const PointCloud out = sphere_crop(cloud, cfg);
    std::vector<Point3> expected;
    for (const auto& p : cloud.points)
        if ((p - cfg.center).norm() <= cfg.radius) expected.push_back(p);
    REQUIRE(out.size() == expected.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.points[i] == expected[i]);
}

TEST_CASE("voxel downsample merges co-voxel points into their centroid") {
    PointCloud cloud;
    for (int i = 0; i < 8; ++i)
        cloud.points.emplace_back(0.01 * (i % 2), 0.01 * ((i / 2) % 2), 0.01 * (i / 4));
    const PointCloud out = voxel_downsample(cloud, 0.1);
    REQUIRE(out.size() == 1);
    CHECK(out.points[0] == Point3(0.005, 0.005, 0.005));
}

TEST_CASE("voxel smaller than the minimal gap keeps every point") {
    Rng rng(23);
    PointCloud cloud = random_cloud(200, rng, 1.0);
    double min_gap = 1e9;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t j = i + 1; j < cloud.size(); ++j)
            min_gap = std::min(min_gap, (cloud.points[i] - cloud.points[j]).norm());
    // a voxel strictly below the smallest pairwise gap over sqrt(3) cannot
    // hold two points
    const double voxel = min_gap / 2.0;
    const PointCloud out = voxel_downsample(cloud, voxel);
    CHECK(out.size() == cloud.size());
    std::set<std::array<double, 3>> in_set, out_set;
    for (const auto& p : cloud.points) in_set.insert({p.x(), p.y(), p.z()});
    for (const auto& p : out.points) out_set.insert({p.x(), p.y(), p.z()});
    CHECK(in_set == out_set);
}

TEST_CASE("voxel downsample output stays near the input and occupies unique voxels") {
    Rng rng(24);
    const PointCloud cloud = random_cloud(16000, rng, 2.0);
    const double voxel = 0.05;
    const PointCloud out = voxel_downsample(cloud, voxel);
    CHECK(out.size() <= cloud.size());

    const double half_diag = 0.5 * voxel * std::sqrt(3.0);
    const KdTree tree(cloud);
    std::set<std::array<std::int64_t, 3>> keys;
    for (const auto& p : out.points) {
        CHECK(tree.nearest(p).distance <= half_diag + 1e-12);
        keys.insert({static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                     static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                     static_cast<std::int64_t>(std::floor(p.z() / voxel))});
    }
    CHECK(keys.size() == out.size());
}

TEST_CASE("normals of a planar grid point straight up or down") {
    const PointCloud cloud = grid_plane(20, 20, 0.05);
    const PointCloud out = estimate_normals(cloud, 8);
    REQUIRE(out.has_normals());
    for (const auto& n : out.normals) {
        CHECK(std::abs(std::abs(n.z()) - 1.0) < 1e-6);
        CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("normals on a sphere line up with the radial direction") {
    Rng rng(25);
    const PointCloud cloud = sphere_samples(3000, 1.0, rng);
    const PointCloud out = estimate_normals(cloud, 12);
    double mean_align = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
        mean_align += std::abs(out.normals[i].dot(out.points[i].normalized()));
    mean_align /= static_cast<double>(out.size());
    CHECK(mean_align > 0.95);
}

TEST_CASE("normals orient toward the viewpoint") {
    // plane z=0 seen from above: normals should have positive z
    const PointCloud cloud = grid_plane(15, 15, 0.05);
    const PointCloud out = estimate_normals(cloud, 8, Point3(0.3, 0.3, 2.0));
    for (const auto& n : out.normals) CHECK(n.z() > 0.0);
}

TEST_CASE("k equal to cloud size minus one on coplanar points still gives the plane normal") {
    PointCloud cloud;
    cloud.points.emplace_back(0, 0, 0);
    cloud.points.emplace_back(1, 0, 0);
    cloud.points.emplace_back(0, 1, 0);
    cloud.points.emplace_back(1, 1, 0);
    const PointCloud out = estimate_normals(cloud, 3);
    for (const auto& n : out.normals) CHECK(std::abs(std::abs(n.z()) - 1.0) < 1e-9);
}

TEST_CASE("estimate_normals rejects undersized clouds") {
    PointCloud cloud;
    cloud.points.emplace_back(0, 0, 0);
    cloud.points.emplace_back(1, 0, 0);
    CHECK_THROWS_AS(estimate_normals(cloud, 3), Error);
}

TEST_CASE("mls leaves a noiseless plane in place") {
    const PointCloud cloud = grid_plane(25, 25, 0.02);
    MlsConfig cfg;
    cfg.search_radius = 0.05;
    const PointCloud out = mls_smooth(cloud, cfg);
    REQUIRE(out.size() == cloud.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK((out.points[i] - cloud.points[i]).norm() < 1e-6);
}

TEST_CASE("mls reduces the rms distance of a noisy plane to the true plane") {
    Rng rng(26);
    PointCloud noisy = grid_plane(40, 40, 0.02);
    for (auto& p : noisy.points) p.z() += 0.005 * gaussian(rng);

    auto rms_z = [](const PointCloud& c) {
        double sum = 0.0;
        for (const auto& p : c.points) sum += p.z() * p.z();
        return std::sqrt(sum / static_cast<double>(c.size()));
    };

    MlsConfig cfg;
    cfg.search_radius = 0.05;
    const PointCloud smooth = mls_smooth(noisy, cfg);
    REQUIRE(!smooth.empty());
    CHECK(rms_z(smooth) < rms_z(noisy));
}

TEST_CASE("mls radius below the grid spacing is an error") {
    const PointCloud cloud = grid_plane(20, 20, 0.02);
    MlsConfig cfg;
    cfg.search_radius = 0.005;
    try {
        mls_smooth(cloud, cfg);
        FAIL("expected RadiusTooSmall");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::RadiusTooSmall);
    }
}

TEST_CASE("mls voxel dilation upsamples the cloud onto the surface") {
    const PointCloud cloud = grid_plane(30, 30, 0.02);
    MlsConfig cfg;
    cfg.search_radius = 0.06;
    cfg.upsampling = MlsUpsampling::VoxelGridDilation;
    cfg.upsample_param = 0.04;
    const PointCloud out = mls_smooth(cloud, cfg);
    CHECK(out.size() > cloud.size());
    for (const auto& p : out.points) CHECK(std::abs(p.z()) < 1e-6);
}

TEST_CASE("plane removal strips a pure plane") {
    const PointCloud cloud = grid_plane(30, 30, 0.02);
    PlaneRemovalConfig cfg;
    cfg.distance_threshold = 0.01;
    const PlaneRemovalResult result = remove_planes(cloud, cfg);
    CHECK(result.planes.size() >= 1);
    CHECK(result.remaining.size() <
          static_cast<std::size_t>(0.25 * static_cast<double>(cloud.size())));
}

TEST_CASE("plane removal separates a plane from a sphere by membership") {
    Rng rng(27);
    PointCloud cloud = grid_plane(100, 100, 0.02);  // 10,000 points, z = 0
    const std::size_t plane_count = cloud.size();
    PointCloud ball = sphere_samples(1000, 0.3, rng);
    for (auto& p : ball.points) cloud.points.push_back(p + Point3(1.0, 1.0, 0.8));

    PlaneRemovalConfig cfg;
    cfg.distance_threshold = 0.01;
    cfg.max_iterations = 300;
    const PlaneRemovalResult result = remove_planes(cloud, cfg);

    std::size_t plane_removed = 0, sphere_removed = 0;
    for (std::size_t idx : result.removed_indices)
        (idx < plane_count ? plane_removed : sphere_removed) += 1;
    CHECK(static_cast<double>(plane_removed) >= 0.99 * static_cast<double>(plane_count));
    CHECK(static_cast<double>(sphere_removed) <= 0.01 * 1000.0);
}

TEST_CASE("plane removal leaves a cloud without a dominant plane untouched") {
    Rng rng(28);
    PointCloud cloud;
    for (int i = 0; i < 2000; ++i) {
        Eigen::Vector3d p(gaussian(rng), gaussian(rng), gaussian(rng));
        p.normalize();
        cloud.points.push_back(p * std::cbrt(uniform01(rng)));  // uniform ball
    }
    PlaneRemovalConfig cfg;
    cfg.distance_threshold = 0.005;
    cfg.min_inlier_fraction = 0.25;
    const PlaneRemovalResult result = remove_planes(cloud, cfg);
    CHECK(result.planes.empty());
    CHECK(result.remaining.size() == cloud.size());
}

TEST_CASE("plane removal partitions the input as multisets") {
    Rng rng(29);
    PointCloud cloud = grid_plane(40, 40, 0.02);
    PointCloud extra = random_cloud(300, rng, 0.5);
    for (auto& p : extra.points) cloud.points.push_back(p + Point3(0, 0, 1.0));

    const PlaneRemovalResult result = remove_planes(cloud, PlaneRemovalConfig{});
    CHECK(result.remaining.size() + result.removed_indices.size() == cloud.size());
    // removed indices are unique and the remaining points are exactly the others
    std::set<std::size_t> removed(result.removed_indices.begin(), result.removed_indices.end());
    REQUIRE(removed.size() == result.removed_indices.size());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (removed.count(i)) continue;
        REQUIRE(cursor < result.remaining.size());
        CHECK(result.remaining.points[cursor] == cloud.points[i]);
        ++cursor;
    }
}

TEST_CASE("plane removal is deterministic per seed") {
    Rng rng(30);
    PointCloud cloud = grid_plane(30, 30, 0.02);
    PointCloud extra = random_cloud(200, rng, 0.4);
    for (auto& p : extra.points) cloud.points.push_back(p + Point3(0, 0, 0.5));

    PlaneRemovalConfig cfg;
    cfg.rng_seed = 7;
    const auto a = remove_planes(cloud, cfg);
    const auto b = remove_planes(cloud, cfg);
    CHECK(a.removed_indices == b.removed_indices);
    REQUIRE(a.planes.size() == b.planes.size());
    for (std::size_t i = 0; i < a.planes.size(); ++i) CHECK(a.planes[i] == b.planes[i]);
}

TEST_CASE("two blobs a meter apart cluster by tolerance") {
    Rng rng(31);
    PointCloud cloud;
    for (int i = 0; i < 60; ++i)
        cloud.points.push_back(Point3(uniform(rng, 0, 0.2), uniform(rng, 0, 0.2), 0));
    for (int i = 0; i < 40; ++i)
        cloud.points.push_back(Point3(1.0 + uniform(rng, 0, 0.2), uniform(rng, 0, 0.2), 0));

    ClusterConfig cfg;
    cfg.tolerance = 0.1;
    auto clusters = euclidean_cluster(cloud, cfg);
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0].size() == 60);  // size-descending order
    CHECK(clusters[1].size() == 40);

    cfg.tolerance = 2.0;
    clusters = euclidean_cluster(cloud, cfg);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].size() == 100);
}

TEST_CASE("clusters match the union-find oracle and partition the cloud") {
    Rng rng(32);
    const PointCloud cloud = random_cloud(400, rng, 1.0);
    const double tol = 0.22;
    ClusterConfig cfg;
    cfg.tolerance = tol;
    const auto clusters = euclidean_cluster(cloud, cfg);

    auto expected = brute_components(cloud, tol);
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
        if (a.size() != b.size()) return a.size() > b.size();
        return a.front() < b.front();
    });
    REQUIRE(clusters.size() == expected.size());
    std::size_t total = 0;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        REQUIRE(clusters[c].size() == expected[c].size());
        for (std::size_t i = 0; i < clusters[c].size(); ++i)
            CHECK(clusters[c].points[i] == cloud.points[expected[c][i]]);
        total += clusters[c].size();
    }
    CHECK(total == cloud.size());
}

TEST_CASE("cluster size gates discard components outside the window") {
    PointCloud cloud;
    for (int i = 0; i < 10; ++i) cloud.points.emplace_back(i * 0.01, 0, 0);
    cloud.points.emplace_back(5, 5, 5);  // singleton
    ClusterConfig cfg;
    cfg.tolerance = 0.05;
    cfg.min_cluster_size = 2;
    const auto clusters = euclidean_cluster(cloud, cfg);
    REQUIRE(clusters.size() == 1);
    CHECK(clusters[0].size() == 10);
}
