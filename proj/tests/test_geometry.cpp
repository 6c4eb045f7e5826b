#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <hmdref/geometry.hpp>
#include <hmdref/rng.hpp>

using namespace hmdref;

namespace {

PointCloud random_cloud(std::size_t n, Rng& rng, double extent = 2.0) {
    PointCloud cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        cloud.points.emplace_back(uniform(rng, -extent, extent), uniform(rng, -extent, extent),
                                  uniform(rng, -extent, extent));
    return cloud;
}

// Linear-scan oracle with the same tie rule as the index: replace only on a
// strictly smaller distance.
std::pair<std::size_t, double> brute_nearest(const PointCloud& cloud, const Point3& q) {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double d2 = (cloud.points[i] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return {best, std::sqrt(best_d2)};
}

RigidTransform random_transform(Rng& rng) {
    const Eigen::Vector3d axis =
        Eigen::Vector3d(gaussian(rng), gaussian(rng), gaussian(rng)).normalized();
    RigidTransform t;
    t.rotation = Eigen::AngleAxisd(uniform(rng, -M_PI, M_PI), axis).toRotationMatrix();
    t.translation = Eigen::Vector3d(gaussian(rng), gaussian(rng), gaussian(rng));
    return t;
}

}  // namespace

TEST_CASE("kd-tree over a single point answers every query with it") {
    PointCloud cloud;
    cloud.points.emplace_back(0.3, -0.2, 1.0);
    const KdTree tree(cloud);
    for (const auto& q : {Point3(0, 0, 0), Point3(5, 5, 5), Point3(-1, 2, 0.5)}) {
        const auto nn = tree.nearest(q);
        CHECK(nn.index == 0);
        CHECK(nn.distance == doctest::Approx((cloud.points[0] - q).norm()));
    }
}

TEST_CASE("kd-tree refuses an empty cloud") {
    PointCloud cloud;
    CHECK_THROWS_AS(KdTree{cloud}, Error);
}

TEST_CASE("kd-tree nearest equals brute force on 1000 random points") {
    Rng rng(42);
    const PointCloud cloud = random_cloud(1000, rng);
    const KdTree tree(cloud);
    for (int i = 0; i < 100; ++i) {
        const Point3 q(uniform(rng, -2.5, 2.5), uniform(rng, -2.5, 2.5), uniform(rng, -2.5, 2.5));
        const auto expected = brute_nearest(cloud, q);
        const auto got = tree.nearest(q);
        CHECK(got.index == expected.first);
        CHECK(got.distance == expected.second);
    }
}

TEST_CASE("kd-tree nearest matches brute force on larger clouds and on-cloud queries") {
    for (std::uint64_t seed : {7ULL, 8ULL, 9ULL}) {
        Rng rng(seed);
        const PointCloud cloud = random_cloud(10000, rng);
        const KdTree tree(cloud);
        for (int i = 0; i < 50; ++i) {
            const std::size_t pick = uniform_index(rng, cloud.size());
            const auto got = tree.nearest(cloud.points[pick]);
            CHECK(got.index == pick);
            CHECK(got.distance == 0.0);
        }
    }
}

TEST_CASE("nearest: geometry by inspection and the tie-break rule") {
    PointCloud cloud;
    cloud.points.emplace_back(0, 0, 0);
    cloud.points.emplace_back(1, 0, 0);
    const KdTree tree(cloud);

    auto nn = tree.nearest(Point3(0.4, 0, 0));
    CHECK(nn.index == 0);
    CHECK(nn.distance == doctest::Approx(0.4));

    // exactly between the two points: lower index wins
    nn = tree.nearest(Point3(0.5, 0, 0));
    CHECK(nn.index == 0);
}

TEST_CASE("radius search with r=0 returns exactly the coincident points") {
    PointCloud cloud;
    cloud.points.emplace_back(1, 1, 1);
    cloud.points.emplace_back(2, 2, 2);
    cloud.points.emplace_back(1, 1, 1);  // duplicate
    const KdTree tree(cloud);
    const auto hits = tree.radius_search(Point3(1, 1, 1), 0.0);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0] == 0);
    CHECK(hits[1] == 2);
}

TEST_CASE("radius search equals a linear-scan filter") {
    Rng rng(11);
    const PointCloud cloud = random_cloud(500, rng);
    const KdTree tree(cloud);
    for (int i = 0; i < 20; ++i) {
        const Point3 q(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
        const double r = uniform(rng, 0.1, 1.5);
        std::vector<std::size_t> expected;
        for (std::size_t j = 0; j < cloud.size(); ++j)
            if ((cloud.points[j] - q).norm() <= r) expected.push_back(j);
        CHECK(tree.radius_search(q, r) == expected);
    }
}

TEST_CASE("knn returns (distance, index)-sorted exact neighbors") {
    Rng rng(13);
    const PointCloud cloud = random_cloud(300, rng);
    const KdTree tree(cloud);
    for (int i = 0; i < 10; ++i) {
        const Point3 q(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < cloud.size(); ++j)
            all.emplace_back((cloud.points[j] - q).squaredNorm(), j);
        std::sort(all.begin(), all.end());
        const auto got = tree.knn(q, 12);
        REQUIRE(got.size() == 12);
        for (std::size_t j = 0; j < got.size(); ++j) CHECK(got[j].index == all[j].second);
    }
}

TEST_CASE("apply_transform: identity is bitwise, translation is exact") {
    Rng rng(3);
    PointCloud cloud = random_cloud(50, rng);
    const PointCloud same = apply_transform(RigidTransform::identity(), cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        CHECK(same.points[i] == cloud.points[i]);

    RigidTransform shift;
    shift.translation = Eigen::Vector3d(1, 2, 3);
    PointCloud origin;
    origin.points.emplace_back(0, 0, 0);
    const PointCloud moved = apply_transform(shift, origin);
    CHECK(moved.points[0] == Point3(1, 2, 3));
}

TEST_CASE("compose with inverse restores the cloud within 1e-9") {
    Rng rng(4);
    const PointCloud cloud = random_cloud(100, rng);
    const RigidTransform t = random_transform(rng);
    const PointCloud round = apply_transform(t.inverse().compose(t), cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        CHECK((round.points[i] - cloud.points[i]).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("transform composition is associative and stays rigid") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const RigidTransform a = random_transform(rng);
        const RigidTransform b = random_transform(rng);
        const RigidTransform c = random_transform(rng);
        const RigidTransform left = a.compose(b).compose(c);
        const RigidTransform right = a.compose(b.compose(c));
        CHECK((left.rotation - right.rotation).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((left.translation - right.translation).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(left.is_rigid(1e-9));

        const RigidTransform id = a.compose(a.inverse());
        CHECK((id.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(id.translation.cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("rms metric: self distance is zero, arithmetic cases check out") {
    Rng rng(6);
    const PointCloud cloud = random_cloud(200, rng);
    const KdTree tree(cloud);
    CHECK(rms_closest_point_mm(cloud, tree) == 0.0);

    PointCloud a, b;
    a.points.emplace_back(0, 0, 0);
    b.points.emplace_back(0.01, 0, 0);
    CHECK(rms_closest_point_mm(a, KdTree(b)) == doctest::Approx(10.0));
}

TEST_CASE("rms of a 1 mm shifted model against a dense plane grid stays under 1 mm") {
    PointCloud plane;
    for (int x = 0; x < 60; ++x)
        for (int y = 0; y < 60; ++y) plane.points.emplace_back(x * 0.01, y * 0.01, 0.0);
    RigidTransform shift;
    shift.translation = Eigen::Vector3d(0.001, 0, 0);
    const PointCloud model = apply_transform(shift, plane);
    const double rms = rms_closest_point_mm(model, KdTree(plane));
    CHECK(rms <= 1.0 + 1e-12);
    CHECK(rms > 0.0);
}

TEST_CASE("rms is invariant when model and scene move together") {
    Rng rng(7);
    const PointCloud scene = random_cloud(400, rng);
    PointCloud model;
    for (std::size_t i = 0; i < scene.size(); i += 3) {
        Point3 p = scene.points[i];
        p.x() += 0.004;  // a few millimeters off the scene
        model.points.push_back(p);
    }
    const double base = rms_closest_point_mm(model, KdTree(scene));
    for (int i = 0; i < 5; ++i) {
        const RigidTransform t = random_transform(rng);
        const double moved =
            rms_closest_point_mm(apply_transform(t, model), KdTree(apply_transform(t, scene)));
        CHECK(moved == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("rms of a transformed cloud against itself is exactly zero") {
    Rng rng(8);
    const PointCloud cloud = random_cloud(150, rng);
    const RigidTransform t = random_transform(rng);
    const PointCloud moved = apply_transform(t, cloud);
    CHECK(rms_closest_point_mm(moved, KdTree(moved)) == 0.0);
}

TEST_CASE("aabb basics") {
    PointCloud cloud;
    cloud.points.emplace_back(-1, 0, 2);
    cloud.points.emplace_back(3, -2, 5);
    const Aabb box = Aabb::of(cloud);
    CHECK(box.min == Point3(-1, -2, 2));
    CHECK(box.max == Point3(3, 0, 5));
    CHECK(box.contains(Point3(0, -1, 3)));
    CHECK(!box.contains(Point3(0, -3, 3)));
    CHECK(box.volume() == doctest::Approx(4.0 * 2.0 * 3.0));
}

TEST_CASE("yaw round-trips through from_yaw") {
    for (double yaw : {0.0, 0.3, -2.9, M_PI / 2, M_PI}) {
        const RigidTransform t = RigidTransform::from_yaw(yaw, Point3(1, 2, 3));
        CHECK(t.yaw() == doctest::Approx(yaw).epsilon(1e-12));
        CHECK(t.is_rigid(1e-12));
    }
}
