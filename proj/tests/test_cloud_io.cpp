#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <filesystem>
#include <fstream>

#include <hmdref/cloud_io.hpp>
#include <hmdref/rng.hpp>

using namespace hmdref;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("hmdref_io_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Distance to the triangle plane plus the barycentric containment residual;
// zero for points on the triangle.
double on_triangle_residual(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
    const Eigen::Vector3d n = (b - a).cross(c - a);
    const double plane = std::abs(n.normalized().dot(p - a));
    Eigen::Matrix<double, 3, 2> m;
    m.col(0) = b - a;
    m.col(1) = c - a;
    const Eigen::Vector2d uv = (m.transpose() * m).ldlt().solve(m.transpose() * (p - a));
    double out = plane;
    out += std::max(0.0, -uv[0]);
    out += std::max(0.0, -uv[1]);
    out += std::max(0.0, uv[0] + uv[1] - 1.0);
    return out;
}

TriangleMesh two_triangle_strip(double area_ratio) {
    // Triangle 0 has `area_ratio` times the area of triangle 1; they are far
    // apart along x so membership is unambiguous.
    TriangleMesh mesh;
    mesh.vertices.emplace_back(0, 0, 0);
    mesh.vertices.emplace_back(1, 0, 0);
    mesh.vertices.emplace_back(0, area_ratio * 2.0, 0);
    mesh.vertices.emplace_back(5, 0, 0);
    mesh.vertices.emplace_back(6, 0, 0);
    mesh.vertices.emplace_back(5, 2, 0);
    mesh.triangles.push_back({0, 1, 2});
    mesh.triangles.push_back({3, 4, 5});
    return mesh;
}

}  // namespace

TEST_CASE("ascii ply with three points loads as written") {
    TempDir dir;
    const fs::path file = dir.path / "three.ply";
    std::ofstream(file) << "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
                           "property float y\nproperty float z\nend_header\n"
                           "0 0 0\n1.5 -2 0.25\n3 3 3\n";
    const PointCloud cloud = load_cloud(file);
    REQUIRE(cloud.size() == 3);
    CHECK(cloud.points[1] == Point3(1.5, -2.0, 0.25));
}

TEST_CASE("malformed coordinate line reports its line number") {
    TempDir dir;
    const fs::path file = dir.path / "bad.ply";
    std::ofstream(file) << "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n"
                           "property float y\nproperty float z\nend_header\n"
                           "0 0 0\n1.0 2.0\n";
    try {
        load_cloud(file);
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ParseError);
        CHECK(std::string(e.what()).find(":9:") != std::string::npos);
    }
}

TEST_CASE("missing file raises IoError") {
    CHECK_THROWS_AS(load_cloud("/nonexistent/nowhere.ply"), Error);
}

TEST_CASE("save/load round trip preserves 10k random points at format precision") {
    TempDir dir;
    Rng rng(1234);
    PointCloud cloud;
    for (int i = 0; i < 10000; ++i)
        cloud.points.emplace_back(uniform(rng, -10, 10), uniform(rng, -10, 10),
                                  uniform(rng, -10, 10));

    for (const char* name : {"cloud.ply", "cloud.pcd"}) {
        const fs::path file = dir.path / name;
        save_cloud(cloud, file);
        const PointCloud loaded = load_cloud(file);
        REQUIRE(loaded.size() == cloud.size());
        for (std::size_t i = 0; i < cloud.size(); ++i)
            for (int axis = 0; axis < 3; ++axis)
                CHECK(loaded.points[i][axis] == to_float32(cloud.points[i][axis]));

        // a second round trip is bit-stable
        const fs::path file2 = dir.path / (std::string("again_") + name);
        save_cloud(loaded, file2);
        const PointCloud loaded2 = load_cloud(file2);
        for (std::size_t i = 0; i < cloud.size(); ++i)
            CHECK(loaded2.points[i] == loaded.points[i]);
    }
}

TEST_CASE("mesh ply round trip keeps faces and vertices") {
    TempDir dir;
    const TriangleMesh mesh = two_triangle_strip(3.0);
    const fs::path file = dir.path / "mesh.ply";
    save_mesh(mesh, file);
    const TriangleMesh loaded = load_mesh(file);
    REQUIRE(loaded.vertices.size() == mesh.vertices.size());
    REQUIRE(loaded.triangles.size() == mesh.triangles.size());
    CHECK(loaded.triangles == mesh.triangles);
    CHECK(loaded.total_area() == doctest::Approx(mesh.total_area()));
}

TEST_CASE("sampling a single triangle keeps all points on it") {
    TriangleMesh mesh;
    mesh.vertices.emplace_back(0, 0, 0);
    mesh.vertices.emplace_back(2, 0, 1);
    mesh.vertices.emplace_back(0, 1, 1);
    mesh.triangles.push_back({0, 1, 2});
    const PointCloud cloud = sample_mesh(mesh, {10, 5});
    REQUIRE(cloud.size() == 10);
    for (const auto& p : cloud.points)
        CHECK(on_triangle_residual(p, mesh.vertices[0], mesh.vertices[1], mesh.vertices[2]) <
              1e-9);
}

TEST_CASE("zero-area mesh is rejected") {
    TriangleMesh mesh;
    mesh.vertices.emplace_back(0, 0, 0);
    mesh.vertices.emplace_back(1, 1, 1);
    mesh.vertices.emplace_back(2, 2, 2);
    mesh.triangles.push_back({0, 1, 2});
    try {
        sample_mesh(mesh, {10, 0});
        FAIL("expected DegenerateMesh");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateMesh);
    }
}

TEST_CASE("3:1 area ratio shows up in per-triangle counts within 3 sigma") {
    const TriangleMesh mesh = two_triangle_strip(3.0);
    const PointCloud cloud = sample_mesh(mesh, {40000, 77});
    std::size_t first = 0;
    for (const auto& p : cloud.points)
        if (p.x() < 4.0) ++first;
    // multinomial: n=40000, p=0.75 -> sigma = sqrt(n p (1-p)) ~ 86.6
    const double sigma = std::sqrt(40000.0 * 0.75 * 0.25);
    CHECK(std::abs(static_cast<double>(first) - 30000.0) <= 3.0 * sigma);
}

TEST_CASE("unit square sampled 16000 times has mean near the center") {
    TriangleMesh mesh;
    mesh.vertices.emplace_back(0, 0, 0);
    mesh.vertices.emplace_back(1, 0, 0);
    mesh.vertices.emplace_back(1, 1, 0);
    mesh.vertices.emplace_back(0, 1, 0);
    mesh.triangles.push_back({0, 1, 2});
    mesh.triangles.push_back({0, 2, 3});
    const PointCloud cloud = sample_mesh(mesh, {16000, 3});
    const Point3 mean = cloud.centroid();
    CHECK(std::abs(mean.x() - 0.5) < 0.01);
    CHECK(std::abs(mean.y() - 0.5) < 0.01);
    CHECK(mean.z() == 0.0);
}

TEST_CASE("same mesh and seed give a bitwise-identical cloud") {
    const TriangleMesh mesh = two_triangle_strip(2.0);
    const PointCloud a = sample_mesh(mesh, {5000, 99});
    const PointCloud b = sample_mesh(mesh, {5000, 99});
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.points[i] == b.points[i]);
    const PointCloud c = sample_mesh(mesh, {5000, 100});
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.points[i] != c.points[i]) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("area-weighted density passes a chi-square test over 10 seeds") {
    // 12 disjoint triangles with spread-out areas, each in its own x-sector
    // so samples attribute unambiguously.
    TriangleMesh mesh;
    for (std::uint32_t i = 0; i < 12; ++i) {
        const double x0 = 3.0 * i;
        mesh.vertices.emplace_back(x0, 0.0, 0.0);
        mesh.vertices.emplace_back(x0 + 1.0 + 0.12 * i, 0.0, 0.0);
        mesh.vertices.emplace_back(x0, 1.0 + 0.2 * i, 0.0);
        mesh.triangles.push_back({3 * i, 3 * i + 1, 3 * i + 2});
    }
    std::vector<double> areas;
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
        areas.push_back(mesh.triangle_area(i));
        total += areas.back();
    }

    const boost::math::chi_squared chi2(static_cast<double>(mesh.triangles.size() - 1));
    const int n = 24000;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const PointCloud cloud = sample_mesh(mesh, {n, seed});
        std::vector<double> counts(mesh.triangles.size(), 0.0);
        for (const auto& p : cloud.points) {
            const auto sector = static_cast<std::size_t>(p.x() / 3.0);
            REQUIRE(sector < counts.size());
            counts[sector] += 1.0;
        }
        double statistic = 0.0;
        for (std::size_t t = 0; t < counts.size(); ++t) {
            const double expected = n * areas[t] / total;
            statistic += (counts[t] - expected) * (counts[t] - expected) / expected;
        }
        const double p_value = 1.0 - boost::math::cdf(chi2, statistic);
        CHECK(p_value > 0.01);
    }
}

TEST_CASE("transform_mesh and merge_mesh behave") {
    TriangleMesh a = two_triangle_strip(1.0);
    const std::size_t verts = a.vertices.size();
    const std::size_t tris = a.triangles.size();
    RigidTransform t;
    t.translation = Eigen::Vector3d(0, 0, 5);
    merge_mesh(a, transform_mesh(t, a));
    REQUIRE(a.vertices.size() == 2 * verts);
    REQUIRE(a.triangles.size() == 2 * tris);
    CHECK(a.vertices[verts].z() == 5.0);
    CHECK(a.triangles[tris][0] == a.triangles[0][0] + verts);
}
