#include "hmdref/scene_synth.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hmdref/rng.hpp"

namespace hmdref {

namespace {

using nlohmann::json;

void add_quad(TriangleMesh& mesh, std::uint32_t a, std::uint32_t b, std::uint32_t c,
              std::uint32_t d) {
    mesh.triangles.push_back({a, b, c});
    mesh.triangles.push_back({a, c, d});
}

RigidTransform make_pose(const Point3& position, double yaw, double pitch = 0.0) {
    RigidTransform t;
    t.rotation = (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
                  Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()))
                     .toRotationMatrix();
    t.translation = position;
    return t;
}

}  // namespace

TriangleMesh make_box(const Eigen::Vector3d& dim) {
    TriangleMesh mesh;
    const double hx = dim.x() / 2.0;
    const double hy = dim.y() / 2.0;
    for (int corner = 0; corner < 8; ++corner) {
        mesh.vertices.emplace_back((corner & 1) ? hx : -hx, (corner & 2) ? hy : -hy,
                                   (corner & 4) ? dim.z() : 0.0);
    }
    add_quad(mesh, 0, 2, 3, 1);  // bottom
    add_quad(mesh, 4, 5, 7, 6);  // top
    add_quad(mesh, 0, 1, 5, 4);  // -y
    add_quad(mesh, 2, 6, 7, 3);  // +y
    add_quad(mesh, 0, 4, 6, 2);  // -x
    add_quad(mesh, 1, 3, 7, 5);  // +x
    return mesh;
}

TriangleMesh make_plane(double width, double depth) {
    TriangleMesh mesh;
    const double hw = width / 2.0;
    const double hd = depth / 2.0;
    mesh.vertices.emplace_back(-hw, -hd, 0.0);
    mesh.vertices.emplace_back(hw, -hd, 0.0);
    mesh.vertices.emplace_back(hw, hd, 0.0);
    mesh.vertices.emplace_back(-hw, hd, 0.0);
    add_quad(mesh, 0, 1, 2, 3);
    return mesh;
}

TriangleMesh make_cylinder(double radius, double height, int segments) {
    TriangleMesh mesh;
    for (int i = 0; i < segments; ++i) {
        const double angle = 2.0 * M_PI * static_cast<double>(i) / segments;
        const double x = radius * std::cos(angle);
        const double y = radius * std::sin(angle);
        mesh.vertices.emplace_back(x, y, 0.0);
        mesh.vertices.emplace_back(x, y, height);
    }
    const auto bottom_center = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.emplace_back(0.0, 0.0, 0.0);
    const auto top_center = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.emplace_back(0.0, 0.0, height);
    for (int i = 0; i < segments; ++i) {
        const auto b0 = static_cast<std::uint32_t>(2 * i);
        const auto t0 = b0 + 1;
        const auto b1 = static_cast<std::uint32_t>(2 * ((i + 1) % segments));
        const auto t1 = b1 + 1;
        mesh.triangles.push_back({b0, b1, t1});
        mesh.triangles.push_back({b0, t1, t0});
        mesh.triangles.push_back({bottom_center, b1, b0});
        mesh.triangles.push_back({top_center, t0, t1});
    }
    return mesh;
}

TriangleMesh make_robot_mesh() {
    TriangleMesh robot;

    auto attach = [&robot](const TriangleMesh& part, const RigidTransform& pose) {
        merge_mesh(robot, transform_mesh(pose, part));
    };

    // Base plate and turret column.
    attach(make_box({0.45, 0.45, 0.12}), RigidTransform::identity());
    attach(make_cylinder(0.14, 0.42, 28), make_pose({0.0, 0.0, 0.12}, 0.0));
    // Shoulder, nudged sideways so the silhouette breaks mirror symmetry.
    attach(make_box({0.24, 0.28, 0.22}), make_pose({0.02, 0.05, 0.54}, 0.0));
    // Upper arm leaning forward.
    attach(make_box({0.16, 0.15, 0.46}), make_pose({0.10, 0.05, 0.74}, 0.0, 0.5));
    // Elbow block and forearm reaching out along +x.
    attach(make_box({0.18, 0.17, 0.16}), make_pose({0.30, 0.05, 1.10}, 0.0, 0.9));
    attach(make_box({0.42, 0.12, 0.12}), make_pose({0.38, 0.03, 1.14}, 0.0, 1.45));
    // Wrist cylinder pointing down toward the work area.
    attach(make_cylinder(0.05, 0.22, 20), make_pose({0.80, 0.03, 0.98}, 0.0, M_PI));
    // Counterweight at the back.
    attach(make_box({0.20, 0.18, 0.14}), make_pose({-0.22, 0.0, 0.62}, 0.0));
    return robot;
}

std::pair<PointCloud, RigidTransform> synthesize_scene(const SceneSpec& spec) {
    if (spec.noise_sigma < 0.0)
        throw Error(ErrorCode::InvalidArgument, "noise_sigma must be >= 0");
    TriangleMesh merged;
    const TriangleMesh robot = spec.robot_mesh.vertices.empty() ? make_robot_mesh() : spec.robot_mesh;
    merge_mesh(merged, transform_mesh(spec.robot_pose, robot));
    for (const auto& item : spec.clutter) {
        TriangleMesh part;
        switch (item.type) {
            case PrimitiveType::Box: part = make_box(item.dimensions); break;
            case PrimitiveType::Plane: part = make_plane(item.dimensions.x(), item.dimensions.y()); break;
            case PrimitiveType::Cylinder:
                part = make_cylinder(item.dimensions.x(), item.dimensions.y());
                break;
        }
        merge_mesh(merged, transform_mesh(item.pose, part));
    }

    PointCloud cloud = sample_mesh(merged, {spec.samples_total, spec.rng_seed});
    if (spec.noise_sigma > 0.0) {
        Rng noise_rng(mix_seed(spec.rng_seed, 0x6e6f697365ULL));  // independent stream
        for (auto& p : cloud.points) {
            p.x() += spec.noise_sigma * gaussian(noise_rng);
            p.y() += spec.noise_sigma * gaussian(noise_rng);
            p.z() += spec.noise_sigma * gaussian(noise_rng);
        }
    }
    return {std::move(cloud), spec.robot_pose};
}

SeedSweeps perturb_seed(const RigidTransform& truth, const PerturbationGrid& grid) {
    if (grid.rotation_step <= 0.0 || grid.translation_step <= 0.0 ||
        grid.translation_extent < grid.translation_step)
        throw Error(ErrorCode::InvalidArgument, "perturbation grid out of range");

    SeedSweeps sweeps;
    const double truth_yaw = truth.yaw();
    const Point3 truth_pos = truth.translation;

    const int yaw_count = static_cast<int>(std::lround(2.0 * M_PI / grid.rotation_step));
    sweeps.rotations.reserve(static_cast<std::size_t>(yaw_count));
    for (int k = 0; k < yaw_count; ++k)
        sweeps.rotations.push_back(
            {truth_pos, normalize_angle(truth_yaw + static_cast<double>(k) * grid.rotation_step)});

    const int per_axis =
        static_cast<int>(std::lround(grid.translation_extent / grid.translation_step)) + 1;
    const double half = grid.translation_extent / 2.0;
    sweeps.translations.reserve(static_cast<std::size_t>(per_axis) * per_axis * per_axis);
    for (int kz = 0; kz < per_axis; ++kz)
        for (int ky = 0; ky < per_axis; ++ky)
            for (int kx = 0; kx < per_axis; ++kx) {
                const Point3 offset(-half + kx * grid.translation_step,
                                    -half + ky * grid.translation_step,
                                    -half + kz * grid.translation_step);
                sweeps.translations.push_back({truth_pos + offset, truth_yaw});
            }
    return sweeps;
}

SeedPose simulate_user_guess(const RigidTransform& truth, double sigma_pos, double sigma_yaw,
                             std::uint64_t rng_seed) {
    if (sigma_pos < 0.0 || sigma_yaw < 0.0)
        throw Error(ErrorCode::InvalidArgument, "guess sigmas must be >= 0");
    Rng rng(rng_seed);
    SeedPose seed;
    seed.position = truth.translation +
                    sigma_pos * Eigen::Vector3d(gaussian(rng), gaussian(rng), gaussian(rng));
    seed.yaw = normalize_angle(truth.yaw() + sigma_yaw * gaussian(rng));
    return seed;
}

namespace {

json pose_to_json(const RigidTransform& pose) {
    return json{{"position", {pose.translation.x(), pose.translation.y(), pose.translation.z()}},
                {"yaw", pose.yaw()}};
}

RigidTransform pose_from_json(const json& j) {
    const auto& pos = j.at("position");
    return RigidTransform::from_yaw(j.value("yaw", 0.0),
                                    Point3(pos.at(0).get<double>(), pos.at(1).get<double>(),
                                           pos.at(2).get<double>()));
}

std::string primitive_name(PrimitiveType type) {
    switch (type) {
        case PrimitiveType::Box: return "box";
        case PrimitiveType::Plane: return "plane";
        case PrimitiveType::Cylinder: return "cylinder";
    }
    return "box";
}

PrimitiveType primitive_from_name(const std::string& name) {
    if (name == "box") return PrimitiveType::Box;
    if (name == "plane") return PrimitiveType::Plane;
    if (name == "cylinder") return PrimitiveType::Cylinder;
    throw Error(ErrorCode::ParseError, "unknown primitive type '" + name + "'");
}

}  // namespace

SceneSpec load_scene_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
    try {
        SceneSpec spec;
        if (j.contains("robot")) {
            const auto& robot = j.at("robot");
            const std::string mesh = robot.value("mesh", "builtin");
            if (mesh != "builtin") spec.robot_mesh = load_mesh(path.parent_path() / mesh);
            spec.robot_pose = pose_from_json(robot);
        }
        for (const auto& item : j.value("clutter", json::array())) {
            ClutterItem clutter;
            clutter.type = primitive_from_name(item.at("type").get<std::string>());
            const auto& dim = item.at("dimensions");
            clutter.dimensions = Eigen::Vector3d(dim.at(0).get<double>(), dim.at(1).get<double>(),
                                                 dim.size() > 2 ? dim.at(2).get<double>() : 0.0);
            clutter.pose = pose_from_json(item);
            spec.clutter.push_back(clutter);
        }
        spec.noise_sigma = j.value("noise_sigma", 0.005);
        spec.samples_total = j.value("samples_total", 16000);
        spec.rng_seed = j.value("rng_seed", std::uint64_t{0});
        return spec;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

void save_scene_spec(const SceneSpec& spec, const std::filesystem::path& path) {
    json j;
    j["robot"] = pose_to_json(spec.robot_pose);
    j["robot"]["mesh"] = "builtin";  // external meshes travel as separate files
    j["clutter"] = json::array();
    for (const auto& item : spec.clutter) {
        json c = pose_to_json(item.pose);
        c["type"] = primitive_name(item.type);
        c["dimensions"] = {item.dimensions.x(), item.dimensions.y(), item.dimensions.z()};
        j["clutter"].push_back(c);
    }
    j["noise_sigma"] = spec.noise_sigma;
    j["samples_total"] = spec.samples_total;
    j["rng_seed"] = spec.rng_seed;
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace hmdref
