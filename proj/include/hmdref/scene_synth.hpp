#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "hmdref/cloud_io.hpp"
#include "hmdref/geometry.hpp"
#include "hmdref/icp.hpp"

namespace hmdref {

// Primitive builders. Boxes and cylinders rest on z=0 and extend upward;
// planes span z=0. All are closed triangle meshes.
TriangleMesh make_box(const Eigen::Vector3d& dimensions);
TriangleMesh make_plane(double width, double depth);
TriangleMesh make_cylinder(double radius, double height, int segments = 24);

/// Bundled six-link manipulator in a fixed configuration, base origin at
/// (0,0,0), forward along +x. Deliberately asymmetric so headings are
/// unambiguous.
TriangleMesh make_robot_mesh();

enum class PrimitiveType { Box, Plane, Cylinder };

struct ClutterItem {
    PrimitiveType type = PrimitiveType::Box;
    RigidTransform pose;
    Eigen::Vector3d dimensions = Eigen::Vector3d::Ones();  // box: dx dy dz; plane: w d -; cylinder: r h -
};

struct SceneSpec {
    TriangleMesh robot_mesh;  // empty vertices means "use make_robot_mesh()"
    RigidTransform robot_pose;
    std::vector<ClutterItem> clutter;
    double noise_sigma = 0.005;  // meters, isotropic Gaussian
    int samples_total = 16000;
    std::uint64_t rng_seed = 0;
};

/// Merges posed robot and clutter surfaces, area-samples, adds noise.
/// Returns the scene cloud and the ground-truth robot pose.
std::pair<PointCloud, RigidTransform> synthesize_scene(const SceneSpec& spec);

struct PerturbationGrid {
    double rotation_step = M_PI / 10.0;  // 18 degrees
    double translation_extent = 1.0;     // meters, centered cube
    double translation_step = 0.1;
};

struct SeedSweeps {
    std::vector<SeedPose> rotations;     // yaw offsets k * rotation_step, k = 0..n-1
    std::vector<SeedPose> translations;  // centered grid at the truth yaw
};

SeedSweeps perturb_seed(const RigidTransform& truth, const PerturbationGrid& grid);

/// Truth pose corrupted by Gaussian position and yaw noise.
SeedPose simulate_user_guess(const RigidTransform& truth, double sigma_pos, double sigma_yaw,
                             std::uint64_t rng_seed);

// Declarative scene-spec files (JSON; schema in the README).
SceneSpec load_scene_spec(const std::filesystem::path& path);
void save_scene_spec(const SceneSpec& spec, const std::filesystem::path& path);

}  // namespace hmdref
