#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hmdref/geometry.hpp"

namespace hmdref {

/// Indexed triangle mesh. Vertices in meters.
struct TriangleMesh {
    std::vector<Point3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;

    double triangle_area(std::size_t i) const;
    double total_area() const;
};

struct SamplingConfig {
    int sample_count = 16000;
    std::uint64_t rng_seed = 0;
};

/// Quantizes to float32, the stored precision of the cloud formats. The asm
/// barrier stops the optimizer from folding the narrowing away (seen with
/// gcc 11 -O3 auto-vectorization).
inline double to_float32(double v) {
    float f = static_cast<float>(v);
#if defined(__GNUC__) || defined(__clang__)
    asm("" : "+x"(f));
#endif
    return static_cast<double>(f);
}

/// Loads an ASCII PLY or PCD cloud, dispatching on the file extension.
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

TriangleMesh load_mesh(const std::filesystem::path& path);
void save_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Area-weighted uniform surface sampling, deterministic per seed.
PointCloud sample_mesh(const TriangleMesh& mesh, const SamplingConfig& cfg);

/// Applies a rigid transform to every vertex.
TriangleMesh transform_mesh(const RigidTransform& t, const TriangleMesh& mesh);

/// Appends `extra` to `base`, reindexing triangles.
void merge_mesh(TriangleMesh& base, const TriangleMesh& extra);

}  // namespace hmdref
