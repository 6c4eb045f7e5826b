#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hmdref/detect.hpp"
#include "hmdref/fourpcs.hpp"
#include "hmdref/icp.hpp"
#include "hmdref/scene_synth.hpp"

namespace hmdref {

enum class Algorithm { Icp, FourPcs, SlideBox };
std::string_view to_string(Algorithm a);
Algorithm algorithm_from_string(std::string_view name);

enum class CloudSize { Small, Big };  // 16,000 / 256,000 samples per scene

/// One smoothing arm of the sweep: disabled, or voxel-grid-dilation MLS with
/// the given search radius and voxel size.
struct MlsChoice {
    bool enabled = false;
    double search_radius = 0.05;
    double upsample_param = 0.05;
};

struct SweepSpec {
    Algorithm algorithm = Algorithm::Icp;
    CloudSize size = CloudSize::Small;
    std::vector<SceneSpec> scenes;

    // ICP grids
    std::vector<double> max_corr_dist{0.5};
    std::vector<int> max_iter{100};
    std::vector<MlsChoice> mls{{}};
    // 4PCS grids
    std::vector<double> delta{0.01};
    std::vector<double> overlap{0.5};
    // sliding-box grids
    std::vector<double> step_fraction{0.2};
    std::vector<double> keypoint_voxel{0.06};

    // Seed simulation and fixed pipeline knobs
    double guess_sigma_pos = 0.1;
    double guess_sigma_yaw = 20.0 * M_PI / 180.0;
    double crop_radius = 2.0;
    int model_samples = 2000;
    std::uint64_t model_rng_seed = 9001;
};

struct SweepRow {
    Algorithm algorithm = Algorithm::Icp;
    CloudSize size = CloudSize::Small;
    std::size_t scene_index = 0;
    // parameter values; unused ones stay NaN / -1
    double max_corr_dist = std::numeric_limits<double>::quiet_NaN();
    int max_iter = -1;
    std::optional<MlsChoice> mls;
    double delta = std::numeric_limits<double>::quiet_NaN();
    double overlap = std::numeric_limits<double>::quiet_NaN();
    double step_fraction = std::numeric_limits<double>::quiet_NaN();
    double keypoint_voxel = std::numeric_limits<double>::quiet_NaN();

    double rms_mm = std::numeric_limits<double>::quiet_NaN();  // paper metric vs the raw crop
    double translation_error_mm = std::numeric_limits<double>::quiet_NaN();
    double rotation_error_deg = std::numeric_limits<double>::quiet_NaN();
    bool converged = false;
    double wall_time_ms = 0.0;
    std::string error;  // empty on clean rows
};

struct Stats {
    std::size_t count = 0;
    double min = 0.0, max = 0.0, mean = 0.0, stddev = 0.0;
};
Stats compute_stats(const std::vector<double>& values);

struct SweepResult {
    std::vector<SweepRow> rows;
    Stats summary;               // over converged rows' rms
    std::size_t failed_rows = 0;
};

SweepResult run_sweep(const SweepSpec& spec);

/// Deterministic CSV (timing column off by default so reruns are
/// byte-identical).
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path,
                     bool include_timing = false);
void write_summary_csv(const SweepResult& result, const std::filesystem::path& path);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

struct RobustnessEntry {
    double yaw_offset = 0.0;                           // radians, rotation sweep
    Eigen::Vector3d translation_offset = Eigen::Vector3d::Zero();
    double guess_rms_mm = 0.0;    // before refinement
    double rms_mm = 0.0;          // after refinement
    double translation_error_mm = 0.0;
    double rotation_error_deg = 0.0;
    bool converged = false;
    bool success = false;  // pose within the configured thresholds
};

struct RobustnessReport {
    std::vector<RobustnessEntry> rotation;
    std::vector<RobustnessEntry> translation;
    Stats rotation_stats;     // rms of converged rotation entries
    Stats translation_stats;  // rms of converged translation entries
    Stats guess_stats;        // rms of the raw perturbed guesses (all entries)
};

struct SuccessThresholds {
    double translation_mm = 10.0;
    double rotation_deg = 2.0;
};

RobustnessReport run_robustness(const PointCloud& scene, const RigidTransform& truth,
                                const PerturbationGrid& grid, const IcpConfig& icp_cfg,
                                const PointCloud& model, double crop_radius = 2.0,
                                const SuccessThresholds& thresholds = {});

void write_rotation_csv(const RobustnessReport& report, const std::filesystem::path& path);
void write_translation_csv(const RobustnessReport& report, const std::filesystem::path& path);

}  // namespace hmdref
