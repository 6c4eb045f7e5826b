#include "hmdref/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hmdref/preprocess.hpp"
#include "hmdref/rng.hpp"

namespace hmdref {

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

double pose_translation_error_mm(const RigidTransform& est, const RigidTransform& truth) {
    return (est.translation - truth.translation).norm() * 1000.0;
}

double pose_rotation_error_deg(const RigidTransform& est, const RigidTransform& truth) {
    return rotation_angle_between(est, truth) * 180.0 / M_PI;
}

}  // namespace

std::string_view to_string(Algorithm a) {
    switch (a) {
        case Algorithm::Icp: return "icp";
        case Algorithm::FourPcs: return "4pcs";
        case Algorithm::SlideBox: return "slidebox";
    }
    return "icp";
}

Algorithm algorithm_from_string(std::string_view name) {
    if (name == "icp") return Algorithm::Icp;
    if (name == "4pcs" || name == "fourpcs") return Algorithm::FourPcs;
    if (name == "slidebox") return Algorithm::SlideBox;
    throw Error(ErrorCode::InvalidArgument, "unknown algorithm '" + std::string(name) + "'");
}

Stats compute_stats(const std::vector<double>& values) {
    Stats s;
    s.count = values.size();
    if (values.empty()) return s;
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = values.size() > 1 ? std::sqrt(sq / static_cast<double>(values.size() - 1)) : 0.0;
    return s;
}

SweepResult run_sweep(const SweepSpec& spec) {
    if (spec.scenes.empty()) throw Error(ErrorCode::InvalidArgument, "sweep needs scenes");
    const TriangleMesh robot = make_robot_mesh();
    const PointCloud model = sample_mesh(robot, {spec.model_samples, spec.model_rng_seed});

    SweepResult result;
    for (std::size_t scene_idx = 0; scene_idx < spec.scenes.size(); ++scene_idx) {
        SceneSpec scene_spec = spec.scenes[scene_idx];
        scene_spec.samples_total = spec.size == CloudSize::Small ? 16000 : 256000;
        const auto [scene, truth] = synthesize_scene(scene_spec);
        const SeedPose guess = simulate_user_guess(
            truth, spec.guess_sigma_pos, spec.guess_sigma_yaw,
            mix_seed(scene_spec.rng_seed, 0x67756573ULL + scene_idx));

        const PointCloud crop = sphere_crop(scene, {guess.position, spec.crop_radius});

        auto finish_row = [&](SweepRow& row, const RigidTransform& transform, bool converged) {
            if (crop.empty()) return;
            const KdTree crop_tree(crop);
            row.rms_mm = rms_closest_point_mm(model, crop_tree, transform);
            row.translation_error_mm = pose_translation_error_mm(transform, truth);
            row.rotation_error_deg = pose_rotation_error_deg(transform, truth);
            row.converged = converged;
        };

        switch (spec.algorithm) {
            case Algorithm::Icp: {
                for (const MlsChoice& mls : spec.mls) {
                    PointCloud conditioned = crop;
                    std::string mls_error;
                    if (mls.enabled && !crop.empty()) {
                        MlsConfig mls_cfg;
                        mls_cfg.search_radius = mls.search_radius;
                        mls_cfg.upsampling = MlsUpsampling::VoxelGridDilation;
                        mls_cfg.upsample_param = mls.upsample_param;
                        try {
                            conditioned = mls_smooth(crop, mls_cfg);
                        } catch (const Error& e) {
                            // Smoothing failures degrade to the raw crop so the
                            // row still produces a comparable rms.
                            mls_error = std::string(to_string(e.code())) + "(mls)";
                            conditioned = crop;
                        }
                    }
                    for (double dist : spec.max_corr_dist) {
                        for (int iters : spec.max_iter) {
                            SweepRow row;
                            row.algorithm = spec.algorithm;
                            row.size = spec.size;
                            row.scene_index = scene_idx;
                            row.max_corr_dist = dist;
                            row.max_iter = iters;
                            row.mls = mls;
                            row.error = mls_error;
                            const double t0 = now_ms();
                            try {
                                IcpConfig cfg;
                                cfg.max_correspondence_distance = dist;
                                cfg.max_iterations = iters;
                                const RegistrationResult reg = register_icp(
                                    model, conditioned, seed_to_transform(guess), cfg);
                                finish_row(row, reg.transform, reg.converged);
                            } catch (const Error& e) {
                                row.error = to_string(e.code());
                            }
                            row.wall_time_ms = now_ms() - t0;
                            result.rows.push_back(std::move(row));
                        }
                    }
                }
                break;
            }
            case Algorithm::FourPcs: {
                for (double delta : spec.delta) {
                    for (double overlap : spec.overlap) {
                        SweepRow row;
                        row.algorithm = spec.algorithm;
                        row.size = spec.size;
                        row.scene_index = scene_idx;
                        row.delta = delta;
                        row.overlap = overlap;
                        const double t0 = now_ms();
                        try {
                            FourPcsConfig cfg;
                            cfg.delta = delta;
                            cfg.overlap_estimate = overlap;
                            cfg.rng_seed = scene_spec.rng_seed;
                            const RegistrationResult reg = segment_then_register(
                                scene, model, PlaneRemovalConfig{}, ClusterConfig{0.1, 50, SIZE_MAX},
                                cfg, IcpConfig{});
                            finish_row(row, reg.transform, reg.converged);
                        } catch (const Error& e) {
                            row.error = to_string(e.code());
                        }
                        row.wall_time_ms = now_ms() - t0;
                        result.rows.push_back(std::move(row));
                    }
                }
                break;
            }
            case Algorithm::SlideBox: {
                for (double step : spec.step_fraction) {
                    for (double voxel : spec.keypoint_voxel) {
                        SweepRow row;
                        row.algorithm = spec.algorithm;
                        row.size = spec.size;
                        row.scene_index = scene_idx;
                        row.step_fraction = step;
                        row.keypoint_voxel = voxel;
                        const double t0 = now_ms();
                        try {
                            DetectionConfig cfg;
                            cfg.step_fraction = step;
                            cfg.keypoint_voxel = voxel;
                            const DetectionResult det = detect_robot(scene, model, cfg, IcpConfig{});
                            finish_row(row, det.registration.transform, det.registration.converged);
                        } catch (const Error& e) {
                            row.error = to_string(e.code());
                        }
                        row.wall_time_ms = now_ms() - t0;
                        result.rows.push_back(std::move(row));
                    }
                }
                break;
            }
        }
    }

    std::vector<double> converged_rms;
    for (const auto& row : result.rows) {
        if (row.converged && !std::isnan(row.rms_mm)) converged_rms.push_back(row.rms_mm);
        else ++result.failed_rows;
    }
    result.summary = compute_stats(converged_rms);
    return result;
}

namespace {
const char* kSweepHeader =
    "algorithm,size,scene,max_corr_dist,max_iter,mls,mls_search_radius,mls_param,delta,overlap,"
    "step_fraction,keypoint_voxel,rms_mm,translation_error_mm,rotation_error_deg,converged,error";
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path,
                     bool include_timing) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << kSweepHeader;
    if (include_timing) out << ",wall_time_ms";
    out << '\n';
    for (const auto& row : rows) {
        out << to_string(row.algorithm) << ',' << (row.size == CloudSize::Small ? "small" : "big")
            << ',' << row.scene_index << ',' << fmt(row.max_corr_dist) << ','
            << (row.max_iter < 0 ? "" : std::to_string(row.max_iter)) << ','
            << (row.mls ? (row.mls->enabled ? "voxel_grid_dilation" : "none") : "") << ','
            << (row.mls && row.mls->enabled ? fmt(row.mls->search_radius) : "") << ','
            << (row.mls && row.mls->enabled ? fmt(row.mls->upsample_param) : "") << ','
            << fmt(row.delta) << ',' << fmt(row.overlap) << ',' << fmt(row.step_fraction) << ','
            << fmt(row.keypoint_voxel) << ',' << fmt(row.rms_mm) << ','
            << fmt(row.translation_error_mm) << ',' << fmt(row.rotation_error_deg) << ','
            << (row.converged ? 1 : 0) << ',' << row.error;
        if (include_timing) out << ',' << fmt(row.wall_time_ms);
        out << '\n';
    }
}

void write_summary_csv(const SweepResult& result, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "converged_rows,failed_rows,rms_min_mm,rms_max_mm,rms_mean_mm,rms_std_mm\n";
    out << result.summary.count << ',' << result.failed_rows << ',' << fmt(result.summary.min)
        << ',' << fmt(result.summary.max) << ',' << fmt(result.summary.mean) << ','
        << fmt(result.summary.stddev) << '\n';
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "missing CSV header");
    std::vector<SweepRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        cells.resize(18);
        SweepRow row;
        auto num = [&](const std::string& s) {
            return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
        };
        try {
            row.algorithm = algorithm_from_string(cells[0]);
            row.size = cells[1] == "big" ? CloudSize::Big : CloudSize::Small;
            row.scene_index = static_cast<std::size_t>(std::stoul(cells[2]));
            row.max_corr_dist = num(cells[3]);
            row.max_iter = cells[4].empty() ? -1 : std::stoi(cells[4]);
            if (!cells[5].empty()) {
                MlsChoice mls;
                mls.enabled = cells[5] == "voxel_grid_dilation";
                if (mls.enabled) {
                    mls.search_radius = num(cells[6]);
                    mls.upsample_param = num(cells[7]);
                }
                row.mls = mls;
            }
            row.delta = num(cells[8]);
            row.overlap = num(cells[9]);
            row.step_fraction = num(cells[10]);
            row.keypoint_voxel = num(cells[11]);
            row.rms_mm = num(cells[12]);
            row.translation_error_mm = num(cells[13]);
            row.rotation_error_deg = num(cells[14]);
            row.converged = cells[15] == "1";
            row.error = cells[16];
        } catch (const std::exception& e) {
            throw Error(ErrorCode::ParseError,
                        path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

RobustnessReport run_robustness(const PointCloud& scene, const RigidTransform& truth,
                                const PerturbationGrid& grid, const IcpConfig& icp_cfg,
                                const PointCloud& model, double crop_radius,
                                const SuccessThresholds& thresholds) {
    const SeedSweeps sweeps = perturb_seed(truth, grid);
    RobustnessReport report;

    auto evaluate = [&](const SeedPose& seed) {
        RobustnessEntry entry;
        const RigidTransform init = seed_to_transform(seed);
        const PointCloud crop = sphere_crop(scene, {seed.position, crop_radius});
        if (crop.empty()) {
            entry.guess_rms_mm = std::numeric_limits<double>::infinity();
            entry.rms_mm = std::numeric_limits<double>::infinity();
            return entry;
        }
        const KdTree crop_tree(crop);
        entry.guess_rms_mm = rms_closest_point_mm(model, crop_tree, init);
        try {
            const RegistrationResult reg = register_icp(model, crop_tree, init, icp_cfg);
            entry.rms_mm = rms_closest_point_mm(model, crop_tree, reg.transform);
            entry.converged = reg.converged;
            entry.translation_error_mm = pose_translation_error_mm(reg.transform, truth);
            entry.rotation_error_deg = pose_rotation_error_deg(reg.transform, truth);
            entry.success = entry.converged &&
                            entry.translation_error_mm <= thresholds.translation_mm &&
                            entry.rotation_error_deg <= thresholds.rotation_deg;
        } catch (const Error&) {
            entry.rms_mm = std::numeric_limits<double>::infinity();
        }
        return entry;
    };

    std::vector<double> guess_rms;
    std::vector<double> rot_rms, trans_rms;
    for (const SeedPose& seed : sweeps.rotations) {
        RobustnessEntry entry = evaluate(seed);
        entry.yaw_offset = normalize_angle(seed.yaw - truth.yaw());
        guess_rms.push_back(entry.guess_rms_mm);
        if (entry.converged) rot_rms.push_back(entry.rms_mm);
        report.rotation.push_back(entry);
    }
    for (const SeedPose& seed : sweeps.translations) {
        RobustnessEntry entry = evaluate(seed);
        entry.translation_offset = seed.position - truth.translation;
        guess_rms.push_back(entry.guess_rms_mm);
        if (entry.converged) trans_rms.push_back(entry.rms_mm);
        report.translation.push_back(entry);
    }
    report.rotation_stats = compute_stats(rot_rms);
    report.translation_stats = compute_stats(trans_rms);
    report.guess_stats = compute_stats(guess_rms);
    return report;
}

void write_rotation_csv(const RobustnessReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "yaw_offset_deg,guess_rms_mm,rms_mm,translation_error_mm,rotation_error_deg,"
           "converged,success\n";
    for (const auto& e : report.rotation) {
        out << fmt(e.yaw_offset * 180.0 / M_PI) << ',' << fmt(e.guess_rms_mm) << ','
            << fmt(e.rms_mm) << ',' << fmt(e.translation_error_mm) << ','
            << fmt(e.rotation_error_deg) << ',' << (e.converged ? 1 : 0) << ','
            << (e.success ? 1 : 0) << '\n';
    }
}

void write_translation_csv(const RobustnessReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << "dx_m,dy_m,dz_m,guess_rms_mm,rms_mm,translation_error_mm,rotation_error_deg,"
           "converged,success\n";
    for (const auto& e : report.translation) {
        out << fmt(e.translation_offset.x()) << ',' << fmt(e.translation_offset.y()) << ','
            << fmt(e.translation_offset.z()) << ',' << fmt(e.guess_rms_mm) << ',' << fmt(e.rms_mm)
            << ',' << fmt(e.translation_error_mm) << ',' << fmt(e.rotation_error_deg) << ','
            << (e.converged ? 1 : 0) << ',' << (e.success ? 1 : 0) << '\n';
    }
}

}  // namespace hmdref
