#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "raypose/geom.hpp"

namespace raypose::eval {

using geom::CameraIntrinsics;
using geom::ObjectModel;
using geom::Pose;
using geom::Rotation;

// Mean over model points of the distance between the two transformed point
// sets, meters. Throws EmptyModel.
double add(const Pose& pred, const Pose& gt, const ObjectModel& model);

// min over the symmetry group g of add(pred composed with g, gt, model);
// equals add for identity-only groups.
double add_s(const Pose& pred, const Pose& gt, const ObjectModel& model);

// Share of entries strictly below fraction * diameter. Throws EmptySequence.
double recall_at(const std::vector<double>& distances, double diameter, double fraction = 0.1);

// Symmetry-reduced geodesic rotation error, radians.
double reduced_rotation_error(const Rotation& pred, const Rotation& gt,
                              const std::vector<Rotation>& symmetry);

struct SwitchParams {
    double enter_deg = 90.0;
    double exit_deg = 45.0;
};

// Hysteresis counter: a switch is an upward crossing of enter_deg by the
// symmetry-reduced error after the error was last below exit_deg.
long switch_count(const std::vector<Rotation>& preds, const std::vector<Rotation>& gts,
                  const std::vector<Rotation>& symmetry, const SwitchParams& params = {});

// True when the projected centers agree within tol pixels (inclusive); a
// center behind the camera counts as a miss.
bool proj_ok(const Pose& pred, const Pose& gt, const CameraIntrinsics& k, double tol_px = 5.0);

// Share of frames passing proj_ok. Throws GeometryMismatch on length mismatch.
double proj_at(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
               const CameraIntrinsics& k, double tol_px = 5.0);

struct Stats {
    double mean = 0.0;
    double stdev = 0.0;  // population
};

struct BinMetrics {
    long frames = 0;
    double add_recall = 0.0;   // recall@0.1d over ADD
    double adds_recall = 0.0;  // recall@0.1d over ADD-S
    Stats e_p_cm;              // 100 * ||t_pred - t_gt||
    Stats e_r_deg;             // symmetry-reduced geodesic error
    long switches = 0;
    double proj5 = 0.0;
};

struct MetricsReport {
    long frames = 0;
    long lost = 0;
    BinMetrics overall;
    // Present bins only, in Regular/Medium/Faster order; empty bins are absent.
    std::vector<std::pair<std::string, BinMetrics>> bins;
    double fps = 0.0;
    bool has_fps = false;
};

struct AggregateOptions {
    double recall_fraction = 0.1;
    double proj_tol_px = 5.0;
    SwitchParams switch_params;
};

// bins and lost may be empty (then every frame is unbinned / tracked); any
// non-empty input must match preds in length, else GeometryMismatch. Switches
// are counted once over the whole sequence and attributed to the bin of the
// frame where the crossing happens.
MetricsReport aggregate(const std::vector<Pose>& preds, const std::vector<Pose>& gts,
                        const std::vector<std::string>& bins, const std::vector<uint8_t>& lost,
                        const ObjectModel& model, const CameraIntrinsics& left_eye,
                        const AggregateOptions& options = {});

std::string report_json(const MetricsReport& report);
std::string report_csv(const MetricsReport& report);  // flat bin,metric,mean,stdev

// Writes report.json and report.csv into dir (created if missing).
void write_report(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace raypose::eval
