#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "raypose/eval.hpp"
#include "raypose/io.hpp"
#include "raypose/m3d.hpp"
#include "raypose/rpf.hpp"
#include "raypose/sim.hpp"
#include "raypose/vision.hpp"

namespace raypose::pipeline {

struct RunConfig {
    std::filesystem::path dataset;
    std::filesystem::path out;
    std::string left_modality = "rgb";  // rgb | event
    std::string right_modality = "rgb";
    int amq_n = 4;
    double amq_alpha = 0.5;
    m3d::ConsistencyParams consistency;
    double eps_static = 0.5;  // px, static-cluster gate
    double eps_disp = 0.5;    // px, minimum stereo disparity
    int grid_step = 24;
    double min_gradient = 0.04;
    int roi_step = 4;        // fine seeding grid inside the predicted object box
    double roi_scale = 1.6;  // inflation of the projected model bounding box
    double fb_tol = 0.5;     // px, forward-backward track agreement
    int lk_levels = 3;
    vision::LkParams lk;
    rpf::SamplerConfig sampler;  // beta == 0 falls back to the model diameter
    rpf::ScorerConfig scorer;
    int refine_iterations = 8;
    double obs_radius_scale = 0.75;  // of the projected object diameter
    int min_obs = 8;  // per eye; sparser frames only update via bound tracks
    uint64_t seed = 1;
    bool dump_debug = false;

    void validate() const;
};

// Applies "run.*", "amq.*", "m3d.*", "lk.*", "rpf.*" keys onto cfg, recording
// consumed keys in `used` (callers combine with reject_unknown_keys).
void apply_run_keys(const io::KeyValues& kv, RunConfig& cfg, std::vector<std::string>& used);

// Defaults when config_path is empty; otherwise parses the file and rejects
// unknown keys.
RunConfig load_run_config(const std::filesystem::path& config_path);

// Scene description from "scene.*", "rig.*", "model.*", "spin.*",
// "pendulum.*", "perturb.*" keys; same strictness contract.
void apply_scene_keys(const io::KeyValues& kv, sim::SceneConfig& cfg,
                      std::vector<std::string>& used);
sim::SceneConfig load_scene_config(const std::filesystem::path& config_path);

struct TrackResult {
    long frames = 0;
    long lost = 0;
    double wall_seconds = 0.0;  // whole frame loop, reads and writes included
    std::map<std::string, double> stage_ms;  // summed per stage over the run

    double fps() const { return wall_seconds > 0.0 ? frames / wall_seconds : 0.0; }
};

// The per-frame loop: vision features -> m3d center -> amq pivot -> rpf
// sample/score/select/refine. Frame 0 is initialized from the dataset GT pose
// and enqueued. A frame where any tracking stage throws a TrackError is
// marked lost: the previous pose is carried forward and the queue is not
// updated. Writes poses_pred.txt, status.csv and timing.csv (wall-clock, the
// only non-deterministic output) into cfg.out.
TrackResult run_track(const RunConfig& cfg);

// Joins a trace with its dataset and writes report.json / report.csv into
// out_dir. Frame-count mismatch throws GeometryMismatch (CLI exit 3).
eval::MetricsReport run_eval(const std::filesystem::path& dataset,
                             const std::filesystem::path& trace,
                             const std::filesystem::path& out_dir);

// Empty string when the report satisfies its invariants, otherwise a
// description of the first violation (CLI exit 4).
std::string report_invariant_violation(const eval::MetricsReport& report);

// Runs track + eval once per axis setting (amq_n: N in 0..4; distribution:
// uniform/gaussian/laplace/beta) under out_dir/<axis>_<setting>/ and writes
// one comparison row per setting to out_dir/ablation_<axis>.csv.
std::filesystem::path run_ablate(const RunConfig& base, const std::string& axis,
                                 const std::filesystem::path& out_dir);

}  // namespace raypose::pipeline
