#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "raypose/geom.hpp"
#include "raypose/vision.hpp"

namespace raypose::sim {

using geom::ObjectModel;
using geom::Pose;
using geom::StereoRig;
using geom::Vec2;
using geom::Vec3;

enum class SceneKind { spin, pendulum, degraded };  // scenes a, b, c

SceneKind scene_from_name(const std::string& name);  // "a" | "b" | "c"
std::string scene_name(SceneKind kind);

enum class Eye { left, right };

// Scene a: fixed center, piecewise-constant axis schedule, linear angular
// velocity ramp from omega_start to omega_end over the sequence.
struct SpinParams {
    Vec3 center = Vec3(0.0, 0.0, 1.0);
    double omega_start = 0.8;  // rad/s
    double omega_end = 9.0;    // rad/s
    std::vector<Vec3> axes = {Vec3::UnitZ()};  // equal-length segments
};

// Scenes b, c: center = pivot + length*(sin th, -cos th, 0),
// th(t) = theta0 * cos(2*pi*frequency*t), rotation Rz(th) (aligned to the rod).
struct PendulumParams {
    Vec3 pivot = Vec3(0.0, 0.45, 1.2);
    double length = 0.4;      // meters
    double frequency = 0.5;   // Hz
    double theta0 = 0.6;      // rad
};

// Scene c observation degradations (applied to rendered frames, never to GT).
struct PerturbParams {
    double noise_sigma = 0.05;     // additive Gaussian, full frame
    double occlusion_frac = 0.25;  // max occluder area as fraction of object bbox
    double replace_frac = 0.05;    // fraction of object pixels replaced
};

struct SceneConfig {
    SceneKind kind = SceneKind::pendulum;
    double duration = 10.0;    // seconds
    double frame_rate = 30.0;  // Hz
    StereoRig rig;
    ObjectModel model;
    SpinParams spin;
    PendulumParams pendulum;
    PerturbParams perturb;
    double event_threshold = 0.15;  // log-intensity contrast
    double background_depth = 3.0;  // textured plane distance, meters
    uint64_t seed = 1;

    long frame_count() const { return std::lround(duration * frame_rate); }
    void validate() const;
};

// 640x480, f = 500 px, principal point centered, baseline 0.1 m.
StereoRig default_rig();

// Cube surface sampled at points_per_edge per axis (corners, edge and face
// interiors), with the 24-element rotation symmetry group.
ObjectModel make_cube_model(double edge = 0.1, int points_per_edge = 8);

SceneConfig default_scene(SceneKind kind);

// Ground-truth pose at time t. Throws OutOfRange outside [0, duration].
Pose trajectory_pose(const SceneConfig& cfg, double t);

struct RenderResult {
    vision::GrayFrame frame;
    bool empty_render = false;  // no model point landed inside the frustum
};

// Splats the model points (bilinear footprints, far-to-near painter order)
// over a textured background plane with proper stereo disparity. Scene c
// additionally applies the seeded perturbations for this frame index.
RenderResult render_frame(const SceneConfig& cfg, const Pose& pose, Eye eye,
                          long frame_index);

// Per pixel, floor(|delta log I| / threshold) events with timestamps spread
// uniformly inside (prev.timestamp, next.timestamp], sorted by time.
vision::EventBatch synthesize_events(const vision::GrayFrame& prev,
                                     const vision::GrayFrame& next,
                                     double threshold);

// Mean projected model-point speed (left eye) between frames index-1 and
// index, in px/s; frame 0 reports the forward difference.
double pixel_velocity(const SceneConfig& cfg, long frame_index);

// Regular < 45 px/s; Medium in [45, 180); Faster >= 180.
std::string speed_bin(double v);

struct FrameObservation {
    vision::GrayFrame left, right;
    vision::EventBatch left_events, right_events;
    Pose gt_pose;
    double timestamp = 0.0;
    double pixel_velocity = 0.0;
    std::string bin;
    bool empty_render = false;
};

// Streams observations one frame at a time (events need the previous frames,
// everything else is closed-form per index).
class SequenceGenerator {
public:
    explicit SequenceGenerator(SceneConfig cfg);

    long frame_count() const { return cfg_.frame_count(); }
    long position() const { return index_; }
    FrameObservation next();  // throws OutOfRange past the end

private:
    SceneConfig cfg_;
    long index_ = 0;
    vision::GrayFrame prev_left_, prev_right_;
};

// Writes the on-disk dataset layout: manifest, poses.txt, rig.txt, model.txt,
// frames/{L,R}_%06d.pgm, events/{L,R}_%06d.csv. The directory itself is
// created (parent must exist); reruns with the same config are bit-identical.
void generate_dataset(const SceneConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace raypose::sim
