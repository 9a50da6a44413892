#include "raypose/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "raypose/amq.hpp"
#include "raypose/errors.hpp"
#include "raypose/rng.hpp"

namespace raypose::pipeline {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct Dataset {
    std::filesystem::path root;
    geom::StereoRig rig;
    geom::ObjectModel model;
    std::vector<geom::Pose> gt;
    std::vector<io::ManifestRow> manifest;
};

Dataset load_dataset(const std::filesystem::path& root) {
    if (!std::filesystem::exists(root))
        throw ConfigError("dataset directory " + root.string() + " does not exist");
    Dataset ds;
    ds.root = root;
    ds.rig = io::read_rig(root / "rig.txt");
    ds.model = io::read_model(root / "model.txt");
    ds.gt = io::read_poses(root / "poses.txt");
    ds.manifest = io::read_manifest(root / "manifest");
    if (ds.gt.empty() || ds.manifest.empty())
        throw ConfigError("dataset " + root.string() + " is empty");
    if (ds.gt.size() != ds.manifest.size())
        throw ConfigError("dataset " + root.string() + ": poses.txt and manifest disagree");
    return ds;
}

vision::GrayFrame load_eye_frame(const Dataset& ds, const RunConfig& cfg, long i, bool left) {
    const std::string& modality = left ? cfg.left_modality : cfg.right_modality;
    const char* prefix = left ? "L" : "R";
    const double t = ds.manifest[i].t;
    if (modality == "rgb") {
        vision::GrayFrame frame =
            io::read_pgm(ds.root / "frames" / (io::frame_name(prefix, i) + ".pgm"));
        frame.timestamp = t;
        return frame;
    }
    const geom::CameraIntrinsics& k = left ? ds.rig.left : ds.rig.right;
    const vision::EventBatch batch = io::read_events(
        ds.root / "events" / (io::frame_name(prefix, i) + ".csv"), k.width, k.height);
    double window = 1.0;
    if (i > 0)
        window = t - ds.manifest[i - 1].t;
    else if (ds.manifest.size() > 1)
        window = ds.manifest[1].t - t;
    if (window <= 0.0) window = 1.0;
    vision::GrayFrame frame = vision::accumulate_events(batch, window, t);
    frame.timestamp = t;
    return frame;
}

// True when the 3x3-cross neighbourhood around p is object-dark. Features on
// the silhouette sit outside the model's sample points (the outline hugs the
// surface, the samples sit a half-pitch inside), so matching them against
// rendered points systematically inflates the footprint; interior features
// carry no such bias. Dark-pixel screening also drops background points.
bool interior_dark(const vision::GrayFrame& frame, const geom::Vec2& p) {
    static constexpr int kOff[5][2] = {{0, 0}, {3, 0}, {-3, 0}, {0, 3}, {0, -3}};
    for (const auto& o : kOff) {
        const int x = static_cast<int>(std::lround(p.x())) + o[0];
        const int y = static_cast<int>(std::lround(p.y())) + o[1];
        if (x < 0 || x >= frame.width || y < 0 || y >= frame.height) return false;
        if (frame.at(x, y) > 0.48f) return false;
    }
    return true;
}

// Observed feature positions for scoring: the dominant (moving) cluster,
// kept inside the object's projected footprint around the estimated center
// so cluster chaining cannot drag in background points. When the cluster is
// uninformative (slow frames), falls back to every tracked point inside the
// footprint. Both paths keep interior points only (see interior_dark).
std::vector<geom::Vec2> gather_observations(const vision::TrackedPointSet& tracked,
                                            const m3d::ClusterResult& cluster,
                                            const vision::GrayFrame& frame,
                                            const geom::Vec2& target,
                                            const geom::CameraIntrinsics& k,
                                            const geom::ObjectModel& model, double depth,
                                            double radius_scale) {
    const double radius = radius_scale * (k.fx * model.diameter / depth) + 8.0;
    std::vector<geom::Vec2> obs;
    if (!cluster.low_confidence) {
        for (int j : cluster.dominant_points) {
            const geom::Vec2 p = tracked.current(j);
            if ((p - target).norm() <= radius && interior_dark(frame, p)) obs.push_back(p);
        }
    }
    if (obs.size() < 3) {
        obs.clear();
        for (size_t j = 0; j < tracked.size(); ++j) {
            if (!tracked.tracked[j]) continue;
            const geom::Vec2 p = tracked.current(j);
            if ((p - target).norm() <= radius && interior_dark(frame, p)) obs.push_back(p);
        }
    }
    // Seeds land on blob rims (strongest gradient), a ~1px offset that
    // re-randomizes every frame and turns into rotation noise downstream.
    // Snap to the blob center and merge seeds that snapped to the same blob.
    std::vector<geom::Vec2> snapped;
    for (const geom::Vec2& p : obs) {
        const geom::Vec2 c = vision::dark_centroid(frame, p, 2);
        bool dup = false;
        for (const geom::Vec2& q : snapped)
            if ((q - c).norm() < 1.5) {
                dup = true;
                break;
            }
        if (!dup) snapped.push_back(c);
    }
    return snapped;
}

// Forward-backward validation: a point tracked prev->cur must track back to
// its origin within tol. Windows straddling the object silhouette report
// blended flows that otherwise chain the moving cluster to the static one.
void fb_prune(const vision::Pyramid& prev, const vision::Pyramid& cur,
              vision::TrackedPointSet& tracked, const vision::LkParams& params,
              double tol) {
    std::vector<int> idx;
    std::vector<geom::Vec2> forward_end;
    for (size_t j = 0; j < tracked.size(); ++j) {
        if (!tracked.tracked[j]) continue;
        idx.push_back(static_cast<int>(j));
        forward_end.push_back(tracked.current(j));
    }
    if (idx.empty()) return;
    const vision::TrackedPointSet back = vision::lk_track(cur, prev, forward_end, params);
    for (size_t k = 0; k < idx.size(); ++k) {
        const int j = idx[k];
        if (!back.tracked[k] ||
            (tracked.displacements[j] + back.displacements[k]).norm() > tol) {
            tracked.tracked[j] = false;
        }
    }
}

// An observation followed across frames together with its model-point
// binding. Bindings are assigned once, under an already-refined pose, and
// kept while LK can follow the blob; pose refinement over bound matches
// cannot slip to a neighbouring point the way per-frame nearest-neighbour
// association can on a repetitive surface.
struct DotTrack {
    geom::Vec2 pos = geom::Vec2::Zero();
    int point_index = 0;
};

// Carries tracks into the current frame: LK + forward-backward check, then
// re-centering on the blob so LK drift never accumulates. Lost tracks drop.
void advance_tracks(const vision::Pyramid& prev, const vision::Pyramid& cur,
                    const vision::GrayFrame& frame, std::vector<DotTrack>& tracks,
                    const vision::LkParams& lk, double fb_tol) {
    if (tracks.empty()) return;
    std::vector<geom::Vec2> pts;
    pts.reserve(tracks.size());
    for (const DotTrack& t : tracks) pts.push_back(t.pos);
    vision::TrackedPointSet set = vision::lk_track(prev, cur, pts, lk);
    fb_prune(prev, cur, set, lk, fb_tol);
    std::vector<DotTrack> kept;
    kept.reserve(tracks.size());
    for (size_t j = 0; j < tracks.size(); ++j) {
        if (!set.tracked[j]) continue;
        const geom::Vec2 p = vision::dark_centroid(frame, set.current(j), 2);
        if (interior_dark(frame, p)) kept.push_back({p, tracks[j].point_index});
    }
    tracks = kept;
}

// Verifies surviving tracks against the refreshed pose and binds yet-unbound
// observations to the nearest visible projected model point.
void update_tracks(std::vector<DotTrack>& tracks, const std::vector<geom::Vec2>& obs,
                   const geom::Pose& pose, const geom::ObjectModel& model,
                   const geom::CameraIntrinsics& k, const geom::Vec3& offset,
                   double pitch_px) {
    const size_t count = model.points.size();
    std::vector<geom::Vec2> projected(count, geom::Vec2::Zero());
    std::vector<double> depth(count, std::numeric_limits<double>::infinity());
    for (size_t m = 0; m < count; ++m) {
        const geom::Vec3 x = pose.rotation * model.points[m] + pose.center - offset;
        if (x.z() <= 1e-9) continue;
        projected[m] = geom::Vec2(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
        depth[m] = x.z();
    }
    // Hidden faces project interleaved with visible ones; binding to them
    // locks the pose error that made them line up, so they must be excluded.
    // A point is hidden when a clearly nearer point projects next to it.
    std::vector<char> occluded(count, 0);
    for (size_t m = 0; m < count; ++m) {
        if (!std::isfinite(depth[m])) {
            occluded[m] = 1;
            continue;
        }
        for (size_t o = 0; o < count; ++o) {
            if (depth[o] < depth[m] - 0.25 * model.diameter &&
                (projected[o] - projected[m]).norm() < 0.6 * pitch_px) {
                occluded[m] = 1;
                break;
            }
        }
    }
    std::vector<DotTrack> kept;
    kept.reserve(tracks.size() + obs.size());
    for (const DotTrack& t : tracks) {
        const size_t m = static_cast<size_t>(t.point_index);
        if (!occluded[m] && (projected[m] - t.pos).norm() <= 0.6 * pitch_px)
            kept.push_back(t);
    }
    for (const geom::Vec2& o : obs) {
        bool bound = false;
        for (const DotTrack& t : kept)
            if ((t.pos - o).norm() < 1.5) {
                bound = true;
                break;
            }
        if (bound) continue;
        int best = -1;
        double d1 = std::numeric_limits<double>::infinity();
        double d2 = d1;
        for (size_t m = 0; m < count; ++m) {
            if (occluded[m]) continue;
            const double d = (projected[m] - o).norm();
            if (d < d1) {
                d2 = d1;
                d1 = d;
                best = static_cast<int>(m);
            } else if (d < d2) {
                d2 = d;
            }
        }
        // Foreshortening squeezes limb dots together; an assignment without a
        // clear margin over the runner-up would poison the refinement.
        if (best >= 0 && d1 <= 0.45 * pitch_px && d2 - d1 >= 0.35 * pitch_px)
            kept.push_back({o, best});
    }
    tracks = kept;
}

// Binds the dot lattice directly from an accepted pose: project every model
// point, snap to the local blob centre, and let update_tracks apply the
// occlusion and radius gates. Run at frame 0 from the reference pose and
// after every accepted frame, it keeps the bound set saturated while dots
// blink in and out under occluders, and carries motion-reversal frames where
// clustering has nothing to separate. A snap that lands on a neighbouring
// dot exceeds the binding radius, so a wrong pose starves the set instead of
// silently rebinding it.
void seed_tracks_from_pose(std::vector<DotTrack>& tracks, const vision::GrayFrame& frame,
                           const geom::Pose& pose, const geom::ObjectModel& model,
                           const geom::CameraIntrinsics& k, const geom::Vec3& offset,
                           double pitch_px) {
    std::vector<geom::Vec2> obs;
    obs.reserve(model.points.size());
    for (const geom::Vec3& p : model.points) {
        const geom::Vec3 x = pose.rotation * p + pose.center - offset;
        if (x.z() <= 1e-9) continue;
        const geom::Vec2 uv(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
        const geom::Vec2 snapped = vision::dark_centroid(frame, uv, 2);
        if (interior_dark(frame, snapped)) obs.push_back(snapped);
    }
    update_tracks(tracks, obs, pose, model, k, offset, pitch_px);
}

// Coarse whole-frame seeds plus a fine grid inside the inflated bounding box
// of the model projected at the last predicted pose. The coarse grid feeds
// motion clustering with scene context; the fine grid guarantees enough
// trackable points on a small object.
std::vector<geom::Vec2> make_seeds(const vision::GrayFrame& frame, const geom::Pose& last,
                                   const geom::CameraIntrinsics& k, const geom::Vec3& offset,
                                   const geom::ObjectModel& model, const RunConfig& cfg) {
    std::vector<geom::Vec2> seeds =
        vision::seed_points(frame, cfg.grid_step, cfg.min_gradient);
    double u0 = std::numeric_limits<double>::infinity(), v0 = u0;
    double u1 = -u0, v1 = -u0;
    for (const geom::Vec3& p : model.points) {
        const geom::Vec3 x = last.rotation * p + last.center - offset;
        if (x.z() <= 1e-9) continue;
        const double u = k.fx * x.x() / x.z() + k.cx;
        const double v = k.fy * x.y() / x.z() + k.cy;
        u0 = std::min(u0, u);
        u1 = std::max(u1, u);
        v0 = std::min(v0, v);
        v1 = std::max(v1, v);
    }
    if (!(u0 <= u1) || !(v0 <= v1)) return seeds;
    const double hu = std::max(cfg.roi_scale * 0.5 * (u1 - u0), 10.0);
    const double hv = std::max(cfg.roi_scale * 0.5 * (v1 - v0), 10.0);
    const double cu = 0.5 * (u0 + u1), cv = 0.5 * (v0 + v1);
    const std::vector<geom::Vec2> fine = vision::seed_points_in(
        frame, static_cast<int>(std::floor(cu - hu)), static_cast<int>(std::floor(cv - hv)),
        static_cast<int>(std::ceil(cu + hu)) + 1, static_cast<int>(std::ceil(cv + hv)) + 1,
        cfg.roi_step, cfg.min_gradient);
    std::unordered_set<long> have;
    have.reserve(seeds.size() + fine.size());
    for (const geom::Vec2& p : seeds)
        have.insert(static_cast<long>(p.y()) * frame.width + static_cast<long>(p.x()));
    for (const geom::Vec2& p : fine) {
        const long key = static_cast<long>(p.y()) * frame.width + static_cast<long>(p.x());
        if (have.insert(key).second) seeds.push_back(p);
    }
    return seeds;
}

std::string sanitize(std::string text) {
    for (char& c : text)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return text;
}

void dump_clusters(const std::filesystem::path& path, const vision::TrackedPointSet& tracked,
                   const m3d::ClusterResult& cluster) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "point_id,label,u,v,du,dv\n";
    for (size_t j = 0; j < tracked.size(); ++j)
        out << j << ',' << cluster.labels[j] << ',' << io::fmt(tracked.points[j].x()) << ','
            << io::fmt(tracked.points[j].y()) << ',' << io::fmt(tracked.displacements[j].x())
            << ',' << io::fmt(tracked.displacements[j].y()) << '\n';
}

void dump_hypotheses(const std::filesystem::path& path, const rpf::HypothesisSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "index,depth,error,score\n";
    for (size_t j = 0; j < set.items.size(); ++j)
        out << j << ',' << io::fmt(set.items[j].depth) << ',' << io::fmt(set.items[j].error)
            << ',' << io::fmt(set.items[j].score) << '\n';
}

void dump_observations(const std::filesystem::path& path, const std::vector<geom::Vec2>& obs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "u,v\n";
    for (const geom::Vec2& p : obs) out << io::fmt(p.x()) << ',' << io::fmt(p.y()) << '\n';
}

void dump_matches(const std::filesystem::path& path, const std::vector<rpf::Match>& matches) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "u,v,point\n";
    for (const rpf::Match& m : matches)
        out << io::fmt(m.observed.x()) << ',' << io::fmt(m.observed.y()) << ','
            << m.point_index << '\n';
}

std::vector<geom::Vec3> parse_axes(const std::string& text) {
    std::vector<geom::Vec3> axes;
    for (char ch : text) {
        if (ch == ',' || ch == ' ') continue;
        if (ch == 'x')
            axes.push_back(geom::Vec3::UnitX());
        else if (ch == 'y')
            axes.push_back(geom::Vec3::UnitY());
        else if (ch == 'z')
            axes.push_back(geom::Vec3::UnitZ());
        else
            throw ConfigError(std::string("spin.axes: expected letters x, y, z, got '") + ch +
                              "'");
    }
    if (axes.empty()) throw ConfigError("spin.axes is empty");
    return axes;
}

}  // namespace

void RunConfig::validate() const {
    for (const std::string* m : {&left_modality, &right_modality})
        if (*m != "rgb" && *m != "event")
            throw ConfigError("modality must be rgb or event, got '" + *m + "'");
    if (amq_n < 0) throw ConfigError("amq.n must be >= 0");
    if (!(amq_alpha > 0.0) || amq_alpha > 1.0) throw ConfigError("amq.alpha must be in (0, 1]");
    if (grid_step < 1) throw ConfigError("m3d.grid_step must be >= 1");
    if (roi_step < 1) throw ConfigError("m3d.roi_step must be >= 1");
    if (!(roi_scale >= 1.0)) throw ConfigError("m3d.roi_scale must be >= 1");
    if (!(fb_tol > 0.0)) throw ConfigError("m3d.fb_tol must be positive");
    if (lk_levels < 1) throw ConfigError("lk.levels must be >= 1");
    if (lk.window < 3 || lk.window % 2 == 0) throw ConfigError("lk.window must be odd, >= 3");
    if (sampler.count < 1) throw ConfigError("rpf.count must be >= 1");
    if (sampler.beta < 0.0) throw ConfigError("rpf.beta must be >= 0");
    if (!(scorer.temperature > 0.0)) throw ConfigError("rpf.temperature must be positive");
    if (!(scorer.cutoff > 0.0)) throw ConfigError("rpf.cutoff must be positive");
    if (refine_iterations < 0) throw ConfigError("rpf.refine_iterations must be >= 0");
    if (!(obs_radius_scale > 0.0)) throw ConfigError("rpf.obs_radius_scale must be positive");
    if (min_obs < 3) throw ConfigError("rpf.min_obs must be >= 3");
}

void apply_run_keys(const io::KeyValues& kv, RunConfig& cfg, std::vector<std::string>& used) {
    cfg.left_modality = io::get_string(kv, "run.left_modality", cfg.left_modality, &used);
    cfg.right_modality = io::get_string(kv, "run.right_modality", cfg.right_modality, &used);
    cfg.seed = static_cast<uint64_t>(
        io::get_long(kv, "run.seed", static_cast<long>(cfg.seed), &used));
    cfg.dump_debug = io::get_bool(kv, "run.dump_debug", cfg.dump_debug, &used);

    cfg.amq_n = static_cast<int>(io::get_long(kv, "amq.n", cfg.amq_n, &used));
    cfg.amq_alpha = io::get_double(kv, "amq.alpha", cfg.amq_alpha, &used);

    cfg.consistency.lambda = io::get_double(kv, "m3d.lambda", cfg.consistency.lambda, &used);
    cfg.consistency.tau = io::get_double(kv, "m3d.tau", cfg.consistency.tau, &used);
    cfg.eps_static = io::get_double(kv, "m3d.eps_static", cfg.eps_static, &used);
    cfg.eps_disp = io::get_double(kv, "m3d.eps_disp", cfg.eps_disp, &used);
    cfg.grid_step = static_cast<int>(io::get_long(kv, "m3d.grid_step", cfg.grid_step, &used));
    cfg.min_gradient = io::get_double(kv, "m3d.min_gradient", cfg.min_gradient, &used);
    cfg.roi_step = static_cast<int>(io::get_long(kv, "m3d.roi_step", cfg.roi_step, &used));
    cfg.roi_scale = io::get_double(kv, "m3d.roi_scale", cfg.roi_scale, &used);
    cfg.fb_tol = io::get_double(kv, "m3d.fb_tol", cfg.fb_tol, &used);

    cfg.lk.window = static_cast<int>(io::get_long(kv, "lk.window", cfg.lk.window, &used));
    cfg.lk_levels = static_cast<int>(io::get_long(kv, "lk.levels", cfg.lk_levels, &used));
    cfg.lk.iterations =
        static_cast<int>(io::get_long(kv, "lk.iterations", cfg.lk.iterations, &used));
    cfg.lk.min_eigenvalue = io::get_double(kv, "lk.min_eigenvalue", cfg.lk.min_eigenvalue, &used);
    cfg.lk.convergence = io::get_double(kv, "lk.convergence", cfg.lk.convergence, &used);

    cfg.sampler.count = static_cast<int>(io::get_long(kv, "rpf.count", cfg.sampler.count, &used));
    cfg.sampler.beta = io::get_double(kv, "rpf.beta", cfg.sampler.beta, &used);
    cfg.sampler.distribution = rpf::distribution_from_name(io::get_string(
        kv, "rpf.distribution", rpf::distribution_name(cfg.sampler.distribution), &used));
    cfg.scorer.temperature = io::get_double(kv, "rpf.temperature", cfg.scorer.temperature, &used);
    cfg.scorer.cutoff = io::get_double(kv, "rpf.cutoff", cfg.scorer.cutoff, &used);
    cfg.scorer.max_model_points = static_cast<int>(
        io::get_long(kv, "rpf.max_model_points", cfg.scorer.max_model_points, &used));
    cfg.refine_iterations = static_cast<int>(
        io::get_long(kv, "rpf.refine_iterations", cfg.refine_iterations, &used));
    cfg.obs_radius_scale =
        io::get_double(kv, "rpf.obs_radius_scale", cfg.obs_radius_scale, &used);
    cfg.min_obs = static_cast<int>(io::get_long(kv, "rpf.min_obs", cfg.min_obs, &used));
}

RunConfig load_run_config(const std::filesystem::path& config_path) {
    RunConfig cfg;
    if (config_path.empty()) return cfg;
    const io::KeyValues kv = io::read_config(config_path);
    std::vector<std::string> used;
    apply_run_keys(kv, cfg, used);
    io::reject_unknown_keys(kv, used);
    return cfg;
}

void apply_scene_keys(const io::KeyValues& kv, sim::SceneConfig& cfg,
                      std::vector<std::string>& used) {
    cfg.kind = sim::scene_from_name(
        io::get_string(kv, "scene.kind", sim::scene_name(cfg.kind), &used));
    cfg.duration = io::get_double(kv, "scene.duration", cfg.duration, &used);
    cfg.frame_rate = io::get_double(kv, "scene.frame_rate", cfg.frame_rate, &used);
    cfg.seed = static_cast<uint64_t>(
        io::get_long(kv, "scene.seed", static_cast<long>(cfg.seed), &used));
    cfg.event_threshold =
        io::get_double(kv, "scene.event_threshold", cfg.event_threshold, &used);
    cfg.background_depth =
        io::get_double(kv, "scene.background_depth", cfg.background_depth, &used);

    geom::CameraIntrinsics k = cfg.rig.left;
    k.fx = io::get_double(kv, "rig.fx", k.fx, &used);
    k.fy = io::get_double(kv, "rig.fy", k.fy, &used);
    k.cx = io::get_double(kv, "rig.cx", k.cx, &used);
    k.cy = io::get_double(kv, "rig.cy", k.cy, &used);
    k.width = static_cast<int>(io::get_long(kv, "rig.width", k.width, &used));
    k.height = static_cast<int>(io::get_long(kv, "rig.height", k.height, &used));
    cfg.rig.left = k;
    cfg.rig.right = k;
    cfg.rig.baseline = io::get_double(kv, "rig.baseline", cfg.rig.baseline, &used);

    const double edge = io::get_double(kv, "model.edge", 0.1, &used);
    const long per_edge = io::get_long(kv, "model.points_per_edge", 8, &used);
    cfg.model = sim::make_cube_model(edge, static_cast<int>(per_edge));

    cfg.spin.center.x() = io::get_double(kv, "spin.center_x", cfg.spin.center.x(), &used);
    cfg.spin.center.y() = io::get_double(kv, "spin.center_y", cfg.spin.center.y(), &used);
    cfg.spin.center.z() = io::get_double(kv, "spin.center_z", cfg.spin.center.z(), &used);
    cfg.spin.omega_start = io::get_double(kv, "spin.omega_start", cfg.spin.omega_start, &used);
    cfg.spin.omega_end = io::get_double(kv, "spin.omega_end", cfg.spin.omega_end, &used);
    const std::string axes = io::get_string(kv, "spin.axes", "", &used);
    if (!axes.empty()) cfg.spin.axes = parse_axes(axes);

    cfg.pendulum.pivot.x() = io::get_double(kv, "pendulum.pivot_x", cfg.pendulum.pivot.x(), &used);
    cfg.pendulum.pivot.y() = io::get_double(kv, "pendulum.pivot_y", cfg.pendulum.pivot.y(), &used);
    cfg.pendulum.pivot.z() = io::get_double(kv, "pendulum.pivot_z", cfg.pendulum.pivot.z(), &used);
    cfg.pendulum.length = io::get_double(kv, "pendulum.length", cfg.pendulum.length, &used);
    cfg.pendulum.frequency = io::get_double(kv, "pendulum.frequency", cfg.pendulum.frequency, &used);
    cfg.pendulum.theta0 = io::get_double(kv, "pendulum.theta0", cfg.pendulum.theta0, &used);

    cfg.perturb.noise_sigma =
        io::get_double(kv, "perturb.noise_sigma", cfg.perturb.noise_sigma, &used);
    cfg.perturb.occlusion_frac =
        io::get_double(kv, "perturb.occlusion_frac", cfg.perturb.occlusion_frac, &used);
    cfg.perturb.replace_frac =
        io::get_double(kv, "perturb.replace_frac", cfg.perturb.replace_frac, &used);
}

sim::SceneConfig load_scene_config(const std::filesystem::path& config_path) {
    sim::SceneConfig cfg = sim::default_scene(sim::SceneKind::pendulum);
    if (config_path.empty()) return cfg;
    const io::KeyValues kv = io::read_config(config_path);
    std::vector<std::string> used;
    apply_scene_keys(kv, cfg, used);
    io::reject_unknown_keys(kv, used);
    return cfg;
}

TrackResult run_track(const RunConfig& cfg) {
    cfg.validate();
    const Dataset ds = load_dataset(cfg.dataset);
    const long n = static_cast<long>(ds.gt.size());

    std::error_code ec;
    std::filesystem::create_directories(cfg.out, ec);
    if (ec) throw IoError("cannot create output directory " + cfg.out.string());
    const std::filesystem::path debug_dir = cfg.out / "debug";
    if (cfg.dump_debug) {
        std::filesystem::remove_all(debug_dir, ec);  // drop dumps from older runs
        std::filesystem::create_directories(debug_dir, ec);
        if (ec) throw IoError("cannot create directory " + debug_dir.string());
    }

    rpf::SamplerConfig sampler = cfg.sampler;
    if (sampler.beta <= 0.0) sampler.beta = ds.model.diameter;
    const double spacing = geom::model_point_spacing(ds.model);

    amq::PoseQueue queue(cfg.amq_n, cfg.amq_alpha);
    std::vector<geom::Pose> preds;
    preds.reserve(n);
    std::vector<uint8_t> lost(n, 0);
    std::vector<std::string> reasons(n);
    std::vector<DotTrack> tracks_left, tracks_right;

    static const char* kStages[] = {"read",       "vision_left", "vision_right",
                                    "m3d",        "amq",         "rpf_sample",
                                    "rpf_score",  "rpf_refine",  "write"};
    TrackResult result;
    for (const char* s : kStages) result.stage_ms[s] = 0.0;
    std::string timing =
        "idx,read_ms,vision_left_ms,vision_right_ms,m3d_ms,amq_ms,rpf_sample_ms,"
        "rpf_score_ms,rpf_refine_ms,write_ms,total_ms\n";

    const auto wall_start = Clock::now();

    // Frame 0: ground-truth initialization (tracking needs a reference frame).
    auto stage_start = Clock::now();
    vision::GrayFrame left_frame = load_eye_frame(ds, cfg, 0, true);
    vision::GrayFrame right_frame = load_eye_frame(ds, cfg, 0, false);
    const double read0 = ms_since(stage_start);
    const double pitch0 =
        ds.rig.left.fx * spacing / std::max(ds.gt[0].center.z(), 1e-6);
    stage_start = Clock::now();
    vision::GrayFrame smooth_prev_left = vision::smooth3(left_frame);
    vision::Pyramid prev_left = vision::build_pyramid(smooth_prev_left, cfg.lk_levels);
    seed_tracks_from_pose(tracks_left, smooth_prev_left, ds.gt[0], ds.model, ds.rig.left,
                          geom::Vec3::Zero(), pitch0);
    const double vis0_left = ms_since(stage_start);
    stage_start = Clock::now();
    vision::GrayFrame smooth_prev_right = vision::smooth3(right_frame);
    vision::Pyramid prev_right = vision::build_pyramid(smooth_prev_right, cfg.lk_levels);
    seed_tracks_from_pose(tracks_right, smooth_prev_right, ds.gt[0], ds.model, ds.rig.right,
                          geom::Vec3(ds.rig.baseline, 0.0, 0.0), pitch0);
    const double vis0_right = ms_since(stage_start);
    result.stage_ms["read"] += read0;
    result.stage_ms["vision_left"] += vis0_left;
    result.stage_ms["vision_right"] += vis0_right;
    preds.push_back(ds.gt[0]);
    queue.enqueue(ds.gt[0]);
    timing += "0," + io::fmt(read0) + "," + io::fmt(vis0_left) + "," + io::fmt(vis0_right) +
              ",0,0,0,0,0,0," + io::fmt(read0 + vis0_left + vis0_right) + "\n";

    for (long i = 1; i < n; ++i) {
        std::map<std::string, double> stage;
        for (const char* s : kStages) stage[s] = 0.0;
        const auto frame_start = Clock::now();

        stage_start = Clock::now();
        vision::GrayFrame cur_left = load_eye_frame(ds, cfg, i, true);
        vision::GrayFrame cur_right = load_eye_frame(ds, cfg, i, false);
        stage["read"] = ms_since(stage_start);

        geom::Pose pose = preds.back();
        bool frame_lost = false;
        std::string reason;
        vision::Pyramid cur_left_pyr, cur_right_pyr;
        vision::GrayFrame smooth_cur_left, smooth_cur_right;
        vision::TrackedPointSet tracked_left, tracked_right;
        m3d::ClusterResult cluster_left, cluster_right;
        rpf::HypothesisSet hypotheses;
        std::vector<geom::Vec2> obs_left, obs_right;
        std::vector<rpf::Match> matches_left, matches_right;
        try {
            stage_start = Clock::now();
            smooth_cur_left = vision::smooth3(cur_left);
            cur_left_pyr = vision::build_pyramid(smooth_cur_left, cfg.lk_levels);
            const std::vector<geom::Vec2> seeds_left =
                make_seeds(smooth_prev_left, preds.back(), ds.rig.left,
                           geom::Vec3::Zero(), ds.model, cfg);
            tracked_left = vision::lk_track(prev_left, cur_left_pyr, seeds_left, cfg.lk);
            fb_prune(prev_left, cur_left_pyr, tracked_left, cfg.lk, cfg.fb_tol);
            advance_tracks(prev_left, cur_left_pyr, smooth_cur_left, tracks_left, cfg.lk,
                           cfg.fb_tol);
            stage["vision_left"] = ms_since(stage_start);

            stage_start = Clock::now();
            smooth_cur_right = vision::smooth3(cur_right);
            cur_right_pyr = vision::build_pyramid(smooth_cur_right, cfg.lk_levels);
            const std::vector<geom::Vec2> seeds_right =
                make_seeds(smooth_prev_right, preds.back(), ds.rig.right,
                           geom::Vec3(ds.rig.baseline, 0.0, 0.0), ds.model, cfg);
            tracked_right = vision::lk_track(prev_right, cur_right_pyr, seeds_right, cfg.lk);
            fb_prune(prev_right, cur_right_pyr, tracked_right, cfg.lk, cfg.fb_tol);
            advance_tracks(prev_right, cur_right_pyr, smooth_cur_right, tracks_right, cfg.lk,
                           cfg.fb_tol);
            stage["vision_right"] = ms_since(stage_start);

            stage_start = Clock::now();
            cluster_left = m3d::select_dominant(
                m3d::cluster(m3d::consistency_matrix(tracked_left, cfg.consistency)),
                tracked_left, cfg.eps_static);
            cluster_right = m3d::select_dominant(
                m3d::cluster(m3d::consistency_matrix(tracked_right, cfg.consistency)),
                tracked_right, cfg.eps_static);
            // Triangulate the dominant centroids when both eyes report motion.
            // Slow or fragmented frames fall back to the last predicted
            // center; so does a triangulated depth jumping outside the
            // sampling window, which signals mismatched cluster memberships
            // between the eyes rather than real motion.
            geom::Vec3 center = preds.back().center;
            if (!cluster_left.low_confidence && !cluster_right.low_confidence) {
                try {
                    const geom::Vec3 tri = m3d::track_center(ds.rig, cluster_left,
                                                             cluster_right, cfg.eps_disp);
                    if ((tri - center).norm() <= 0.5 * sampler.beta) center = tri;
                } catch (const NonPositiveDisparity&) {
                } catch (const DisparityTooSmall&) {
                }
            }
            stage["m3d"] = ms_since(stage_start);

            stage_start = Clock::now();
            const geom::Rotation pivot = amq::pivot_rotation(queue, center, i);
            stage["amq"] = ms_since(stage_start);

            stage_start = Clock::now();
            rpf::SamplerConfig frame_sampler = sampler;
            frame_sampler.seed = rng::derive_seed(cfg.seed, 0xA11CEull, static_cast<uint64_t>(i));
            const geom::PixelDepth ray = rpf::ray_through(ds.rig.left, center);
            const std::vector<double> depths = rpf::sample_depths(ray.depth, frame_sampler);
            hypotheses = rpf::make_hypotheses(ds.rig.left, ray.u, ray.v, depths, pivot);
            stage["rpf_sample"] = ms_since(stage_start);

            stage_start = Clock::now();
            const geom::PixelDepth ray_right = rpf::ray_through(
                ds.rig.right, center - geom::Vec3(ds.rig.baseline, 0.0, 0.0));
            obs_left = gather_observations(
                tracked_left, cluster_left, smooth_cur_left, geom::Vec2(ray.u, ray.v),
                ds.rig.left, ds.model, ray.depth, cfg.obs_radius_scale);
            obs_right = gather_observations(
                tracked_right, cluster_right, smooth_cur_right,
                geom::Vec2(ray_right.u, ray_right.v), ds.rig.right, ds.model,
                ray_right.depth, cfg.obs_radius_scale);
            // Degraded frames can thin the observations below anything the
            // scorer should be trusted with; bound tracks may still carry the
            // frame, so scoring is skipped rather than the frame dropped.
            const bool enough_obs =
                obs_left.size() >= static_cast<size_t>(cfg.min_obs) &&
                obs_right.size() >= static_cast<size_t>(cfg.min_obs);
            if (enough_obs)
                rpf::score_hypotheses(hypotheses, ds.model, obs_left, obs_right, ds.rig,
                                      cfg.scorer);
            stage["rpf_score"] = ms_since(stage_start);

            stage_start = Clock::now();
            const double pitch_px = ds.rig.left.fx * spacing / std::max(ray.depth, 1e-6);
            // Bound tracks are the primary refinement signal; per-frame
            // nearest-neighbour association bootstraps them and covers frames
            // where too few tracks survive.
            matches_left.reserve(tracks_left.size());
            matches_right.reserve(tracks_right.size());
            for (const DotTrack& t : tracks_left)
                matches_left.push_back({t.pos, t.point_index});
            for (const DotTrack& t : tracks_right)
                matches_right.push_back({t.pos, t.point_index});
            bool matched_mode =
                matches_left.size() >= 4 && matches_right.size() >= 4 &&
                matches_left.size() + matches_right.size() >= 12;
            if (matched_mode) {
                const rpf::RefineResult bound = rpf::refine_matched(
                    geom::Pose{preds.back().rotation, center}, ds.model, matches_left,
                    matches_right, ds.rig, cfg.refine_iterations);
                matched_mode = !bound.degenerate && bound.error < 3.0;
                if (matched_mode) pose = bound.pose;
            }
            if (!matched_mode) {
                if (!enough_obs)
                    throw InsufficientObservations(
                        "frame " + std::to_string(i) + ": " +
                        std::to_string(obs_left.size()) + "/" +
                        std::to_string(obs_right.size()) +
                        " observations and no usable bound tracks");
                const rpf::RayHypothesis& top = rpf::select_top1(hypotheses);
                const rpf::RefineResult refined = rpf::refine(
                    top, ds.model, obs_left, obs_right, ds.rig, cfg.refine_iterations,
                    cfg.scorer.cutoff);
                const geom::Pose coarse =
                    refined.degenerate ? geom::Pose{top.rotation, top.center} : refined.pose;
                // Second pass with the association radius tied to the projected
                // grid pitch: wide-cutoff matches pull in neighbouring patches
                // and blur the minimum, own-patch matches sharpen it.
                const double tight = std::clamp(1.1 * pitch_px, 3.0, cfg.scorer.cutoff);
                rpf::RayHypothesis seeded;
                seeded.rotation = coarse.rotation;
                seeded.center = coarse.center;
                seeded.depth = ray.depth;
                const rpf::RefineResult polish = rpf::refine(
                    seeded, ds.model, obs_left, obs_right, ds.rig, cfg.refine_iterations,
                    tight);
                pose = polish.degenerate ? coarse : polish.pose;
            }
            // A single frame cannot plausibly turn the object this far; treat
            // it as an association failure and keep the rotation history.
            if (geom::geodesic_angle(pose.rotation, preds.back().rotation) > 0.45) {
                pose.rotation = preds.back().rotation;
            }
            const double pitch_right =
                ds.rig.right.fx * spacing / std::max(ray_right.depth, 1e-6);
            update_tracks(tracks_left, obs_left, pose, ds.model, ds.rig.left,
                          geom::Vec3::Zero(), pitch_px);
            update_tracks(tracks_right, obs_right, pose, ds.model, ds.rig.right,
                          geom::Vec3(ds.rig.baseline, 0.0, 0.0), pitch_right);
            seed_tracks_from_pose(tracks_left, smooth_cur_left, pose, ds.model,
                                  ds.rig.left, geom::Vec3::Zero(), pitch_px);
            seed_tracks_from_pose(tracks_right, smooth_cur_right, pose, ds.model,
                                  ds.rig.right, geom::Vec3(ds.rig.baseline, 0.0, 0.0),
                                  pitch_right);
            stage["rpf_refine"] = ms_since(stage_start);
        } catch (const TrackError& e) {
            frame_lost = true;
            reason = e.what();
            pose = preds.back();
        }

        preds.push_back(pose);
        lost[i] = frame_lost ? 1 : 0;
        reasons[i] = frame_lost ? sanitize(reason) : "";
        if (!frame_lost) queue.enqueue(pose);

        stage_start = Clock::now();
        if (cfg.dump_debug) {
            char suffix[24];
            std::snprintf(suffix, sizeof(suffix), "%06ld", i);
            if (!cluster_left.labels.empty())
                dump_clusters(debug_dir / ("clusters_L_" + std::string(suffix) + ".csv"),
                              tracked_left, cluster_left);
            if (!cluster_right.labels.empty())
                dump_clusters(debug_dir / ("clusters_R_" + std::string(suffix) + ".csv"),
                              tracked_right, cluster_right);
            if (!hypotheses.items.empty())
                dump_hypotheses(debug_dir / ("hypotheses_" + std::string(suffix) + ".csv"),
                                hypotheses);
            if (!obs_left.empty())
                dump_observations(debug_dir / ("obs_L_" + std::string(suffix) + ".csv"),
                                  obs_left);
            if (!obs_right.empty())
                dump_observations(debug_dir / ("obs_R_" + std::string(suffix) + ".csv"),
                                  obs_right);
            if (!matches_left.empty())
                dump_matches(debug_dir / ("matches_L_" + std::string(suffix) + ".csv"),
                             matches_left);
            if (!matches_right.empty())
                dump_matches(debug_dir / ("matches_R_" + std::string(suffix) + ".csv"),
                             matches_right);
        }
        stage["write"] = ms_since(stage_start);

        if (cur_left_pyr.level_count() > 0) prev_left = std::move(cur_left_pyr);
        if (cur_right_pyr.level_count() > 0) prev_right = std::move(cur_right_pyr);
        if (smooth_cur_left.width > 0) smooth_prev_left = std::move(smooth_cur_left);
        if (smooth_cur_right.width > 0) smooth_prev_right = std::move(smooth_cur_right);

        timing += std::to_string(i);
        for (const char* s : kStages) {
            result.stage_ms[s] += stage[s];
            timing += "," + io::fmt(stage[s]);
        }
        timing += "," + io::fmt(ms_since(frame_start)) + "\n";
    }

    stage_start = Clock::now();
    io::write_poses(cfg.out / "poses_pred.txt", preds);
    {
        std::ofstream status(cfg.out / "status.csv", std::ios::binary);
        if (!status) throw IoError("cannot write " + (cfg.out / "status.csv").string());
        status << "idx,lost,reason\n";
        for (long i = 0; i < n; ++i)
            status << i << ',' << int(lost[i]) << ',' << reasons[i] << '\n';
    }
    result.stage_ms["write"] += ms_since(stage_start);
    result.wall_seconds =
        std::chrono::duration<double>(Clock::now() - wall_start).count();

    {
        std::ofstream timing_out(cfg.out / "timing.csv", std::ios::binary);
        if (!timing_out) throw IoError("cannot write " + (cfg.out / "timing.csv").string());
        timing_out << timing;
    }

    result.frames = n;
    for (uint8_t flag : lost) result.lost += flag;
    return result;
}

eval::MetricsReport run_eval(const std::filesystem::path& dataset,
                             const std::filesystem::path& trace,
                             const std::filesystem::path& out_dir) {
    const Dataset ds = load_dataset(dataset);
    const std::vector<geom::Pose> preds = io::read_poses(trace / "poses_pred.txt");
    if (preds.size() != ds.gt.size())
        throw GeometryMismatch("trace has " + std::to_string(preds.size()) +
                               " frames but the dataset has " + std::to_string(ds.gt.size()));

    std::vector<uint8_t> lost(preds.size(), 0);
    const std::filesystem::path status_path = trace / "status.csv";
    if (std::filesystem::exists(status_path)) {
        std::ifstream in(status_path);
        if (!in) throw IoError("cannot open " + status_path.string());
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const size_t c1 = line.find(',');
            const size_t c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw IoError(status_path.string() + ": malformed row '" + line + "'");
            const long idx = std::stol(line.substr(0, c1));
            if (idx < 0 || idx >= static_cast<long>(lost.size()))
                throw IoError(status_path.string() + ": frame index out of range");
            lost[idx] = line.substr(c1 + 1, c2 - c1 - 1) == "1" ? 1 : 0;
        }
    }

    std::vector<std::string> bins;
    bins.reserve(ds.manifest.size());
    for (const io::ManifestRow& row : ds.manifest) bins.push_back(row.bin);

    const eval::MetricsReport report =
        eval::aggregate(preds, ds.gt, bins, lost, ds.model, ds.rig.left);
    eval::write_report(report, out_dir);
    return report;
}

std::string report_invariant_violation(const eval::MetricsReport& report) {
    auto check_bin = [](const std::string& name, const eval::BinMetrics& b) -> std::string {
        auto fraction_ok = [](double f) { return f >= 0.0 && f <= 1.0; };
        if (b.frames < 0) return name + ": negative frame count";
        if (!fraction_ok(b.add_recall) || !fraction_ok(b.adds_recall) || !fraction_ok(b.proj5))
            return name + ": recall outside [0, 1]";
        if (b.switches < 0) return name + ": negative switch count";
        if (b.e_p_cm.mean < 0.0 || b.e_p_cm.stdev < 0.0 || b.e_r_deg.mean < 0.0 ||
            b.e_r_deg.stdev < 0.0)
            return name + ": negative error statistic";
        return "";
    };
    if (report.frames <= 0) return "report covers no frames";
    if (report.lost < 0 || report.lost > report.frames) return "lost count out of range";
    if (std::string err = check_bin("overall", report.overall); !err.empty()) return err;
    long bin_frames = 0;
    long bin_switches = 0;
    for (const auto& [name, metrics] : report.bins) {
        if (std::string err = check_bin(name, metrics); !err.empty()) return err;
        bin_frames += metrics.frames;
        bin_switches += metrics.switches;
    }
    if (!report.bins.empty()) {
        if (bin_frames != report.overall.frames) return "bin frame counts do not sum to total";
        if (bin_switches != report.overall.switches) return "bin switches do not sum to total";
    }
    return "";
}

std::filesystem::path run_ablate(const RunConfig& base, const std::string& axis,
                                 const std::filesystem::path& out_dir) {
    std::vector<std::pair<std::string, RunConfig>> settings;
    if (axis == "amq_n") {
        for (int n = 0; n <= 4; ++n) {
            RunConfig cfg = base;
            cfg.amq_n = n;
            settings.emplace_back("amq_n=" + std::to_string(n), cfg);
        }
    } else if (axis == "distribution") {
        for (rpf::Distribution d : {rpf::Distribution::uniform, rpf::Distribution::gaussian,
                                    rpf::Distribution::laplace, rpf::Distribution::beta}) {
            RunConfig cfg = base;
            cfg.sampler.distribution = d;
            settings.emplace_back("distribution=" + rpf::distribution_name(d), cfg);
        }
    } else {
        throw ConfigError("unknown ablation axis '" + axis +
                          "' (expected amq_n or distribution)");
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string());

    std::string csv =
        "setting,frames,lost,add_recall_01d,adds_recall_01d,e_p_cm_mean,e_p_cm_stdev,"
        "e_r_deg_mean,e_r_deg_stdev,switch_count,proj5_rate\n";
    for (auto& [label, cfg] : settings) {
        std::string dir_name = label;
        std::replace(dir_name.begin(), dir_name.end(), '=', '_');
        cfg.out = out_dir / dir_name;
        run_track(cfg);
        const eval::MetricsReport report = run_eval(cfg.dataset, cfg.out, cfg.out);
        const eval::BinMetrics& o = report.overall;
        csv += label + "," + std::to_string(report.frames) + "," + std::to_string(report.lost) +
               "," + io::fmt(o.add_recall) + "," + io::fmt(o.adds_recall) + "," +
               io::fmt(o.e_p_cm.mean) + "," + io::fmt(o.e_p_cm.stdev) + "," +
               io::fmt(o.e_r_deg.mean) + "," + io::fmt(o.e_r_deg.stdev) + "," +
               std::to_string(o.switches) + "," + io::fmt(o.proj5) + "\n";
    }

    const std::filesystem::path csv_path = out_dir / ("ablation_" + axis + ".csv");
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + csv_path.string());
    out << csv;
    return csv_path;
}

}  // namespace raypose::pipeline
