#include "raypose/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <random>
#include <utility>

#include "raypose/errors.hpp"
#include "raypose/io.hpp"
#include "raypose/rng.hpp"

namespace raypose::sim {
namespace {

using geom::CameraIntrinsics;
using geom::Rotation;

// Smooth multi-frequency texture over world-plane coordinates. Both eyes
// sample the same world function, so the background carries the true stereo
// disparity of a plane at background_depth.
// Strictly brighter than any object shade (see point_shade), so intensity
// separates background from object pixels.
double plane_texture(double x, double y) {
    return 0.75 + 0.08 * std::sin(55.0 * x + 1.3) * std::cos(38.0 * y - 0.7) +
           0.05 * std::sin(130.0 * x - 2.1) * std::cos(97.0 * y + 0.9) +
           0.02 * std::sin(310.0 * x + 0.4) * std::cos(260.0 * y - 1.7);
}

// Uniform body shade with a darker marker dot centred on every model point.
// Trackable features then coincide with the model's sample points, and the
// per-dot shades break the grid's periodicity for the flow tracker.
constexpr double kBodyShade = 0.32;

double point_shade(size_t index) {
    const uint64_t h = rng::splitmix64(0x5eedULL + index);
    return 0.02 + 0.27 * static_cast<double>(h >> 11) * 0x1.0p-53;
}


struct BackgroundKey {
    double fx, fy, cx, cy, depth, offset;
    int width, height;
    bool operator==(const BackgroundKey&) const = default;
};

// The plane is static, so the per-eye background is constant across frames;
// cache the two most recent renders (left/right alternate).
vision::GrayFrame background_frame(const CameraIntrinsics& k, double depth, double offset) {
    static std::mutex mutex;
    static std::vector<std::pair<BackgroundKey, vision::GrayFrame>> cache;
    const BackgroundKey key{k.fx, k.fy, k.cx, k.cy, depth, offset, k.width, k.height};
    std::lock_guard<std::mutex> lock(mutex);
    for (const auto& [cached_key, frame] : cache)
        if (cached_key == key) return frame;
    vision::GrayFrame frame(k.width, k.height);
    for (int y = 0; y < k.height; ++y) {
        const double wy = (y - k.cy) / k.fy * depth;
        for (int x = 0; x < k.width; ++x) {
            const double wx = (x - k.cx) / k.fx * depth + offset;
            frame.at(x, y) = static_cast<float>(plane_texture(wx, wy));
        }
    }
    if (cache.size() >= 2) cache.erase(cache.begin());
    cache.emplace_back(key, frame);
    return frame;
}

double spin_angle(const SpinParams& sp, double duration, double t) {
    return sp.omega_start * t + 0.5 * (sp.omega_end - sp.omega_start) * t * t / duration;
}

void apply_degradations(const SceneConfig& cfg, vision::GrayFrame& frame,
                        const std::vector<uint8_t>& object_mask, double min_u, double min_v,
                        double max_u, double max_v, bool has_object, Eye eye, long frame_index) {
    const uint64_t stream = eye == Eye::left ? 0xC0FFEEull : 0xC0FFEFull;
    std::mt19937_64 g(rng::derive_seed(cfg.seed, stream, static_cast<uint64_t>(frame_index)));

    if (has_object && cfg.perturb.occlusion_frac > 0.0) {
        const double bw = max_u - min_u + 1.0;
        const double bh = max_v - min_v + 1.0;
        const double area = bw * bh;
        const double frac = cfg.perturb.occlusion_frac * rng::uniform_unit(g);
        const double aspect = 0.5 + rng::uniform_unit(g);
        int rect_w = std::max(1L, std::lround(std::sqrt(frac * area * aspect)));
        rect_w = std::min<int>(rect_w, std::max(1, static_cast<int>(bw)));
        int rect_h = static_cast<int>(frac * area / rect_w);
        rect_h = std::min(rect_h, std::max(1, static_cast<int>(bh)));
        const int x0 = static_cast<int>(min_u + rng::uniform_unit(g) * std::max(0.0, bw - rect_w));
        const int y0 = static_cast<int>(min_v + rng::uniform_unit(g) * std::max(0.0, bh - rect_h));
        for (int y = y0; y < y0 + rect_h; ++y) {
            if (y < 0 || y >= frame.height) continue;
            for (int x = x0; x < x0 + rect_w; ++x) {
                if (x < 0 || x >= frame.width) continue;
                frame.at(x, y) = static_cast<float>(0.82 + 0.06 * std::sin(3.0 * x + 5.0 * y));
            }
        }
    }

    if (cfg.perturb.replace_frac > 0.0) {
        std::vector<size_t> object_pixels;
        for (size_t i = 0; i < object_mask.size(); ++i)
            if (object_mask[i]) object_pixels.push_back(i);
        const auto replaced = static_cast<size_t>(
            std::llround(cfg.perturb.replace_frac * static_cast<double>(object_pixels.size())));
        for (size_t j = 0; j < replaced; ++j) {
            const size_t pick = static_cast<size_t>(g() % object_pixels.size());
            frame.pixels[object_pixels[pick]] = static_cast<float>(rng::uniform_unit(g));
        }
    }

    if (cfg.perturb.noise_sigma > 0.0) {
        const double sigma = cfg.perturb.noise_sigma;
        size_t i = 0;
        const size_t n = frame.pixels.size();
        while (i < n) {  // Box-Muller pairs; cheaper than one draw per pixel
            const double u1 = rng::uniform_open(g);
            const double u2 = rng::uniform_unit(g);
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double z0 = r * std::cos(2.0 * M_PI * u2);
            const double z1 = r * std::sin(2.0 * M_PI * u2);
            frame.pixels[i] = static_cast<float>(
                std::clamp(frame.pixels[i] + sigma * z0, 0.0, 1.0));
            ++i;
            if (i < n) {
                frame.pixels[i] = static_cast<float>(
                    std::clamp(frame.pixels[i] + sigma * z1, 0.0, 1.0));
                ++i;
            }
        }
    } else {
        for (float& p : frame.pixels) p = std::clamp(p, 0.0f, 1.0f);
    }
}

}  // namespace

SceneKind scene_from_name(const std::string& name) {
    if (name == "a" || name == "spin") return SceneKind::spin;
    if (name == "b" || name == "pendulum") return SceneKind::pendulum;
    if (name == "c" || name == "degraded") return SceneKind::degraded;
    throw ConfigError("unknown scene '" + name + "' (expected a, b, or c)");
}

std::string scene_name(SceneKind kind) {
    switch (kind) {
        case SceneKind::spin: return "a";
        case SceneKind::pendulum: return "b";
        case SceneKind::degraded: return "c";
    }
    throw ConfigError("invalid scene kind");
}

void SceneConfig::validate() const {
    if (!(duration > 0.0) || !std::isfinite(duration))
        throw ConfigError("scene duration must be positive");
    if (!(frame_rate > 0.0) || !std::isfinite(frame_rate))
        throw ConfigError("scene frame_rate must be positive");
    if (frame_count() < 1) throw ConfigError("scene produces no frames");
    rig.validate();
    model.validate();
    if (!(event_threshold > 0.0)) throw ConfigError("event_threshold must be positive");
    if (!(background_depth > 0.0)) throw ConfigError("background_depth must be positive");
    if (kind == SceneKind::spin) {
        if (spin.axes.empty()) throw ConfigError("spin axis schedule is empty");
        for (const Vec3& axis : spin.axes)
            if (axis.norm() < 1e-12) throw ConfigError("spin axis must be nonzero");
        if (!std::isfinite(spin.omega_start) || !std::isfinite(spin.omega_end))
            throw ConfigError("spin velocities must be finite");
    } else {
        if (!(pendulum.length > 0.0)) throw ConfigError("pendulum length must be positive");
        if (!(pendulum.frequency > 0.0)) throw ConfigError("pendulum frequency must be positive");
    }
    if (perturb.noise_sigma < 0.0 || perturb.occlusion_frac < 0.0 ||
        perturb.occlusion_frac > 1.0 || perturb.replace_frac < 0.0 || perturb.replace_frac > 1.0)
        throw ConfigError("perturbation parameters out of range");
}

StereoRig default_rig() {
    StereoRig rig;
    rig.left = CameraIntrinsics{500.0, 500.0, 320.0, 240.0, 640, 480};
    rig.right = rig.left;
    rig.baseline = 0.1;
    return rig;
}

ObjectModel make_cube_model(double edge, int points_per_edge) {
    if (!(edge > 0.0)) throw ConfigError("cube edge must be positive");
    if (points_per_edge < 2) throw ConfigError("cube needs at least 2 points per edge");
    const int n = points_per_edge;
    const double h = edge / 2.0;
    std::vector<Vec3> points;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) {
                const bool surface = i == 0 || i == n - 1 || j == 0 || j == n - 1 ||
                                     k == 0 || k == n - 1;
                if (!surface) continue;
                points.emplace_back(-h + edge * i / (n - 1), -h + edge * j / (n - 1),
                                    -h + edge * k / (n - 1));
            }
    ObjectModel model;
    model.points = std::move(points);
    model.diameter = ObjectModel::compute_diameter(model.points);
    model.symmetry_group = geom::cube_symmetry_group();
    return model;
}

SceneConfig default_scene(SceneKind kind) {
    SceneConfig cfg;
    cfg.kind = kind;
    cfg.rig = default_rig();
    cfg.model = make_cube_model();
    return cfg;
}

Pose trajectory_pose(const SceneConfig& cfg, double t) {
    if (!(t >= -1e-9) || !(t <= cfg.duration + 1e-9))
        throw OutOfRange("trajectory time " + std::to_string(t) + " outside [0, " +
                         std::to_string(cfg.duration) + "]");
    t = std::clamp(t, 0.0, cfg.duration);
    if (cfg.kind == SceneKind::spin) {
        const SpinParams& sp = cfg.spin;
        if (sp.axes.empty()) throw ConfigError("spin axis schedule is empty");
        const auto segments = static_cast<long>(sp.axes.size());
        const double segment = cfg.duration / segments;
        const long k = std::min(static_cast<long>(t / segment), segments - 1);
        Rotation r;
        for (long j = 0; j < k; ++j) {
            const double turned = spin_angle(sp, cfg.duration, (j + 1) * segment) -
                                  spin_angle(sp, cfg.duration, j * segment);
            r = Rotation::axis_angle(sp.axes[j].normalized(), turned) * r;
        }
        const double turned = spin_angle(sp, cfg.duration, t) -
                              spin_angle(sp, cfg.duration, k * segment);
        r = Rotation::axis_angle(sp.axes[k].normalized(), turned) * r;
        return Pose{r, sp.center};
    }
    const PendulumParams& pd = cfg.pendulum;
    const double theta = pd.theta0 * std::cos(2.0 * M_PI * pd.frequency * t);
    const Vec3 center = pd.pivot + pd.length * Vec3(std::sin(theta), -std::cos(theta), 0.0);
    return Pose{Rotation::rz(theta), center};
}

RenderResult render_frame(const SceneConfig& cfg, const Pose& pose, Eye eye, long frame_index) {
    const CameraIntrinsics& k = eye == Eye::left ? cfg.rig.left : cfg.rig.right;
    const double offset = eye == Eye::left ? 0.0 : cfg.rig.baseline;

    RenderResult out;
    out.frame = background_frame(k, cfg.background_depth, offset);
    out.frame.timestamp = frame_index / cfg.frame_rate;

    struct Splat {
        double u, v, depth, shade;
        size_t index;
    };
    std::vector<Splat> splats;
    splats.reserve(cfg.model.points.size());
    double min_u = 1e30, min_v = 1e30, max_u = -1e30, max_v = -1e30;
    for (size_t i = 0; i < cfg.model.points.size(); ++i) {
        const Vec3 c = pose.rotation * cfg.model.points[i] + pose.center - Vec3(offset, 0.0, 0.0);
        if (c.z() <= 1e-9) continue;
        const double u = k.fx * c.x() / c.z() + k.cx;
        const double v = k.fy * c.y() / c.z() + k.cy;
        if (u < 0.0 || u > k.width - 1.0 || v < 0.0 || v > k.height - 1.0) continue;
        splats.push_back({u, v, c.z(), point_shade(i), i});
        min_u = std::min(min_u, u);
        min_v = std::min(min_v, v);
        max_u = std::max(max_u, u);
        max_v = std::max(max_v, v);
    }
    out.empty_render = splats.empty();

    // Painter order: far first so nearer points overwrite (hidden-point removal).
    std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        return a.depth != b.depth ? a.depth > b.depth : a.index < b.index;
    });

    // Discs sized to the point pitch tile the surface; painter order keeps the
    // nearest surface on top. 0.58 trades sub-pixel gaps at four-corner
    // junctions against bulging past the outermost sample points, keeping the
    // rendered silhouette within ~1px of the true surface. The half-pixel
    // coverage ramp anti-aliases the silhouette so it moves smoothly.
    const double spacing = geom::model_point_spacing(cfg.model);
    std::vector<uint8_t> object_mask(out.frame.pixels.size(), 0);
    auto draw_disc = [&](double cu, double cv, double radius, double shade, bool mark) {
        const int x0 = std::max(0, static_cast<int>(std::floor(cu - radius - 0.5)));
        const int x1 = std::min(k.width - 1, static_cast<int>(std::ceil(cu + radius + 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(cv - radius - 0.5)));
        const int y1 = std::min(k.height - 1, static_cast<int>(std::ceil(cv + radius + 0.5)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dist = std::hypot(x - cu, y - cv);
                const double w = std::clamp(radius + 0.5 - dist, 0.0, 1.0);
                if (w <= 0.0) continue;
                float& px = out.frame.at(x, y);
                px = static_cast<float>((1.0 - w) * px + w * shade);
                if (mark && w >= 0.05) object_mask[static_cast<size_t>(y) * k.width + x] = 1;
            }
        }
    };
    for (const Splat& s : splats) {
        const double body = 0.58 * spacing * k.fx / s.depth;
        draw_disc(s.u, s.v, body, kBodyShade, true);
        draw_disc(s.u, s.v, 0.22 * spacing * k.fx / s.depth, s.shade, false);
    }

    if (cfg.kind == SceneKind::degraded)
        apply_degradations(cfg, out.frame, object_mask, min_u, min_v, max_u, max_v,
                           !splats.empty(), eye, frame_index);
    return out;
}

vision::EventBatch synthesize_events(const vision::GrayFrame& prev,
                                     const vision::GrayFrame& next, double threshold) {
    if (prev.width != next.width || prev.height != next.height)
        throw GeometryMismatch("event synthesis needs frames of identical size");
    if (!(threshold > 0.0)) throw OutOfRange("event threshold must be positive");
    if (!(next.timestamp > prev.timestamp))
        throw OutOfRange("event synthesis needs increasing timestamps");

    vision::EventBatch batch;
    batch.width = next.width;
    batch.height = next.height;
    const double t0 = prev.timestamp;
    const double dt = next.timestamp - prev.timestamp;
    constexpr double kLogFloor = 1e-3;
    for (int y = 0; y < next.height; ++y)
        for (int x = 0; x < next.width; ++x) {
            const double delta =
                std::log(std::max(static_cast<double>(next.at(x, y)), kLogFloor)) -
                std::log(std::max(static_cast<double>(prev.at(x, y)), kLogFloor));
            const int count = static_cast<int>(std::floor(std::abs(delta) / threshold));
            const int polarity = delta >= 0.0 ? 1 : -1;
            for (int j = 0; j < count; ++j)
                batch.events.push_back({x, y, t0 + dt * (j + 1) / (count + 1), polarity});
        }
    std::stable_sort(batch.events.begin(), batch.events.end(),
                     [](const vision::Event& a, const vision::Event& b) { return a.t < b.t; });
    return batch;
}

double pixel_velocity(const SceneConfig& cfg, long frame_index) {
    if (frame_index < 0 || frame_index >= cfg.frame_count())
        throw OutOfRange("frame index " + std::to_string(frame_index) + " outside sequence");
    if (cfg.frame_count() < 2) return 0.0;
    const long i = std::max(frame_index, 1L);  // frame 0 reports the forward difference
    const double dt = 1.0 / cfg.frame_rate;
    const Pose a = trajectory_pose(cfg, (i - 1) * dt);
    const Pose b = trajectory_pose(cfg, std::min(i * dt, cfg.duration));
    double sum = 0.0;
    long used = 0;
    const CameraIntrinsics& k = cfg.rig.left;
    for (const Vec3& p : cfg.model.points) {
        const Vec3 ca = a.rotation * p + a.center;
        const Vec3 cb = b.rotation * p + b.center;
        if (ca.z() <= 1e-9 || cb.z() <= 1e-9) continue;
        const Vec2 pa(k.fx * ca.x() / ca.z() + k.cx, k.fy * ca.y() / ca.z() + k.cy);
        const Vec2 pb(k.fx * cb.x() / cb.z() + k.cx, k.fy * cb.y() / cb.z() + k.cy);
        sum += (pb - pa).norm();
        ++used;
    }
    return used == 0 ? 0.0 : cfg.frame_rate * sum / used;
}

std::string speed_bin(double v) {
    if (v < 45.0) return "Regular";
    if (v < 180.0) return "Medium";
    return "Faster";
}

SequenceGenerator::SequenceGenerator(SceneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
}

FrameObservation SequenceGenerator::next() {
    if (index_ >= cfg_.frame_count()) throw OutOfRange("sequence exhausted");
    FrameObservation obs;
    obs.timestamp = index_ / cfg_.frame_rate;
    obs.gt_pose = trajectory_pose(cfg_, std::min(obs.timestamp, cfg_.duration));
    RenderResult left = render_frame(cfg_, obs.gt_pose, Eye::left, index_);
    RenderResult right = render_frame(cfg_, obs.gt_pose, Eye::right, index_);
    obs.empty_render = left.empty_render || right.empty_render;
    obs.left = std::move(left.frame);
    obs.right = std::move(right.frame);
    if (index_ == 0) {
        obs.left_events = vision::EventBatch{obs.left.width, obs.left.height, {}};
        obs.right_events = vision::EventBatch{obs.right.width, obs.right.height, {}};
    } else {
        obs.left_events = synthesize_events(prev_left_, obs.left, cfg_.event_threshold);
        obs.right_events = synthesize_events(prev_right_, obs.right, cfg_.event_threshold);
    }
    obs.pixel_velocity = pixel_velocity(cfg_, index_);
    obs.bin = speed_bin(obs.pixel_velocity);
    prev_left_ = obs.left;
    prev_right_ = obs.right;
    ++index_;
    return obs;
}

void generate_dataset(const SceneConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::exists(out_dir)) {
        fs::create_directory(out_dir, ec);  // parent must exist already
        if (ec) throw IoError("cannot create output directory " + out_dir.string());
    }
    for (const char* sub : {"frames", "events"}) {
        fs::create_directory(out_dir / sub, ec);
        if (ec) throw IoError("cannot create directory " + (out_dir / sub).string());
    }

    io::write_rig(out_dir / "rig.txt", cfg.rig);
    io::write_model(out_dir / "model.txt", cfg.model);

    SequenceGenerator generator(cfg);
    std::vector<Pose> poses;
    std::vector<io::ManifestRow> manifest;
    while (generator.position() < generator.frame_count()) {
        const long i = generator.position();
        FrameObservation obs = generator.next();
        io::write_pgm(out_dir / "frames" / (io::frame_name("L", i) + ".pgm"), obs.left);
        io::write_pgm(out_dir / "frames" / (io::frame_name("R", i) + ".pgm"), obs.right);
        io::write_events(out_dir / "events" / (io::frame_name("L", i) + ".csv"),
                         obs.left_events);
        io::write_events(out_dir / "events" / (io::frame_name("R", i) + ".csv"),
                         obs.right_events);
        poses.push_back(obs.gt_pose);
        manifest.push_back({i, obs.timestamp, obs.bin, obs.pixel_velocity});
    }
    io::write_poses(out_dir / "poses.txt", poses);
    io::write_manifest(out_dir / "manifest", manifest);
}

}  // namespace raypose::sim
