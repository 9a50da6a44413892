#include "raypose/amq.hpp"

#include <algorithm>
#include <cmath>

namespace raypose::amq {

PoseQueue::PoseQueue(int capacity, double alpha) : capacity_(capacity), alpha_(alpha) {
    if (capacity < 0) throw ConfigError("PoseQueue: capacity must be >= 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("PoseQueue: alpha must be in (0,1]");
}

void PoseQueue::enqueue(const Pose& pose) {
    if (capacity_ == 0) return;
    entries_.push_front(pose);
    while (entries_.size() > static_cast<size_t>(capacity_)) {
        entries_.pop_back();
    }
}

Rotation initial_hypothesis(const Vec3& c) {
    const double n = c.norm();
    if (c.z() <= 0.0 || n == 0.0) {
        throw DegenerateDepth("initial_hypothesis: center not in front of the camera");
    }
    const double azimuth = std::atan2(c.x(), c.z());
    const double elevation = -std::asin(std::clamp(c.y() / n, -1.0, 1.0));
    return Rotation::ry(azimuth) * Rotation::rx(elevation);
}

Rotation blend_from_seed(const PoseQueue& queue, const Rotation& seed) {
    geom::EulerAngles e = geom::rotation_to_euler(seed);
    const double keep = 1.0 - queue.alpha();
    for (size_t n = 0; n < queue.size(); ++n) {
        const geom::EulerAngles en = geom::rotation_to_euler(queue.entry(n).rotation);
        e.roll += keep * geom::wrap_angle(en.roll - e.roll);
        e.pitch += keep * geom::wrap_angle(en.pitch - e.pitch);
        e.yaw += keep * geom::wrap_angle(en.yaw - e.yaw);
    }
    e.roll = geom::wrap_angle(e.roll);
    // Antipodal pitch pairs can blend past the pole; clamp back into range.
    e.pitch = std::clamp(geom::wrap_angle(e.pitch), -M_PI / 2.0, M_PI / 2.0);
    e.yaw = geom::wrap_angle(e.yaw);
    return geom::euler_to_rotation(e);
}

Rotation pivot_rotation(const PoseQueue& queue, const Vec3& current_center,
                        long frame_index) {
    if (frame_index == 0 || queue.empty()) {
        return initial_hypothesis(current_center);
    }
    return blend_from_seed(queue, queue.entry(0).rotation);
}

}  // namespace raypose::amq
