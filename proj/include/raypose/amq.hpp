#pragma once

#include <deque>

#include "raypose/geom.hpp"

namespace raypose::amq {

using geom::Pose;
using geom::Rotation;
using geom::Vec3;

// FIFO memory of recent refined poses, newest first. capacity == 0 disables
// the queue (enqueue becomes a no-op).
class PoseQueue {
public:
    PoseQueue(int capacity = 4, double alpha = 0.5);

    void enqueue(const Pose& pose);

    int capacity() const { return capacity_; }
    double alpha() const { return alpha_; }
    size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const Pose& entry(size_t i) const { return entries_[i]; }  // 0 = newest
    const std::deque<Pose>& entries() const { return entries_; }

private:
    int capacity_;
    double alpha_;
    std::deque<Pose> entries_;
};

// Rotation whose z-axis points from the camera origin toward c, with no roll
// about the viewing direction. Throws DegenerateDepth for c.z <= 0 or ||c|| = 0.
Rotation initial_hypothesis(const Vec3& c);

// The queue blend loop on an explicit seed: iterate entries newest to oldest
// and update each Euler component as alpha*current + (1-alpha)*entry along
// the shortest arc. An empty queue returns the seed unchanged.
Rotation blend_from_seed(const PoseQueue& queue, const Rotation& seed);

// Pivot rotation for the given frame: initial_hypothesis(current_center) at
// frame 0 or on an empty queue, otherwise the blend seeded by the newest
// entry (the most recent refined rotation).
Rotation pivot_rotation(const PoseQueue& queue, const Vec3& current_center,
                        long frame_index);

}  // namespace raypose::amq
