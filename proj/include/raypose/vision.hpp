#pragma once

#include <cstdint>
#include <vector>

#include "raypose/geom.hpp"

namespace raypose::vision {

using geom::Vec2;

// Single-channel image, intensities in [0,1], row-major.
struct GrayFrame {
    int width = 0;
    int height = 0;
    double timestamp = 0.0;
    std::vector<float> pixels;

    GrayFrame() = default;
    GrayFrame(int w, int h, float fill = 0.0f, double t = 0.0)
        : width(w), height(h), timestamp(t), pixels(static_cast<size_t>(w) * h, fill) {}

    float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }

    // Bilinear sample; caller keeps (x, y) within [0, w-1] x [0, h-1].
    double sample(double x, double y) const;
};

struct Event {
    int x = 0;
    int y = 0;
    double t = 0.0;
    int polarity = 1;  // +1 or -1
};

struct EventBatch {
    int width = 0;
    int height = 0;
    std::vector<Event> events;  // sorted by t non-decreasing
};

struct Pyramid {
    std::vector<GrayFrame> levels;  // level 0 = source frame

    int level_count() const { return static_cast<int>(levels.size()); }
    bool same_geometry(const Pyramid& other) const;
};

// Per-frame feature points with flow. `points` are positions at time t,
// `displacements` the flow to t+1; current position = points[i] + displacements[i].
struct TrackedPointSet {
    int frame_width = 0;
    int frame_height = 0;
    std::vector<Vec2> points;
    std::vector<Vec2> displacements;
    std::vector<uint8_t> tracked;

    size_t size() const { return points.size(); }
    size_t tracked_count() const;
    Vec2 current(size_t i) const { return points[i] + displacements[i]; }
    Vec2 normalized(size_t i) const {
        return Vec2(points[i].x() / frame_width, points[i].y() / frame_height);
    }
};

struct LkParams {
    int window = 15;              // odd, >= 3
    int iterations = 10;          // max per level
    double min_eigenvalue = 1e-4; // structure tensor gate (normalized intensities)
    double convergence = 1e-2;    // early exit when the update drops below (px)
};

// 2x2 box filter + 2x downsample per level; level dims are ceil(prev/2).
// Throws PyramidTooDeep when min(w,h) < 2^levels.
Pyramid build_pyramid(const GrayFrame& frame, int levels);

// Pyramidal Lucas-Kanade with iterative 2x2 normal-equation solves and
// bilinear sampling. A point is lost when its window leaves the frame, the
// structure tensor is near-singular, or the update diverges.
TrackedPointSet lk_track(const Pyramid& prev, const Pyramid& next,
                         const std::vector<Vec2>& points, const LkParams& params = {});

// Per-pixel count of events with t in (at-window, at], normalized by the
// 99th-percentile nonzero count, clipped to [0,1].
GrayFrame accumulate_events(const EventBatch& batch, double window, double at);

// One point per grid cell at the cell's max gradient-magnitude pixel, kept
// if the magnitude reaches min_gradient; row-major tie-break.
std::vector<Vec2> seed_points(const GrayFrame& frame, int grid_step, double min_gradient);

// Same policy restricted to the clamped rectangle [x0, x1) x [y0, y1); cells
// are anchored at (x0, y0) so a moving region reseeds consistently.
std::vector<Vec2> seed_points_in(const GrayFrame& frame, int x0, int y0, int x1, int y1,
                                 int grid_step, double min_gradient);

// Separable 1-2-1 binomial smoothing with clamped borders. Pointwise
// consumers (seeding, blob gating) read this; tracking keeps raw frames.
GrayFrame smooth3(const GrayFrame& frame);

// Centroid of below-window-mean darkness in the (2*radius+1)^2 window around
// p, iterated twice; returns p unchanged when the window is near-uniform.
// Localizes a dark blob to its center regardless of which rim pixel seeded it.
Vec2 dark_centroid(const GrayFrame& frame, const Vec2& p, int radius);

}  // namespace raypose::vision
