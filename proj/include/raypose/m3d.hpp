#pragma once

#include <vector>

#include "raypose/geom.hpp"
#include "raypose/vision.hpp"

namespace raypose::m3d {

using geom::StereoRig;
using geom::Vec2;
using geom::Vec3;

struct ConsistencyParams {
    double lambda = 0.3;  // spatial balance factor on the normalized-position dims
    double tau = 1.0;     // pairwise feature-distance threshold (z-score units)
};

// Pairwise motion-consistency relation over the tracked subset of a
// TrackedPointSet. Row/column i corresponds to point_ids[i] in the source set.
struct ConsistencyMatrix {
    std::vector<uint8_t> data;   // row-major n*n, symmetric, unit diagonal
    std::vector<int> point_ids;  // matrix index -> point index in the source set

    int size() const { return static_cast<int>(point_ids.size()); }
    uint8_t at(int i, int j) const { return data[static_cast<size_t>(i) * size() + j]; }
};

struct ClusterResult {
    std::vector<int> labels;  // per source point: cluster id, or -1 for lost points
    int dominant = -1;
    Vec2 centroid_2d = Vec2::Zero();    // mean of the dominant cluster, post-displacement
    bool low_confidence = false;        // set when every cluster looked static
    std::vector<int> dominant_points;   // source point indices of the dominant cluster
};

// C_ij = 1 iff the 4-d features [z(du), z(dv), lambda*z(u_hat), lambda*z(v_hat)]
// of tracked points i and j differ by at most tau (Euclidean). z is the
// per-dimension population z-score over all tracked points; zero-variance
// dimensions map to 0. The balance factor scales the position dimensions
// after normalization (inside, the z-score would cancel it). Throws
// InsufficientPoints below 2 tracked points.
ConsistencyMatrix consistency_matrix(const vision::TrackedPointSet& tracked,
                                     const ConsistencyParams& params = {});

// Connected components of the consistency graph, as lists of source point
// indices. Clusters are ordered (= labeled) by their smallest member.
std::vector<std::vector<int>> cluster(const ConsistencyMatrix& consistency);

// Drops clusters whose median displacement magnitude is below eps_static,
// then picks the largest remaining cluster; ties go to the larger mean
// displacement, then the smallest label. If everything is static, falls back
// to the largest cluster overall and flags low confidence.
ClusterResult select_dominant(const std::vector<std::vector<int>>& clusters,
                              const vision::TrackedPointSet& tracked,
                              double eps_static = 0.5);

// Stereo triangulation of the per-eye dominant centroids. Propagates
// NonPositiveDisparity / DisparityTooSmall.
Vec3 track_center(const StereoRig& rig, const ClusterResult& left,
                  const ClusterResult& right, double eps_disp = 0.5);

}  // namespace raypose::m3d
