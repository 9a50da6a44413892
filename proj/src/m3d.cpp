#include "raypose/m3d.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace raypose::m3d {

namespace {

double median(std::vector<double> values) {
    const size_t n = values.size();
    std::sort(values.begin(), values.end());
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

ConsistencyMatrix consistency_matrix(const vision::TrackedPointSet& tracked,
                                     const ConsistencyParams& params) {
    ConsistencyMatrix out;
    for (size_t i = 0; i < tracked.size(); ++i) {
        if (tracked.tracked[i]) out.point_ids.push_back(static_cast<int>(i));
    }
    const int n = out.size();
    if (n < 2) {
        throw InsufficientPoints("consistency_matrix: need at least 2 tracked points");
    }

    // Raw feature rows: [du, dv, u_hat, v_hat].
    std::vector<std::array<double, 4>> feat(n);
    for (int i = 0; i < n; ++i) {
        const int id = out.point_ids[i];
        const Vec2 d = tracked.displacements[id];
        const Vec2 nrm = tracked.normalized(id);
        feat[i] = {d.x(), d.y(), nrm.x(), nrm.y()};
    }

    // Per-dimension population z-score; zero-variance dims collapse to 0.
    for (int dim = 0; dim < 4; ++dim) {
        double mean = 0.0;
        for (const auto& f : feat) mean += f[dim];
        mean /= n;
        double var = 0.0;
        for (const auto& f : feat) var += (f[dim] - mean) * (f[dim] - mean);
        var /= n;
        const double stdev = std::sqrt(var);
        const double scale = dim >= 2 ? params.lambda : 1.0;
        for (auto& f : feat) {
            f[dim] = stdev > 1e-12 ? scale * (f[dim] - mean) / stdev : 0.0;
        }
    }

    out.data.assign(static_cast<size_t>(n) * n, 0);
    const double tau2 = params.tau * params.tau;
    for (int i = 0; i < n; ++i) {
        out.data[static_cast<size_t>(i) * n + i] = 1;
        for (int j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (int dim = 0; dim < 4; ++dim) {
                const double d = feat[i][dim] - feat[j][dim];
                d2 += d * d;
            }
            const uint8_t connected = d2 <= tau2 ? 1 : 0;
            out.data[static_cast<size_t>(i) * n + j] = connected;
            out.data[static_cast<size_t>(j) * n + i] = connected;
        }
    }
    return out;
}

std::vector<std::vector<int>> cluster(const ConsistencyMatrix& consistency) {
    const int n = consistency.size();
    std::vector<int> label(n, -1);
    std::vector<std::vector<int>> clusters;
    std::vector<int> stack;
    for (int i = 0; i < n; ++i) {
        if (label[i] >= 0) continue;
        const int id = static_cast<int>(clusters.size());
        clusters.emplace_back();
        stack.push_back(i);
        label[i] = id;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            clusters[id].push_back(consistency.point_ids[u]);
            for (int v = 0; v < n; ++v) {
                if (label[v] < 0 && consistency.at(u, v)) {
                    label[v] = id;
                    stack.push_back(v);
                }
            }
        }
        std::sort(clusters[id].begin(), clusters[id].end());
    }
    return clusters;
}

ClusterResult select_dominant(const std::vector<std::vector<int>>& clusters,
                              const vision::TrackedPointSet& tracked,
                              double eps_static) {
    if (clusters.empty()) {
        throw InsufficientPoints("select_dominant: no clusters");
    }
    ClusterResult out;
    out.labels.assign(tracked.size(), -1);
    for (size_t c = 0; c < clusters.size(); ++c) {
        for (int id : clusters[c]) out.labels[id] = static_cast<int>(c);
    }

    std::vector<double> med(clusters.size(), 0.0);
    std::vector<double> mean_disp(clusters.size(), 0.0);
    for (size_t c = 0; c < clusters.size(); ++c) {
        std::vector<double> mags;
        mags.reserve(clusters[c].size());
        for (int id : clusters[c]) mags.push_back(tracked.displacements[id].norm());
        med[c] = median(mags);
        double sum = 0.0;
        for (double m : mags) sum += m;
        mean_disp[c] = sum / mags.size();
    }

    auto better = [&](int a, int b) {  // does cluster a beat cluster b?
        if (clusters[a].size() != clusters[b].size())
            return clusters[a].size() > clusters[b].size();
        if (mean_disp[a] != mean_disp[b]) return mean_disp[a] > mean_disp[b];
        return a < b;
    };

    int best = -1;
    for (size_t c = 0; c < clusters.size(); ++c) {
        if (med[c] < eps_static) continue;
        if (best < 0 || better(static_cast<int>(c), best)) best = static_cast<int>(c);
    }
    if (best < 0) {  // everything static: largest overall, low confidence
        out.low_confidence = true;
        for (size_t c = 0; c < clusters.size(); ++c) {
            if (best < 0 || better(static_cast<int>(c), best)) best = static_cast<int>(c);
        }
    }

    out.dominant = best;
    out.dominant_points = clusters[best];
    Vec2 centroid = Vec2::Zero();
    for (int id : out.dominant_points) centroid += tracked.current(id);
    out.centroid_2d = centroid / static_cast<double>(out.dominant_points.size());
    return out;
}

Vec3 track_center(const StereoRig& rig, const ClusterResult& left,
                  const ClusterResult& right, double eps_disp) {
    return geom::triangulate(rig, left.centroid_2d, right.centroid_2d, eps_disp);
}

}  // namespace raypose::m3d
