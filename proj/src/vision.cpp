#include "raypose/vision.hpp"

#include <algorithm>
#include <cmath>

namespace raypose::vision {

double GrayFrame::sample(double x, double y) const {
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    x0 = std::clamp(x0, 0, width - 2);
    y0 = std::clamp(y0, 0, height - 2);
    const double ax = x - x0;
    const double ay = y - y0;
    const double v00 = at(x0, y0);
    const double v10 = at(x0 + 1, y0);
    const double v01 = at(x0, y0 + 1);
    const double v11 = at(x0 + 1, y0 + 1);
    return (1.0 - ay) * ((1.0 - ax) * v00 + ax * v10) + ay * ((1.0 - ax) * v01 + ax * v11);
}

bool Pyramid::same_geometry(const Pyramid& other) const {
    if (levels.size() != other.levels.size()) return false;
    for (size_t i = 0; i < levels.size(); ++i) {
        if (levels[i].width != other.levels[i].width ||
            levels[i].height != other.levels[i].height) {
            return false;
        }
    }
    return true;
}

size_t TrackedPointSet::tracked_count() const {
    size_t n = 0;
    for (uint8_t f : tracked) n += f;
    return n;
}

Pyramid build_pyramid(const GrayFrame& frame, int levels) {
    if (levels < 1) {
        throw PyramidTooDeep("build_pyramid: levels must be >= 1");
    }
    const int min_dim = std::min(frame.width, frame.height);
    if (min_dim < (1 << levels)) {
        throw PyramidTooDeep("build_pyramid: frame too small for requested levels");
    }
    Pyramid pyr;
    pyr.levels.reserve(levels);
    pyr.levels.push_back(frame);
    for (int l = 1; l < levels; ++l) {
        const GrayFrame& src = pyr.levels.back();
        GrayFrame dst((src.width + 1) / 2, (src.height + 1) / 2, 0.0f, frame.timestamp);
        for (int y = 0; y < dst.height; ++y) {
            for (int x = 0; x < dst.width; ++x) {
                const int sx = 2 * x;
                const int sy = 2 * y;
                double sum = 0.0;
                int n = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        if (sx + dx < src.width && sy + dy < src.height) {
                            sum += src.at(sx + dx, sy + dy);
                            ++n;
                        }
                    }
                }
                dst.at(x, y) = static_cast<float>(sum / n);
            }
        }
        pyr.levels.push_back(std::move(dst));
    }
    return pyr;
}

namespace {

struct LkPoint {
    Vec2 flow = Vec2::Zero();
    bool tracked = false;
};

// Tracks one point coarse-to-fine. Windows must stay strictly inside the
// image (bilinear + central differences need a 2 px margin).
LkPoint lk_track_point(const Pyramid& prev, const Pyramid& next, const Vec2& p,
                       const LkParams& prm) {
    const int levels = prev.level_count();
    const int r = (prm.window - 1) / 2;
    const double divergence_bound = 2.0 * prm.window;

    Vec2 g = Vec2::Zero();  // accumulated flow at the current level's scale
    for (int l = levels - 1; l >= 0; --l) {
        const GrayFrame& a = prev.levels[l];
        const GrayFrame& b = next.levels[l];
        const double scale = 1.0 / (1 << l);
        const Vec2 pl = p * scale;

        if (pl.x() - r < 2.0 || pl.x() + r > a.width - 3.0 || pl.y() - r < 2.0 ||
            pl.y() + r > a.height - 3.0) {
            return {};  // window leaves the frame at this level
        }

        // structure tensor and template gradients over the window
        const int wn = prm.window * prm.window;
        std::vector<double> tmpl(wn), gx(wn), gy(wn);
        double gxx = 0.0, gxy = 0.0, gyy = 0.0;
        int idx = 0;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx, ++idx) {
                const double x = pl.x() + dx;
                const double y = pl.y() + dy;
                tmpl[idx] = a.sample(x, y);
                const double ix = 0.5 * (a.sample(x + 1, y) - a.sample(x - 1, y));
                const double iy = 0.5 * (a.sample(x, y + 1) - a.sample(x, y - 1));
                gx[idx] = ix;
                gy[idx] = iy;
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
            }
        }
        const double tr = gxx + gyy;
        const double det = gxx * gyy - gxy * gxy;
        const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
        if (min_eig < prm.min_eigenvalue) {
            return {};
        }
        const double inv_det = 1.0 / det;

        Vec2 nu = Vec2::Zero();
        for (int it = 0; it < prm.iterations; ++it) {
            const Vec2 d = g + nu;
            if (pl.x() + d.x() - r < 1.0 || pl.x() + d.x() + r > b.width - 2.0 ||
                pl.y() + d.y() - r < 1.0 || pl.y() + d.y() + r > b.height - 2.0) {
                return {};
            }
            double bx = 0.0, by = 0.0;
            idx = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx, ++idx) {
                    const double di =
                        tmpl[idx] - b.sample(pl.x() + d.x() + dx, pl.y() + d.y() + dy);
                    bx += di * gx[idx];
                    by += di * gy[idx];
                }
            }
            const Vec2 eta(inv_det * (gyy * bx - gxy * by), inv_det * (gxx * by - gxy * bx));
            nu += eta;
            if (!nu.allFinite() || nu.norm() > divergence_bound) {
                return {};
            }
            if (eta.norm() < prm.convergence) {
                break;
            }
        }
        g += nu;
        if (l > 0) {
            g *= 2.0;
        }
    }

    LkPoint out;
    out.flow = g;
    out.tracked = true;
    return out;
}

}  // namespace

TrackedPointSet lk_track(const Pyramid& prev, const Pyramid& next,
                         const std::vector<Vec2>& points, const LkParams& params) {
    if (!prev.same_geometry(next)) {
        throw GeometryMismatch("lk_track: pyramid geometries differ");
    }
    if (params.window < 3 || params.window % 2 == 0) {
        throw GeometryMismatch("lk_track: window must be odd and >= 3");
    }
    const GrayFrame& base = prev.levels[0];
    TrackedPointSet out;
    out.frame_width = base.width;
    out.frame_height = base.height;
    out.points = points;
    out.displacements.assign(points.size(), Vec2::Zero());
    out.tracked.assign(points.size(), 0);

    for (size_t i = 0; i < points.size(); ++i) {
        const LkPoint r = lk_track_point(prev, next, points[i], params);
        if (!r.tracked) continue;
        const Vec2 cur = points[i] + r.flow;
        if (cur.x() < 0.0 || cur.x() > base.width - 1.0 || cur.y() < 0.0 ||
            cur.y() > base.height - 1.0) {
            continue;  // left the frame
        }
        out.displacements[i] = r.flow;
        out.tracked[i] = 1;
    }
    return out;
}

GrayFrame accumulate_events(const EventBatch& batch, double window, double at) {
    if (!(window > 0.0)) {
        throw OutOfRange("accumulate_events: window must be positive");
    }
    GrayFrame frame(batch.width, batch.height, 0.0f, at);
    std::vector<int> counts(static_cast<size_t>(batch.width) * batch.height, 0);
    for (const Event& e : batch.events) {
        if (e.t > at - window && e.t <= at) {
            counts[static_cast<size_t>(e.y) * batch.width + e.x] += 1;
        }
    }
    std::vector<int> nonzero;
    nonzero.reserve(256);
    for (int c : counts) {
        if (c > 0) nonzero.push_back(c);
    }
    if (nonzero.empty()) {
        return frame;
    }
    std::sort(nonzero.begin(), nonzero.end());
    const size_t rank = static_cast<size_t>(
        std::ceil(0.99 * static_cast<double>(nonzero.size())));
    const double p99 = static_cast<double>(nonzero[std::min(rank, nonzero.size()) - 1]);
    for (size_t i = 0; i < counts.size(); ++i) {
        frame.pixels[i] = static_cast<float>(std::min(1.0, counts[i] / p99));
    }
    return frame;
}

std::vector<Vec2> seed_points_in(const GrayFrame& frame, int x0, int y0, int x1, int y1,
                                 int grid_step, double min_gradient) {
    if (grid_step < 1) {
        throw OutOfRange("seed_points: grid_step must be >= 1");
    }
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, frame.width);
    y1 = std::min(y1, frame.height);
    std::vector<Vec2> out;
    if (x0 >= x1 || y0 >= y1) return out;
    auto grad_mag = [&](int x, int y) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, frame.width - 1);
        const int ym = std::max(y - 1, 0), yp = std::min(y + 1, frame.height - 1);
        const double ix = 0.5 * (frame.at(xp, y) - frame.at(xm, y));
        const double iy = 0.5 * (frame.at(x, yp) - frame.at(x, ym));
        return std::sqrt(ix * ix + iy * iy);
    };
    for (int cy = y0; cy < y1; cy += grid_step) {
        for (int cx = x0; cx < x1; cx += grid_step) {
            double best = -1.0;
            int bx = -1, by = -1;
            const int ye = std::min(cy + grid_step, y1);
            const int xe = std::min(cx + grid_step, x1);
            for (int y = cy; y < ye; ++y) {
                for (int x = cx; x < xe; ++x) {
                    const double m = grad_mag(x, y);
                    if (m > best) {
                        best = m;
                        bx = x;
                        by = y;
                    }
                }
            }
            if (best >= min_gradient) {
                out.emplace_back(bx, by);
            }
        }
    }
    return out;
}

std::vector<Vec2> seed_points(const GrayFrame& frame, int grid_step, double min_gradient) {
    return seed_points_in(frame, 0, 0, frame.width, frame.height, grid_step, min_gradient);
}

GrayFrame smooth3(const GrayFrame& frame) {
    GrayFrame tmp(frame.width, frame.height, 0.0f, frame.timestamp);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const float l = frame.at(std::max(0, x - 1), y);
            const float r = frame.at(std::min(frame.width - 1, x + 1), y);
            tmp.at(x, y) = 0.25f * (l + r) + 0.5f * frame.at(x, y);
        }
    GrayFrame out(frame.width, frame.height, 0.0f, frame.timestamp);
    for (int y = 0; y < frame.height; ++y)
        for (int x = 0; x < frame.width; ++x) {
            const float u = tmp.at(x, std::max(0, y - 1));
            const float d = tmp.at(x, std::min(frame.height - 1, y + 1));
            out.at(x, y) = 0.25f * (u + d) + 0.5f * tmp.at(x, y);
        }
    return out;
}

Vec2 dark_centroid(const GrayFrame& frame, const Vec2& p, int radius) {
    Vec2 cur = p;
    for (int pass = 0; pass < 2; ++pass) {
        const int cx = static_cast<int>(std::lround(cur.x()));
        const int cy = static_cast<int>(std::lround(cur.y()));
        const int x0 = std::max(0, cx - radius);
        const int y0 = std::max(0, cy - radius);
        const int x1 = std::min(frame.width - 1, cx + radius);
        const int y1 = std::min(frame.height - 1, cy + radius);
        if (x1 < x0 || y1 < y0) return cur;
        double mean = 0.0;
        int count = 0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                mean += frame.at(x, y);
                ++count;
            }
        mean /= static_cast<double>(count);
        double total = 0.0, sx = 0.0, sy = 0.0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double w = std::max(0.0, mean - static_cast<double>(frame.at(x, y)));
                total += w;
                sx += w * x;
                sy += w * y;
            }
        if (total < 1e-6) return cur;
        cur = Vec2(sx / total, sy / total);
    }
    return cur;
}

}  // namespace raypose::vision
