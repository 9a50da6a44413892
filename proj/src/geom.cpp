#include "raypose/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace raypose::geom {

bool Rotation::is_valid(const Mat3& m, double tol) {
    const double ortho = (m.transpose() * m - Mat3::Identity()).norm();
    return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

Rotation Rotation::from_matrix(const Mat3& m) {
    if (!is_valid(m)) {
        throw GeometryMismatch("matrix is not a proper rotation");
    }
    return Rotation(m, unchecked{});
}

Rotation Rotation::axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (n <= 0.0) {
        throw GeometryMismatch("axis_angle: zero axis");
    }
    Eigen::AngleAxisd aa(angle, axis / n);
    return Rotation(aa.toRotationMatrix(), unchecked{});
}

Rotation Rotation::rx(double angle) { return axis_angle(Vec3::UnitX(), angle); }
Rotation Rotation::ry(double angle) { return axis_angle(Vec3::UnitY(), angle); }
Rotation Rotation::rz(double angle) { return axis_angle(Vec3::UnitZ(), angle); }

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw GeometryMismatch("intrinsics: focal lengths must be positive");
    }
    if (width <= 0 || height <= 0 || cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
        throw GeometryMismatch("intrinsics: principal point outside image");
    }
}

void StereoRig::validate() const {
    left.validate();
    right.validate();
    if (!(baseline > 0.0)) {
        throw GeometryMismatch("stereo rig: baseline must be positive");
    }
}

double ObjectModel::compute_diameter(const std::vector<Vec3>& points) {
    double best = 0.0;
    for (size_t i = 0; i < points.size(); ++i) {
        for (size_t j = i + 1; j < points.size(); ++j) {
            best = std::max(best, (points[i] - points[j]).norm());
        }
    }
    return best;
}

void ObjectModel::validate() const {
    if (points.empty()) {
        throw EmptyModel("object model has no points");
    }
    if (std::abs(compute_diameter(points) - diameter) > 1e-6) {
        throw GeometryMismatch("object model: stored diameter does not match points");
    }
    bool has_identity = false;
    for (const Rotation& g : symmetry_group) {
        if (!Rotation::is_valid(g.matrix())) {
            throw GeometryMismatch("object model: invalid symmetry rotation");
        }
        if ((g.matrix() - Mat3::Identity()).norm() <= 1e-9) {
            has_identity = true;
        }
    }
    if (!has_identity) {
        throw GeometryMismatch("object model: symmetry group must contain the identity");
    }
}

double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a <= -M_PI) {
        a += 2.0 * M_PI;
    } else if (a > M_PI) {
        a -= 2.0 * M_PI;
    }
    return a;
}

Rotation euler_to_rotation(const EulerAngles& e) {
    return Rotation::rz(e.yaw) * Rotation::ry(e.pitch) * Rotation::rx(e.roll);
}

EulerAngles rotation_to_euler(const Rotation& r) {
    const Mat3& m = r.matrix();
    EulerAngles e;
    const double sp = -m(2, 0);
    if (sp >= 1.0 - 1e-12) {
        // gimbal lock, pitch = +pi/2: roll forced to 0, yaw absorbs the rest
        e.pitch = M_PI / 2.0;
        e.roll = 0.0;
        e.yaw = std::atan2(-m(0, 1), m(1, 1));
    } else if (sp <= -1.0 + 1e-12) {
        e.pitch = -M_PI / 2.0;
        e.roll = 0.0;
        e.yaw = std::atan2(-m(0, 1), m(1, 1));
    } else {
        e.pitch = std::asin(sp);
        e.roll = std::atan2(m(2, 1), m(2, 2));
        e.yaw = std::atan2(m(1, 0), m(0, 0));
    }
    e.roll = wrap_angle(e.roll);
    e.yaw = wrap_angle(e.yaw);
    return e;
}

PixelDepth project(const CameraIntrinsics& k, const Vec3& c) {
    if (!(c.z() > 0.0)) {
        throw DegenerateDepth("project: point has non-positive depth");
    }
    PixelDepth p;
    p.depth = c.z();
    p.u = k.fx * c.x() / c.z() + k.cx;
    p.v = k.fy * c.y() / c.z() + k.cy;
    return p;
}

Vec3 back_project(const CameraIntrinsics& k, double u, double v, double depth) {
    if (!(depth > 0.0)) {
        throw DegenerateDepth("back_project: non-positive depth");
    }
    return Vec3(depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth);
}

Vec3 triangulate(const StereoRig& rig, const Vec2& left_px, const Vec2& right_px,
                 double eps_disp) {
    const double d = left_px.x() - right_px.x();
    if (!(d > 0.0)) {
        throw NonPositiveDisparity("triangulate: disparity must be positive");
    }
    if (d < eps_disp) {
        throw DisparityTooSmall("triangulate: disparity below reliability threshold");
    }
    const CameraIntrinsics& k = rig.left;
    return (rig.baseline / d) * Vec3(left_px.x() - k.cx, left_px.y() - k.cy, k.fx);
}

double geodesic_angle(const Rotation& a, const Rotation& b) {
    const double tr = (a.matrix().transpose() * b.matrix()).trace();
    const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
}

std::vector<Rotation> cube_symmetry_group() {
    std::vector<Rotation> group;
    const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& p : perms) {
        for (int sx = -1; sx <= 1; sx += 2) {
            for (int sy = -1; sy <= 1; sy += 2) {
                for (int sz = -1; sz <= 1; sz += 2) {
                    Mat3 m = Mat3::Zero();
                    m(0, p[0]) = sx;
                    m(1, p[1]) = sy;
                    m(2, p[2]) = sz;
                    if (m.determinant() > 0.5) {
                        group.push_back(Rotation::from_matrix(m));
                    }
                }
            }
        }
    }
    return group;  // 24 elements
}

double model_point_spacing(const ObjectModel& model) {
    const size_t n = model.points.size();
    if (n < 2) return model.diameter > 0.0 ? model.diameter : 1.0;
    std::vector<double> nn;
    const size_t stride = std::max<size_t>(1, n / 9);
    for (size_t i = 0; i < n; i += stride) {
        double best = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            best = std::min(best, (model.points[i] - model.points[j]).norm());
        }
        if (best > 0.0 && std::isfinite(best)) nn.push_back(best);
    }
    if (nn.empty()) return model.diameter > 0.0 ? model.diameter : 1.0;
    std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
    return nn[nn.size() / 2];
}

}  // namespace raypose::geom
