#pragma once

#include <Eigen/Dense>
#include <vector>

#include "raypose/errors.hpp"

namespace raypose::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Proper rotation matrix (orthonormal, det +1). Construction through the
// named factories keeps the invariant without per-use checks.
class Rotation {
public:
    Rotation() : m_(Mat3::Identity()) {}

    // Validates orthonormality and det(+1) to 1e-9 (Frobenius); throws
    // GeometryMismatch otherwise.
    static Rotation from_matrix(const Mat3& m);

    static Rotation axis_angle(const Vec3& axis, double angle);
    static Rotation rx(double angle);
    static Rotation ry(double angle);
    static Rotation rz(double angle);

    const Mat3& matrix() const { return m_; }

    Rotation transposed() const { return Rotation(Mat3(m_.transpose()), unchecked{}); }

    Rotation operator*(const Rotation& rhs) const {
        return Rotation(Mat3(m_ * rhs.m_), unchecked{});
    }
    Vec3 operator*(const Vec3& v) const { return m_ * v; }

    static bool is_valid(const Mat3& m, double tol = 1e-9);

private:
    struct unchecked {};
    Rotation(const Mat3& m, unchecked) : m_(m) {}
    Mat3 m_;
};

// Intrinsic angles for the fixed composition R = Rz(yaw)·Ry(pitch)·Rx(roll).
// pitch in [-pi/2, pi/2]; roll, yaw in (-pi, pi].
struct EulerAngles {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
};

// Rigid transform from object frame to camera frame: x_cam = R·x_obj + C.
struct Pose {
    Rotation rotation;
    Vec3 center = Vec3::Zero();
};

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    void validate() const;
};

// Rectified stereo pair: pure horizontal displacement of `baseline` meters
// between the eyes, world frame = left camera frame.
struct StereoRig {
    CameraIntrinsics left;
    CameraIntrinsics right;
    double baseline = 0.0;

    void validate() const;
};

struct ObjectModel {
    std::vector<Vec3> points;            // object frame, meters
    double diameter = 0.0;               // max pairwise point distance
    std::vector<Rotation> symmetry_group;  // contains at least the identity

    static double compute_diameter(const std::vector<Vec3>& points);
    void validate() const;
};

struct PixelDepth {
    double u = 0.0;  // pixels
    double v = 0.0;  // pixels
    double depth = 0.0;  // meters
};

Rotation euler_to_rotation(const EulerAngles& e);

// Inverts euler_to_rotation. At |pitch| = pi/2 (gimbal lock) roll is forced
// to 0 and yaw absorbs the free angle.
EulerAngles rotation_to_euler(const Rotation& r);

// Perspective projection, [u·d, v·d, d]^T = K·c. Throws DegenerateDepth for
// c.z <= 0.
PixelDepth project(const CameraIntrinsics& k, const Vec3& c);

// Inverse projection: depth · K^-1 · [u, v, 1]^T. Throws DegenerateDepth for
// depth <= 0.
Vec3 back_project(const CameraIntrinsics& k, double u, double v, double depth);

// Disparity-based triangulation, C = (b/d)·[u_L - c_x, v_L - c_y, f_x]^T with
// d = u_L - u_R. Throws NonPositiveDisparity / DisparityTooSmall.
Vec3 triangulate(const StereoRig& rig, const Vec2& left_px, const Vec2& right_px,
                 double eps_disp = 0.5);

// arccos((trace(a^T b) - 1)/2), clamped to [0, pi].
double geodesic_angle(const Rotation& a, const Rotation& b);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

// The 24 proper rotations of the cube (signed axis permutations, det +1).
std::vector<Rotation> cube_symmetry_group();

// Typical surface grid pitch: median nearest-neighbour distance over a few
// sample points. Falls back to the diameter for degenerate models.
double model_point_spacing(const ObjectModel& model);

}  // namespace raypose::geom
