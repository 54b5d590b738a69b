#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "farpose/common.hpp"

namespace farpose::geom {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

/// First two columns of a rotation matrix, column-stacked:
/// (r00, r10, r20, r01, r11, r21).
using Rot6d = Eigen::Matrix<double, 6, 1>;

bool is_rotation(const Mat3& R, double tol = 1e-9);

Mat3 axis_angle_to_matrix(const Vec3& aa);
Vec3 matrix_to_axis_angle(const Mat3& R);

Mat3 rot_x(double rad);
Mat3 rot_y(double rad);
Mat3 rot_z(double rad);

Rot6d rot6d_from_matrix(const Mat3& R);

/// Gram-Schmidt recovery of a rotation from its 6D representation.
/// Throws DegenerateInput when the two halves are parallel.
Mat3 matrix_from_rot6d(const Rot6d& v);

/// Geodesic distance on SO(3), in degrees, clamped to [0, 180].
double geodesic_deg(const Mat3& Ra, const Mat3& Rb);

enum class Frame { Marker, Slam, World, Camera };

struct RigidPose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    Frame frame = Frame::World;
};

struct SimilarityTransform {
    double s = 1.0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return s * (R * p + t); }
    SimilarityTransform inverse() const;
};

enum class CameraModel { Pinhole, FisheyeEquidistant };

/// Extrinsics map world to camera: p_cam = R * p_world + t.
/// Camera center in world coordinates is -R^T t.
struct Camera {
    CameraModel model = CameraModel::Pinhole;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    double fov_deg = 0;  // fisheye only

    Vec3 center() const { return -R.transpose() * t; }
    void validate() const;
};

struct Projection {
    Vec2 px = Vec2::Zero();
    bool visible = false;
};

Projection project(const Camera& cam, const Vec3& p_world);

/// Back-projects a pixel to a unit ray in the camera frame.
Vec3 unproject(const Camera& cam, const Vec2& px);

/// Unit direction from the camera center toward p_world, expressed in the
/// camera frame.
Vec3 ray_direction(const Camera& cam, const Vec3& p_world);

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit
};

struct TriangulationResult {
    Vec3 point;
    double rms_ray_dist;
};

/// Least-squares point minimizing the sum of squared point-to-ray distances.
TriangulationResult triangulate(const std::vector<Ray>& rays);

/// Similarity alignment minimizing sum ||dst_i - s (R src_i + t)||^2.
SimilarityTransform umeyama(const std::vector<Vec3>& src,
                            const std::vector<Vec3>& dst);

/// Time-indexed rigid poses in one frame of reference. `frames` holds the
/// source frame index of each pose; sparse trajectories skip frames.
struct Trajectory {
    Frame frame = Frame::World;
    std::vector<int> frames;
    std::vector<RigidPose> poses;
};

struct PnpResult {
    RigidPose pose;  // frame = Camera extrinsics (world->camera R, t)
    double rms_reproj_px;
};

/// Pose from 3D-2D correspondences: DLT initialization followed by
/// Levenberg-damped Gauss-Newton on pixel reprojection error.
/// `intrinsics` supplies the camera model; its extrinsics are ignored.
PnpResult pnp_markers(const std::vector<std::pair<Vec3, Vec2>>& corrs,
                      const Camera& intrinsics, int max_iter = 100);

}  // namespace farpose::geom
