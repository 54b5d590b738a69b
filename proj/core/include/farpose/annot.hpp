#pragma once

#include <optional>
#include <vector>

#include "farpose/geom.hpp"
#include "farpose/hand.hpp"
#include "farpose/synth.hpp"

namespace farpose::annot {

using geom::Camera;
using geom::Mat3;
using geom::SimilarityTransform;
using geom::Trajectory;
using geom::Vec2;
using geom::Vec3;

struct AlignedTrajectory {
    Trajectory traj;  // world frame, dense (every SLAM frame)
    SimilarityTransform transform;
    std::vector<double> residuals;  // meters, at the common marker frames
};

struct VirtualCrop {
    std::array<double, 4> bbox;  // x0, y0, x1, y1 in source pixels
    Camera virtual_cam;          // 256x256 pinhole, extrinsics unset
    Mat3 rotation;               // chest camera frame -> virtual camera frame
};

/// Per-frame PnP against the calibrated markers. Frames with fewer than four
/// visible markers are absent from the output.
Trajectory chest_poses_from_markers(
    const std::vector<std::vector<std::pair<int, Vec2>>>& marker_obs,
    const Camera& intrinsics, const std::vector<Vec3>& marker_world);

/// Similarity alignment of the dense SLAM trajectory onto the sparse
/// marker-frame trajectory, using the translations at common frames.
AlignedTrajectory align_trajectories(const Trajectory& marker_traj,
                                     const Trajectory& slam_traj);

/// World-frame hand orientation from the virtual-crop estimate.
Mat3 hand_orientation_to_world(const Mat3& orientation_virtual, const Mat3& rotation_crop,
                               const Mat3& rotation_world_chest);

/// Undistorted pinhole camera aimed at the bbox center, FoV matching the
/// angular extent of the longer bbox side, 256x256 px.
VirtualCrop virtual_crop(const std::array<double, 4>& bbox, const Camera& chest_cam);

struct WristObservation {
    int camera = 0;
    Vec2 px = Vec2::Zero();
    double conf = 0;
};

struct ReliableTriangulation {
    Vec3 point;
    std::vector<int> inliers;  // camera ids
    double rms_ray_dist;
};

/// Pairwise reliable-camera selection followed by triangulation over the
/// reliable set. nullopt means the frame should be skipped.
std::optional<ReliableTriangulation> reliable_triangulate(
    const std::vector<WristObservation>& obs, const std::vector<Camera>& rig,
    double tau_pair, double tau_final);

struct MaskView {
    const synth::MaskRle* mask;
    const Camera* camera;
};

/// Grid search over the elbow-wrist interior point maximizing projected
/// joint-in-mask coverage. Ties break toward the smaller ratio.
double division_ratio(const Vec3& elbow3d, const Vec3& wrist3d,
                      const hand::Joints& joints_local, const Mat3& orientation,
                      const std::vector<MaskView>& views);

struct AnnotationConfig {
    double tau_pair = 0.05;    // m
    double tau_final = 0.075;  // m
    double min_conf = 0.3;     // observations below this are not triangulated
    double slam_sigma_t = 0.0; // simulated SLAM noise, meters
    double slam_sigma_r = 0.0; // radians
    uint64_t slam_seed = 7;
};

struct HandAnnotation {
    bool ok = false;
    std::array<double, hand::kShapeDim> beta{};
    std::array<double, 3 * hand::kNumArticulated> theta{};
    Mat3 orientation_world = Mat3::Identity();
    Vec3 wrist_world = Vec3::Zero();
    std::vector<int> inlier_cameras;
    double ray_rms_m = 0;
    double ratio = 0;
};

struct FrameAnnotation {
    int t = 0;
    std::array<HandAnnotation, 2> hands;
};

struct SceneAnnotation {
    std::vector<FrameAnnotation> frames;
    int skipped_marker_frames = 0;  // chest frames with < 4 markers, both cams
    std::array<SimilarityTransform, 2> slam_gauges;
};

/// Full annotation pipeline over a recorded scene.
SceneAnnotation annotate_scene(const synth::SceneRecording& scene,
                               const AnnotationConfig& cfg);

std::string to_json(const SceneAnnotation& ann);

}  // namespace farpose::annot
