#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "farpose/geom.hpp"
#include "farpose/hand.hpp"
#include "farpose/rng.hpp"

namespace farpose::synth {

using geom::Camera;
using geom::Mat3;
using geom::RigidPose;
using geom::Trajectory;
using geom::Vec2;
using geom::Vec3;

inline constexpr int kBodyKeypoints = 17;  // COCO layout
inline constexpr int kLeftElbow = 7, kRightElbow = 8;
inline constexpr int kLeftWrist = 9, kRightWrist = 10;

struct SceneConfig {
    double room_x = 8.0, room_y = 8.0, room_z = 2.6;  // meters
    int num_cameras = 4;
    int frames = 240;
    double fps = 15.0;
    int marker_count = 24;
    double marker_height = 2.6;
    double keypoint_sigma_px = 0.5;
    double occlusion_prob = 0.0;        // per camera, per frame
    double occlusion_mean_frames = 10.0;
    double marker_dropout_prob = 0.0;   // per chest camera, per frame
    double stub_pose_sigma = 0.0;       // noise on the chest-view beta/theta stub
    double max_hand_speed = 1.5;        // m/s
    double division_ratio_gt = 0.0;     // hand wrist along the elbow-wrist segment
    uint64_t seed = 1;

    void validate() const;
};

/// Run-length mask over a bbox-local window; runs alternate 0/1 starting
/// with 0, row-major.
struct MaskRle {
    int x0 = 0, y0 = 0, w = 0, h = 0;
    std::vector<int> runs;

    bool contains(const Vec2& px) const;
};

struct BodyKeypointObs {
    Vec2 px = Vec2::Zero();
    double conf = 0;
    bool visible = false;
};

struct HandObs {
    bool visible = false;
    Vec2 wrist_px = Vec2::Zero();
    double wrist_conf = 0;
    std::array<double, 4> bbox{};  // x0, y0, x1, y1
    std::array<Vec2, hand::kNumJoints> joint_px{};
    MaskRle mask;
};

struct ObservationFrame {
    int camera = 0;
    int t = 0;
    std::array<BodyKeypointObs, kBodyKeypoints> body;
    std::array<HandObs, 2> hands;  // 0 = left, 1 = right
};

/// Chest-camera surrogate for the cropped-image hand estimator: the hand
/// orientation expressed in the chest camera frame plus (noisy) shape/pose.
struct ChestHandObs {
    bool visible = false;
    std::array<double, 4> bbox{};
    Mat3 orientation_cam = Mat3::Identity();
    std::array<double, hand::kShapeDim> beta{};
    std::array<double, 3 * hand::kNumArticulated> theta{};
};

struct ChestFrameObs {
    std::vector<std::pair<int, Vec2>> markers;  // id, pixel
    std::array<ChestHandObs, 2> hands;
};

struct HandGt {
    hand::HandShape shape;
    hand::HandPose pose;
    hand::HandPlacement placement;
};

struct FrameGt {
    std::array<Vec3, kBodyKeypoints> body_world;
    std::array<HandGt, 2> hands;
    std::array<RigidPose, 2> chest_pose;  // world->camera extrinsics
};

struct SceneRecording {
    SceneConfig cfg;
    std::vector<Camera> rig;                  // fixed cameras, extrinsics set
    std::array<Camera, 2> chest_intrinsics;   // fisheye; extrinsics per frame in gt
    std::vector<Vec3> markers;
    std::vector<FrameGt> gt;
    // noiseless projections, for the reprojection-consistency invariant
    std::vector<std::vector<std::array<Vec2, kBodyKeypoints>>> noiseless_body;  // [t][cam]
    std::vector<std::vector<ObservationFrame>> frames;                          // [t][cam]
    std::vector<ChestFrameObs> chest_frames_left;   // chest camera 0, per t
    std::vector<ChestFrameObs> chest_frames_right;  // chest camera 1, per t

    const ChestFrameObs& chest_obs(int cam, int t) const {
        return cam == 0 ? chest_frames_left[t] : chest_frames_right[t];
    }
};

SceneRecording generate_scene(const SceneConfig& cfg);

/// Projects ground truth through the rig and applies noise and occlusions.
/// Fills `frames` and `noiseless_body` of the recording.
void render_observations(SceneRecording& scene, const SceneConfig& cfg);

/// Ground-truth chest trajectory (world frame) for the given chest camera.
Trajectory chest_trajectory(const SceneRecording& scene, int chest_cam);

/// Expresses a world trajectory in an arbitrary SLAM gauge (the inverse of
/// `gauge`) with optional per-frame noise. align_trajectories must undo this.
Trajectory corrupt_slam(const Trajectory& chest_gt, const geom::SimilarityTransform& gauge,
                        double sigma_t, double sigma_r, uint64_t seed);

std::string to_json(const SceneRecording& scene);
SceneRecording scene_from_json(const std::string& text);

void save_scene(const SceneRecording& scene, const std::string& path);
SceneRecording load_scene(const std::string& path);

}  // namespace farpose::synth
