#include <doctest.h>

#include <cmath>

#include "farpose/annot.hpp"
#include "farpose/rng.hpp"
#include "farpose/synth.hpp"

using namespace farpose;
using namespace farpose::annot;

namespace {

synth::SceneRecording clean_scene(int frames = 20, uint64_t seed = 3) {
    synth::SceneConfig cfg;
    cfg.frames = frames;
    cfg.keypoint_sigma_px = 0;
    cfg.seed = seed;
    synth::SceneRecording scene = synth::generate_scene(cfg);
    synth::render_observations(scene, cfg);
    return scene;
}

}  // namespace

TEST_CASE("chest_poses_from_markers inverts ground truth") {
    synth::SceneRecording scene = clean_scene();
    std::vector<std::vector<std::pair<int, Vec2>>> marker_obs;
    for (const auto& f : scene.chest_frames_left) marker_obs.push_back(f.markers);
    Trajectory traj = chest_poses_from_markers(marker_obs, scene.chest_intrinsics[0],
                                               scene.markers);
    Trajectory gt = synth::chest_trajectory(scene, 0);
    REQUIRE(!traj.frames.empty());
    for (size_t i = 0; i < traj.frames.size(); ++i) {
        int t = traj.frames[i];
        const geom::RigidPose& ref = gt.poses[t];
        CHECK(geom::geodesic_deg(traj.poses[i].R, ref.R) < rad2deg(1e-6));
        CHECK((traj.poses[i].t - ref.t).norm() < 1e-6);
    }
}

TEST_CASE("frames with too few markers are skipped") {
    synth::SceneRecording scene = clean_scene(6);
    std::vector<std::vector<std::pair<int, Vec2>>> marker_obs;
    for (const auto& f : scene.chest_frames_left) marker_obs.push_back(f.markers);
    marker_obs[2].resize(2);
    Trajectory traj = chest_poses_from_markers(marker_obs, scene.chest_intrinsics[0],
                                               scene.markers);
    for (int f : traj.frames) CHECK(f != 2);
}

TEST_CASE("align_trajectories identity and gauge recovery") {
    synth::SceneRecording scene = clean_scene();
    Trajectory gt = synth::chest_trajectory(scene, 0);

    AlignedTrajectory same = align_trajectories(gt, gt);
    CHECK(same.transform.s == doctest::Approx(1).epsilon(1e-9));
    CHECK((same.transform.R - Mat3::Identity()).norm() < 1e-9);
    CHECK(same.transform.t.norm() < 1e-8);

    SimilarityTransform gauge;
    gauge.s = 1.7;
    gauge.R = geom::rot_z(0.9) * geom::rot_x(-0.4);
    gauge.t = Vec3(0.3, -1.1, 0.5);
    Trajectory slam = synth::corrupt_slam(gt, gauge, 0, 0, 5);
    AlignedTrajectory aligned = align_trajectories(gt, slam);
    REQUIRE(aligned.traj.poses.size() == gt.poses.size());
    for (size_t i = 0; i < gt.poses.size(); ++i) {
        CHECK((aligned.traj.poses[i].R - gt.poses[i].R).norm() < 1e-6);
        CHECK((aligned.traj.poses[i].t - gt.poses[i].t).norm() < 1e-6);
    }
    for (double r : aligned.residuals) CHECK(r < 1e-6);
}

TEST_CASE("align_trajectories is equivariant under a world rotation") {
    synth::SceneRecording scene = clean_scene();
    Trajectory gt = synth::chest_trajectory(scene, 0);
    SimilarityTransform gauge;
    gauge.s = 0.8;
    gauge.R = geom::rot_y(1.2);
    gauge.t = Vec3(1, 2, 3);
    Trajectory slam = synth::corrupt_slam(gt, gauge, 0, 0, 5);

    Mat3 Rg = geom::rot_z(0.6) * geom::rot_y(-0.2);
    Trajectory rotated = gt;
    for (auto& p : rotated.poses) {
        p.R = Rg * p.R;
        p.t = Rg * p.t;
    }
    AlignedTrajectory base = align_trajectories(gt, slam);
    AlignedTrajectory rot = align_trajectories(rotated, slam);
    for (size_t i = 0; i < base.traj.poses.size(); ++i) {
        CHECK((rot.traj.poses[i].R - Rg * base.traj.poses[i].R).norm() < 1e-6);
        CHECK((rot.traj.poses[i].t - Rg * base.traj.poses[i].t).norm() < 1e-6);
    }
}

TEST_CASE("align_trajectories degenerate inputs") {
    Trajectory line;
    line.frame = geom::Frame::Marker;
    for (int i = 0; i < 6; ++i) {
        line.frames.push_back(i);
        line.poses.push_back({Mat3::Identity(), Vec3(i, 0, 0), geom::Frame::Marker});
    }
    CHECK_THROWS_AS(align_trajectories(line, line), DegenerateInput);
}

TEST_CASE("hand_orientation_to_world composition") {
    Mat3 O = geom::rot_x(0.3) * geom::rot_y(0.5);
    CHECK((hand_orientation_to_world(O, Mat3::Identity(), Mat3::Identity()) - O)
              .norm() < 1e-12);

    Mat3 res = hand_orientation_to_world(Mat3::Identity(), geom::rot_z(kPi / 2),
                                         Mat3::Identity());
    CHECK((res - geom::rot_z(-kPi / 2)).norm() < 1e-12);

    Rng rng(31);
    for (int i = 0; i < 20; ++i) {
        Vec3 ax(rng.gaussian(), rng.gaussian(), rng.gaussian());
        Mat3 Rc = geom::axis_angle_to_matrix(ax.normalized() * rng.uniform());
        Mat3 Rw = geom::axis_angle_to_matrix(
            Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized() *
            rng.uniform());
        Mat3 oracle = Rw.transpose() * Rc.transpose() * O;
        CHECK((hand_orientation_to_world(O, Rc, Rw) - oracle).norm() < 1e-12);
    }
}

TEST_CASE("virtual_crop geometry") {
    Camera cam;
    cam.model = geom::CameraModel::FisheyeEquidistant;
    cam.fx = cam.fy = 320;
    cam.cx = cam.cy = 640;
    cam.width = cam.height = 1280;
    cam.fov_deg = 175;

    // bbox centered on the principal point.
    VirtualCrop centered = virtual_crop({600, 620, 680, 660}, cam);
    CHECK((centered.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(centered.virtual_cam.width == 256);
    CHECK(centered.virtual_cam.height == 256);

    CHECK_THROWS_AS(virtual_crop({100, 100, 100, 200}, cam), DegenerateInput);

    // A world point whose projection is the bbox center lands at (128, 128).
    std::array<double, 4> bbox{700, 500, 820, 580};
    VirtualCrop crop = virtual_crop(bbox, cam);
    Vec2 center(0.5 * (bbox[0] + bbox[2]), 0.5 * (bbox[1] + bbox[3]));
    Vec3 dir = geom::unproject(cam, center);
    Camera vc = crop.virtual_cam;
    vc.R = crop.rotation;  // chest frame -> virtual frame
    geom::Projection p = geom::project(vc, 3.0 * dir);
    CHECK(p.visible);
    CHECK((p.px - Vec2(128, 128)).norm() < 0.5);

    // Doubling a principal-point-centered bbox doubles tan(FoV / 2).
    Camera pin;
    pin.fx = pin.fy = 800;
    pin.cx = pin.cy = 640;
    pin.width = pin.height = 1280;
    VirtualCrop small_crop = virtual_crop({640 - 60, 640 - 40, 640 + 60, 640 + 40}, pin);
    VirtualCrop big_crop = virtual_crop({640 - 120, 640 - 80, 640 + 120, 640 + 80}, pin);
    double tan1 = 128.0 / small_crop.virtual_cam.fx;
    double tan2 = 128.0 / big_crop.virtual_cam.fx;
    CHECK(tan2 == doctest::Approx(2 * tan1).epsilon(1e-9));
}

TEST_CASE("reliable_triangulate clean, outlier, and failure cases") {
    std::vector<Camera> rig;
    for (int i = 0; i < 4; ++i) {
        Camera c;
        c.fx = c.fy = 900;
        c.cx = c.cy = 540;
        c.width = c.height = 1080;
        double a = 0.3 + 0.55 * i;  // arc rig: no near-antipodal pairs
        Vec3 center(4 + 3 * std::cos(a), 4 + 3 * std::sin(a), 2.0 + 0.2 * i);
        Vec3 fwd = (Vec3(4, 4, 1.2) - center).normalized();
        Vec3 right = fwd.cross(Vec3(0, 0, 1)).normalized();
        Vec3 down = fwd.cross(right).normalized();
        c.R.row(0) = right.transpose();
        c.R.row(1) = down.transpose();
        c.R.row(2) = fwd.transpose();
        c.t = -c.R * center;
        rig.push_back(c);
    }
    Vec3 wrist(4.2, 3.8, 1.3);

    std::vector<WristObservation> obs;
    for (int i = 0; i < 4; ++i) {
        geom::Projection p = geom::project(rig[i], wrist);
        REQUIRE(p.visible);
        obs.push_back({i, p.px, 1.0});
    }
    auto clean = reliable_triangulate(obs, rig, 0.05, 0.075);
    REQUIRE(clean.has_value());
    CHECK(clean->inliers.size() == 4);
    CHECK((clean->point - wrist).norm() < 1e-9);
    CHECK(clean->rms_ray_dist < 1e-9);

    // One camera off by 100 px: excluded, result still accurate.
    auto corrupted = obs;
    corrupted[2].px += Vec2(0, 100);
    auto robust = reliable_triangulate(corrupted, rig, 0.05, 0.075);
    REQUIRE(robust.has_value());
    for (int id : robust->inliers) CHECK(id != 2);
    CHECK((robust->point - wrist).norm() < 1e-6);

    // Two inconsistent cameras only: no reliable pair.
    std::vector<WristObservation> bad{{0, obs[0].px + Vec2(200, 0), 1.0},
                                      {1, obs[1].px + Vec2(-150, 90), 1.0}};
    CHECK_FALSE(reliable_triangulate(bad, rig, 0.05, 0.075).has_value());
}

TEST_CASE("division_ratio recovers the planted ratio") {
    synth::SceneRecording scene = clean_scene(8);
    const synth::FrameGt& gt = scene.gt[0];
    for (int h = 0; h < 2; ++h) {
        Vec3 elbow =
            gt.body_world[h == 0 ? synth::kLeftElbow : synth::kRightElbow];
        Vec3 wrist_kp =
            gt.body_world[h == 0 ? synth::kLeftWrist : synth::kRightWrist];
        hand::Joints local =
            hand::forward_kinematics(gt.hands[h].shape, gt.hands[h].pose);
        std::vector<MaskView> views;
        for (size_t c = 0; c < scene.rig.size(); ++c) {
            const synth::HandObs& ho = scene.frames[0][c].hands[h];
            if (ho.visible) views.push_back({&ho.mask, &scene.rig[c]});
        }
        REQUIRE(!views.empty());
        double ratio = division_ratio(elbow, wrist_kp, local,
                                      gt.hands[h].placement.orientation, views);
        CHECK(ratio == doctest::Approx(0.0).epsilon(1e-12));
    }
    hand::Joints local{};
    CHECK_THROWS_AS(
        division_ratio(Vec3(1, 1, 1), Vec3(1, 1, 1), local, Mat3::Identity(), {}),
        DegenerateInput);
}

TEST_CASE("annotate_scene zero-noise identity") {
    synth::SceneRecording scene = clean_scene(10);
    SceneAnnotation ann = annotate_scene(scene, AnnotationConfig{});
    int checked = 0;
    for (const FrameAnnotation& fa : ann.frames) {
        for (int h = 0; h < 2; ++h) {
            const HandAnnotation& ha = fa.hands[h];
            if (!ha.ok) continue;
            const synth::HandGt& gt = scene.gt[fa.t].hands[h];
            CHECK((ha.wrist_world - gt.placement.wrist).norm() < 1e-6);
            CHECK(geom::geodesic_deg(ha.orientation_world, gt.placement.orientation) <
                  rad2deg(1e-6));
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("reliable_triangulate never exceeds tau_final") {
    Rng rng(33);
    std::vector<Camera> rig;
    for (int i = 0; i < 4; ++i) {
        Camera c;
        c.fx = c.fy = 900;
        c.cx = c.cy = 540;
        c.width = c.height = 1080;
        double a = i * kPi / 2 + 0.3;
        Vec3 center(4 + 3.5 * std::cos(a), 4 + 3.5 * std::sin(a), 2.3);
        Vec3 fwd = (Vec3(4, 4, 1.2) - center).normalized();
        Vec3 right = fwd.cross(Vec3(0, 0, 1)).normalized();
        Vec3 down = fwd.cross(right).normalized();
        c.R.row(0) = right.transpose();
        c.R.row(1) = down.transpose();
        c.R.row(2) = fwd.transpose();
        c.t = -c.R * center;
        rig.push_back(c);
    }
    for (int trial = 0; trial < 200; ++trial) {
        Vec3 wrist(3 + 2 * rng.uniform(), 3 + 2 * rng.uniform(), 1 + 0.5 * rng.uniform());
        std::vector<WristObservation> obs;
        for (int i = 0; i < 4; ++i) {
            geom::Projection p = geom::project(rig[i], wrist);
            if (!p.visible) continue;
            obs.push_back({i, p.px + 15.0 * Vec2(rng.gaussian(), rng.gaussian()), 1.0});
        }
        if (obs.size() < 2) continue;
        auto res = reliable_triangulate(obs, rig, 0.05, 0.075);
        if (res.has_value()) CHECK(res->rms_ray_dist < 0.075);
    }
}
