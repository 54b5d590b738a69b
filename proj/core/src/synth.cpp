#include "farpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace farpose::synth {

using json = nlohmann::ordered_json;

void SceneConfig::validate() const {
    if (num_cameras < 2) throw ConfigError("scene: need at least 2 cameras");
    if (frames < 2) throw ConfigError("scene: need at least 2 frames");
    if (fps <= 0) throw ConfigError("scene: fps must be positive");
    if (keypoint_sigma_px < 0 || stub_pose_sigma < 0)
        throw ConfigError("scene: noise sigma must be non-negative");
    if (occlusion_prob < 0 || occlusion_prob > 1 || marker_dropout_prob < 0 ||
        marker_dropout_prob > 1)
        throw ConfigError("scene: probabilities must be in [0,1]");
    if (marker_count < 4) throw ConfigError("scene: need at least 4 markers");
    if (division_ratio_gt < 0 || division_ratio_gt > 1)
        throw ConfigError("scene: division ratio must be in [0,1]");
    if (room_x <= 0 || room_y <= 0 || room_z <= 0)
        throw ConfigError("scene: room dimensions must be positive");
}

bool MaskRle::contains(const Vec2& px) const {
    int x = static_cast<int>(std::floor(px.x())) - x0;
    int y = static_cast<int>(std::floor(px.y())) - y0;
    if (x < 0 || x >= w || y < 0 || y >= h) return false;
    int idx = y * w + x;
    int pos = 0;
    bool value = false;
    for (int run : runs) {
        pos += run;
        if (idx < pos) return value;
        value = !value;
    }
    return false;
}

namespace {

// Camera looking from `pos` toward `target`, image y pointing down.
void look_at(Camera& cam, const Vec3& pos, const Vec3& target) {
    Vec3 z = (target - pos).normalized();
    Vec3 x = Vec3(0, 0, -1).cross(z);
    if (x.norm() < 1e-9) x = Vec3(1, 0, 0);
    x.normalize();
    Vec3 y = z.cross(x);
    Mat3 R;
    R.row(0) = x;
    R.row(1) = y;
    R.row(2) = z;
    cam.R = R;
    cam.t = -R * pos;
}

struct Sinusoid {
    double amp = 0, omega = 0, phase = 0;
    double at(double t) const { return amp * std::sin(omega * t + phase); }
};

Sinusoid make_sinusoid(Rng& rng, double max_amp_omega, double omega_lo, double omega_hi) {
    Sinusoid s;
    s.omega = rng.uniform(omega_lo, omega_hi);
    s.amp = rng.uniform(0.3, 1.0) * max_amp_omega / s.omega;
    s.phase = rng.uniform(0, 2 * kPi);
    return s;
}

struct MotionModel {
    Sinusoid root_x[2], root_y[2];
    Sinusoid heading;
    Sinusoid hand_local[2][3];   // per hand, per axis
    Sinusoid orient_axis[2][3];  // axis-angle components of hand orientation
    Sinusoid theta_wave[2][3 * hand::kNumArticulated];
    double theta_base[2][3 * hand::kNumArticulated];
    double beta[2][hand::kShapeDim];
    double cx, cy;
};

MotionModel make_motion(const SceneConfig& cfg, Rng& rng) {
    MotionModel m;
    m.cx = cfg.room_x / 2;
    m.cy = cfg.room_y / 2;
    // Velocity budget: body sinusoids, heading sway, and local hand motion
    // together stay below max_hand_speed.
    const double v = cfg.max_hand_speed;
    for (int k = 0; k < 2; ++k) {
        m.root_x[k] = make_sinusoid(rng, 0.12 * v, 0.1, 0.4);
        m.root_y[k] = make_sinusoid(rng, 0.12 * v, 0.1, 0.4);
        // Keep the walk inside the room.
        m.root_x[k].amp = std::min(m.root_x[k].amp, cfg.room_x * 0.2);
        m.root_y[k].amp = std::min(m.root_y[k].amp, cfg.room_y * 0.2);
    }
    m.heading = make_sinusoid(rng, 0.25 * v, 0.1, 0.4);  // rad, lever arm < 1 m
    m.heading.amp = std::min(m.heading.amp, 0.6);
    for (int h = 0; h < 2; ++h) {
        for (int a = 0; a < 3; ++a) {
            m.hand_local[h][a] = make_sinusoid(rng, 0.05 * v, 0.2, 0.8);
            m.hand_local[h][a].amp = std::min(m.hand_local[h][a].amp, 0.08);
            m.orient_axis[h][a] = make_sinusoid(rng, 0.3, 0.2, 0.8);
            m.orient_axis[h][a].amp = std::min(m.orient_axis[h][a].amp, 0.8);
        }
        for (int j = 0; j < 3 * hand::kNumArticulated; ++j) {
            m.theta_base[h][j] = rng.uniform(-0.25, 0.25);
            m.theta_wave[h][j] = make_sinusoid(rng, 0.3, 0.3, 1.2);
            m.theta_wave[h][j].amp = std::min(m.theta_wave[h][j].amp, 0.35);
        }
        for (int b = 0; b < hand::kShapeDim; ++b) m.beta[h][b] = rng.uniform(-2.0, 2.0);
    }
    return m;
}

struct BodyFrame {
    std::array<Vec3, kBodyKeypoints> kp;
    Vec3 chest;
    Vec3 forward;  // heading direction, horizontal unit
    Vec3 lateral;  // left direction
};

BodyFrame body_at(const MotionModel& m, double t) {
    BodyFrame b;
    Vec3 root(m.cx + m.root_x[0].at(t) + m.root_x[1].at(t),
              m.cy + m.root_y[0].at(t) + m.root_y[1].at(t), 0.0);
    double psi = m.heading.at(t);
    b.forward = Vec3(std::cos(psi), std::sin(psi), 0);
    b.lateral = Vec3(-std::sin(psi), std::cos(psi), 0);
    const Vec3 f = b.forward, l = b.lateral;
    auto at = [&](double fw, double lat, double z) -> Vec3 {
        return root + fw * f + lat * l + Vec3(0, 0, z);
    };
    b.kp[0] = at(0.10, 0.00, 1.62);   // nose
    b.kp[1] = at(0.09, 0.03, 1.65);   // left eye
    b.kp[2] = at(0.09, -0.03, 1.65);  // right eye
    b.kp[3] = at(0.02, 0.08, 1.62);   // left ear
    b.kp[4] = at(0.02, -0.08, 1.62);  // right ear
    b.kp[5] = at(0.00, 0.18, 1.45);   // left shoulder
    b.kp[6] = at(0.00, -0.18, 1.45);  // right shoulder
    b.kp[7] = at(0.16, 0.26, 1.22);   // left elbow
    b.kp[8] = at(0.16, -0.26, 1.22);  // right elbow
    b.kp[9] = at(0.34, 0.15, 1.10);   // left wrist
    b.kp[10] = at(0.34, -0.15, 1.10); // right wrist
    b.kp[11] = at(0.00, 0.10, 0.95);  // left hip
    b.kp[12] = at(0.00, -0.10, 0.95); // right hip
    b.kp[13] = at(0.03, 0.11, 0.50);  // left knee
    b.kp[14] = at(0.03, -0.11, 0.50); // right knee
    b.kp[15] = at(0.00, 0.12, 0.08);  // left ankle
    b.kp[16] = at(0.00, -0.12, 0.08); // right ankle
    b.chest = at(0.10, 0.0, 1.35);
    return b;
}

MaskRle rasterize_hull(const std::array<Vec2, hand::kNumJoints>& pts, int img_w, int img_h) {
    // Convex hull (monotone chain), then a 2 px dilated point-in-hull raster.
    std::vector<Vec2> p(pts.begin(), pts.end());
    std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    auto cross2 = [](const Vec2& o, const Vec2& a, const Vec2& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Vec2> hull;
    for (int pass = 0; pass < 2; ++pass) {
        size_t start = hull.size();
        for (const Vec2& pt : p) {
            while (hull.size() >= start + 2 &&
                   cross2(hull[hull.size() - 2], hull.back(), pt) <= 0)
                hull.pop_back();
            hull.push_back(pt);
        }
        hull.pop_back();
        std::reverse(p.begin(), p.end());
    }

    const double dilate = 2.0;
    double minx = pts[0].x(), maxx = pts[0].x(), miny = pts[0].y(), maxy = pts[0].y();
    for (const Vec2& q : pts) {
        minx = std::min(minx, q.x()); maxx = std::max(maxx, q.x());
        miny = std::min(miny, q.y()); maxy = std::max(maxy, q.y());
    }
    MaskRle mask;
    mask.x0 = std::max(0, static_cast<int>(std::floor(minx - dilate - 1)));
    mask.y0 = std::max(0, static_cast<int>(std::floor(miny - dilate - 1)));
    int x1 = std::min(img_w, static_cast<int>(std::ceil(maxx + dilate + 1)));
    int y1 = std::min(img_h, static_cast<int>(std::ceil(maxy + dilate + 1)));
    mask.w = std::max(0, x1 - mask.x0);
    mask.h = std::max(0, y1 - mask.y0);

    auto dist_to_segment = [](const Vec2& q, const Vec2& a, const Vec2& b) {
        Vec2 d = b - a;
        double L2 = d.squaredNorm();
        double s = L2 > 0 ? std::clamp((q - a).dot(d) / L2, 0.0, 1.0) : 0.0;
        return (q - (a + s * d)).norm();
    };
    auto inside = [&](const Vec2& q) {
        if (hull.size() >= 3) {
            bool in = true;
            for (size_t i = 0; i < hull.size(); ++i) {
                const Vec2& a = hull[i];
                const Vec2& b = hull[(i + 1) % hull.size()];
                double c = cross2(a, b, q);
                double len = (b - a).norm();
                if (len > 1e-12 && c / len < -dilate) { in = false; break; }
            }
            if (in) return true;
        }
        for (size_t i = 0; i < hull.size(); ++i)
            if (dist_to_segment(q, hull[i], hull[(i + 1) % hull.size()]) <= dilate)
                return true;
        return hull.size() < 2 && !hull.empty() && (q - hull[0]).norm() <= dilate;
    };

    int run = 0;
    bool cur = false;
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) {
            bool v = inside(Vec2(mask.x0 + x + 0.5, mask.y0 + y + 0.5));
            if (v == cur) {
                ++run;
            } else {
                mask.runs.push_back(run);
                cur = v;
                run = 1;
            }
        }
    }
    mask.runs.push_back(run);
    return mask;
}

}  // namespace

SceneRecording generate_scene(const SceneConfig& cfg) {
    cfg.validate();
    SceneRecording scene;
    scene.cfg = cfg;
    Rng rng(cfg.seed);

    // Fixed pinhole cameras near the ceiling corners, aimed at chest height in
    // the room center. Focal length puts a 0.18 m hand at 4 m at about 40 px.
    const double fx = 40.0 * 4.0 / 0.18;
    const Vec3 target(cfg.room_x / 2, cfg.room_y / 2, 1.2);
    const std::array<Vec2, 4> corners = {Vec2(0.3, 0.3), Vec2(cfg.room_x - 0.3, 0.3),
                                         Vec2(cfg.room_x - 0.3, cfg.room_y - 0.3),
                                         Vec2(0.3, cfg.room_y - 0.3)};
    for (int i = 0; i < cfg.num_cameras; ++i) {
        Camera cam;
        cam.model = geom::CameraModel::Pinhole;
        cam.fx = cam.fy = fx;
        cam.width = 1080;
        cam.height = 810;
        cam.cx = 540;
        cam.cy = 405;
        Vec2 c = corners[i % 4];
        double z = cfg.room_z - 0.2 - 0.05 * (i / 4);
        look_at(cam, Vec3(c.x(), c.y(), z), target);
        scene.rig.push_back(cam);
    }

    for (int k = 0; k < 2; ++k) {
        Camera& cc = scene.chest_intrinsics[k];
        cc.model = geom::CameraModel::FisheyeEquidistant;
        cc.width = cc.height = 1000;
        cc.cx = cc.cy = 500;
        cc.fov_deg = 175.0;
        cc.fx = cc.fy = 500.0 / deg2rad(175.0 / 2.0);
    }

    // Ceiling marker grid.
    int gx = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.marker_count))));
    int gy = (cfg.marker_count + gx - 1) / gx;
    for (int i = 0; i < cfg.marker_count; ++i) {
        int ix = i % gx, iy = i / gx;
        scene.markers.emplace_back(
            cfg.room_x * (0.2 + 0.6 * ix / std::max(1, gx - 1)),
            cfg.room_y * (0.2 + 0.6 * iy / std::max(1, gy - 1)), cfg.marker_height);
    }

    MotionModel motion = make_motion(cfg, rng);
    scene.gt.resize(cfg.frames);
    for (int f = 0; f < cfg.frames; ++f) {
        double t = f / cfg.fps;
        BodyFrame body = body_at(motion, t);
        FrameGt& gt = scene.gt[f];
        gt.body_world = body.kp;

        for (int h = 0; h < 2; ++h) {
            HandGt& hg = gt.hands[h];
            hg.shape.handedness = h == 0 ? hand::Handedness::Left : hand::Handedness::Right;
            for (int b = 0; b < hand::kShapeDim; ++b) hg.shape.beta[b] = motion.beta[h][b];
            for (int j = 0; j < 3 * hand::kNumArticulated; ++j)
                hg.pose.theta[j] = motion.theta_base[h][j] + motion.theta_wave[h][j].at(t);

            const Vec3& elbow = body.kp[h == 0 ? kLeftElbow : kRightElbow];
            Vec3 wrist_kp = body.kp[h == 0 ? kLeftWrist : kRightWrist];
            Vec3 local(motion.hand_local[h][0].at(t), motion.hand_local[h][1].at(t),
                       motion.hand_local[h][2].at(t));
            wrist_kp += local.x() * body.forward + local.y() * body.lateral +
                        Vec3(0, 0, local.z());
            // Keypoint interpolation: the annotated hand wrist sits at the
            // configured interior point of the elbow-wrist segment.
            gt.body_world[h == 0 ? kLeftWrist : kRightWrist] = wrist_kp;
            hg.placement.wrist =
                (1.0 - cfg.division_ratio_gt) * wrist_kp + cfg.division_ratio_gt * elbow;

            Vec3 aa(motion.orient_axis[h][0].at(t), motion.orient_axis[h][1].at(t),
                    motion.orient_axis[h][2].at(t));
            Mat3 base;
            base.col(0) = body.lateral;
            base.col(1) = body.forward;
            base.col(2) = body.lateral.cross(body.forward);
            hg.placement.orientation = geom::axis_angle_to_matrix(aa) * base;
        }

        // Chest cameras: forward-facing with an upward tilt, offset laterally.
        for (int k = 0; k < 2; ++k) {
            Vec3 pos = body.chest + (k == 0 ? 0.06 : -0.06) * body.lateral;
            Vec3 dir = (body.forward + Vec3(0, 0, 0.35)).normalized();
            Camera tmp = scene.chest_intrinsics[k];
            look_at(tmp, pos, pos + dir);
            gt.chest_pose[k] = {tmp.R, tmp.t, geom::Frame::Camera};
        }
    }

    render_observations(scene, cfg);

    // Chest-camera observations: markers and the cropped-hand estimator stub.
    Rng chest_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    scene.chest_frames_left.resize(cfg.frames);
    scene.chest_frames_right.resize(cfg.frames);
    for (int f = 0; f < cfg.frames; ++f) {
        for (int k = 0; k < 2; ++k) {
            ChestFrameObs& obs = k == 0 ? scene.chest_frames_left[f] : scene.chest_frames_right[f];
            Camera cam = scene.chest_intrinsics[k];
            cam.R = scene.gt[f].chest_pose[k].R;
            cam.t = scene.gt[f].chest_pose[k].t;
            for (size_t m = 0; m < scene.markers.size(); ++m) {
                auto proj = geom::project(cam, scene.markers[m]);
                if (!proj.visible) continue;
                if (chest_rng.uniform() < cfg.marker_dropout_prob) continue;
                Vec2 px = proj.px;
                if (cfg.keypoint_sigma_px > 0) {
                    px.x() += cfg.keypoint_sigma_px * chest_rng.gaussian();
                    px.y() += cfg.keypoint_sigma_px * chest_rng.gaussian();
                }
                obs.markers.emplace_back(static_cast<int>(m), px);
            }
            // Orientation surrogate: defined so that the world-frame recovery
            // composition inverts it exactly when the chest pose is exact.
            Mat3 chest_orientation = cam.R.transpose();  // camera->world
            for (int h = 0; h < 2; ++h) {
                const HandGt& hg = scene.gt[f].hands[h];
                ChestHandObs& ho = obs.hands[h];
                auto joints = hand::place(
                    hand::forward_kinematics(hg.shape, hg.pose), hg.placement);
                double minx = 1e18, maxx = -1e18, miny = 1e18, maxy = -1e18;
                int vis = 0;
                for (const Vec3& j : joints) {
                    auto pj = geom::project(cam, j);
                    if (!pj.visible) continue;
                    ++vis;
                    minx = std::min(minx, pj.px.x()); maxx = std::max(maxx, pj.px.x());
                    miny = std::min(miny, pj.px.y()); maxy = std::max(maxy, pj.px.y());
                }
                ho.visible = vis == hand::kNumJoints;
                if (!ho.visible) continue;
                ho.bbox = {minx - 5, miny - 5, maxx + 5, maxy + 5};
                ho.orientation_cam = chest_orientation * hg.placement.orientation;
                for (int b = 0; b < hand::kShapeDim; ++b)
                    ho.beta[b] = hg.shape.beta[b] + cfg.stub_pose_sigma * chest_rng.gaussian();
                for (int j = 0; j < 3 * hand::kNumArticulated; ++j)
                    ho.theta[j] = hg.pose.theta[j] + cfg.stub_pose_sigma * chest_rng.gaussian();
            }
        }
    }
    return scene;
}

void render_observations(SceneRecording& scene, const SceneConfig& cfg) {
    Rng rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
    const int ncam = static_cast<int>(scene.rig.size());
    scene.frames.assign(cfg.frames, std::vector<ObservationFrame>(ncam));
    scene.noiseless_body.assign(
        cfg.frames, std::vector<std::array<Vec2, kBodyKeypoints>>(ncam));

    // Occlusion schedule: per camera, intervals with geometric duration.
    std::vector<std::vector<bool>> occluded(ncam, std::vector<bool>(cfg.frames, false));
    for (int c = 0; c < ncam; ++c) {
        int remaining = 0;
        for (int f = 0; f < cfg.frames; ++f) {
            if (remaining == 0 && rng.uniform() < cfg.occlusion_prob)
                remaining = rng.geometric(cfg.occlusion_mean_frames);
            if (remaining > 0) {
                occluded[c][f] = true;
                --remaining;
            }
        }
    }

    const double sigma = cfg.keypoint_sigma_px;
    for (int f = 0; f < cfg.frames; ++f) {
        const FrameGt& gt = scene.gt[f];
        for (int c = 0; c < ncam; ++c) {
            const Camera& cam = scene.rig[c];
            ObservationFrame& obs = scene.frames[f][c];
            obs.camera = c;
            obs.t = f;
            const bool occ = occluded[c][f];
            for (int k = 0; k < kBodyKeypoints; ++k) {
                auto pj = geom::project(cam, gt.body_world[k]);
                scene.noiseless_body[f][c][k] = pj.px;
                BodyKeypointObs& bk = obs.body[k];
                Vec2 noise(sigma * rng.gaussian(), sigma * rng.gaussian());
                bk.px = pj.px + noise;
                const bool kp_occluded =
                    occ && (k == kLeftWrist || k == kRightWrist || k == kLeftElbow ||
                            k == kRightElbow);
                bk.visible = pj.visible && !kp_occluded;
                if (!bk.visible) {
                    // Occluded estimates are spurious detections, not GT + noise.
                    bk.px = Vec2(rng.uniform(0, cam.width), rng.uniform(0, cam.height));
                    bk.conf = rng.uniform(0.0, 0.295);
                } else {
                    bk.conf = sigma > 0
                                  ? std::clamp(1.0 - noise.norm() / (3.0 * sigma), 0.05, 1.0)
                                  : 1.0;
                }
            }
            for (int h = 0; h < 2; ++h) {
                const HandGt& hg = gt.hands[h];
                HandObs& ho = obs.hands[h];
                auto joints = hand::place(
                    hand::forward_kinematics(hg.shape, hg.pose), hg.placement);
                std::array<Vec2, hand::kNumJoints> px_clean;
                bool in_frame = true;
                for (int j = 0; j < hand::kNumJoints; ++j) {
                    auto pj = geom::project(cam, joints[j]);
                    px_clean[j] = pj.px;
                    in_frame = in_frame && pj.visible;
                }
                Vec2 wrist_noise(sigma * rng.gaussian(), sigma * rng.gaussian());
                ho.wrist_px = px_clean[0] + wrist_noise;
                for (int j = 0; j < hand::kNumJoints; ++j) {
                    ho.joint_px[j] = px_clean[j] +
                                     Vec2(sigma * rng.gaussian(), sigma * rng.gaussian());
                }
                ho.visible = in_frame && !occ;
                if (!ho.visible) {
                    ho.wrist_px = Vec2(rng.uniform(0, cam.width), rng.uniform(0, cam.height));
                    for (Vec2& q : ho.joint_px)
                        q = ho.wrist_px + Vec2(rng.uniform(-20, 20), rng.uniform(-20, 20));
                    ho.wrist_conf = rng.uniform(0.0, 0.295);
                } else {
                    ho.wrist_conf =
                        sigma > 0
                            ? std::clamp(1.0 - wrist_noise.norm() / (3.0 * sigma), 0.05, 1.0)
                            : 1.0;
                }
                double minx = 1e18, maxx = -1e18, miny = 1e18, maxy = -1e18;
                for (const Vec2& q : px_clean) {
                    minx = std::min(minx, q.x()); maxx = std::max(maxx, q.x());
                    miny = std::min(miny, q.y()); maxy = std::max(maxy, q.y());
                }
                ho.bbox = {minx - 3, miny - 3, maxx + 3, maxy + 3};
                if (in_frame) ho.mask = rasterize_hull(px_clean, cam.width, cam.height);
            }
        }
    }
}

Trajectory chest_trajectory(const SceneRecording& scene, int chest_cam) {
    Trajectory traj;
    traj.frame = geom::Frame::World;
    for (int f = 0; f < static_cast<int>(scene.gt.size()); ++f) {
        const RigidPose& ext = scene.gt[f].chest_pose[chest_cam];
        traj.frames.push_back(f);
        // Orientation convention: rotation maps camera to world, translation
        // is the camera center.
        traj.poses.push_back({ext.R.transpose(), -ext.R.transpose() * ext.t,
                              geom::Frame::World});
    }
    return traj;
}

Trajectory corrupt_slam(const Trajectory& chest_gt, const geom::SimilarityTransform& gauge,
                        double sigma_t, double sigma_r, uint64_t seed) {
    Rng rng(seed);
    geom::SimilarityTransform inv = gauge.inverse();
    Trajectory out;
    out.frame = geom::Frame::Slam;
    out.frames = chest_gt.frames;
    for (const RigidPose& p : chest_gt.poses) {
        Vec3 noisy_t = p.t;
        Mat3 noisy_R = p.R;
        if (sigma_t > 0)
            noisy_t += sigma_t * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
        if (sigma_r > 0)
            noisy_R = geom::axis_angle_to_matrix(
                          sigma_r * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian())) *
                      noisy_R;
        out.poses.push_back(
            {gauge.R.transpose() * noisy_R, inv.apply(noisy_t), geom::Frame::Slam});
    }
    return out;
}

// -- JSON serialization -------------------------------------------------------

namespace {

json mat3_to_json(const Mat3& R) {
    json a = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a.push_back(R(r, c));
    return a;
}

Mat3 mat3_from_json(const json& a) {
    Mat3 R;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) R(r, c) = a[3 * r + c];
    return R;
}

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from_json(const json& a) { return Vec3(a[0], a[1], a[2]); }
json vec2_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }
Vec2 vec2_from_json(const json& a) { return Vec2(a[0], a[1]); }

json camera_to_json(const Camera& c) {
    return json{{"model", c.model == geom::CameraModel::Pinhole ? "pinhole" : "fisheye-equidistant"},
                {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
                {"width", c.width}, {"height", c.height},
                {"R", mat3_to_json(c.R)}, {"t", vec3_to_json(c.t)},
                {"fov_deg", c.fov_deg}};
}

Camera camera_from_json(const json& j) {
    Camera c;
    c.model = j.at("model") == "pinhole" ? geom::CameraModel::Pinhole
                                         : geom::CameraModel::FisheyeEquidistant;
    c.fx = j.at("fx"); c.fy = j.at("fy"); c.cx = j.at("cx"); c.cy = j.at("cy");
    c.width = j.at("width"); c.height = j.at("height");
    c.R = mat3_from_json(j.at("R"));
    c.t = vec3_from_json(j.at("t"));
    c.fov_deg = j.value("fov_deg", 0.0);
    return c;
}

json config_to_json(const SceneConfig& c) {
    return json{{"room", {c.room_x, c.room_y, c.room_z}},
                {"num_cameras", c.num_cameras}, {"frames", c.frames}, {"fps", c.fps},
                {"marker_count", c.marker_count}, {"marker_height", c.marker_height},
                {"keypoint_sigma_px", c.keypoint_sigma_px},
                {"occlusion_prob", c.occlusion_prob},
                {"occlusion_mean_frames", c.occlusion_mean_frames},
                {"marker_dropout_prob", c.marker_dropout_prob},
                {"stub_pose_sigma", c.stub_pose_sigma},
                {"max_hand_speed", c.max_hand_speed},
                {"division_ratio_gt", c.division_ratio_gt},
                {"seed", c.seed}};
}

SceneConfig config_from_json(const json& j) {
    SceneConfig c;
    if (j.contains("room")) {
        c.room_x = j["room"][0]; c.room_y = j["room"][1]; c.room_z = j["room"][2];
    }
    c.num_cameras = j.value("num_cameras", c.num_cameras);
    c.frames = j.value("frames", c.frames);
    c.fps = j.value("fps", c.fps);
    c.marker_count = j.value("marker_count", c.marker_count);
    c.marker_height = j.value("marker_height", c.marker_height);
    c.keypoint_sigma_px = j.value("keypoint_sigma_px", c.keypoint_sigma_px);
    c.occlusion_prob = j.value("occlusion_prob", c.occlusion_prob);
    c.occlusion_mean_frames = j.value("occlusion_mean_frames", c.occlusion_mean_frames);
    c.marker_dropout_prob = j.value("marker_dropout_prob", c.marker_dropout_prob);
    c.stub_pose_sigma = j.value("stub_pose_sigma", c.stub_pose_sigma);
    c.max_hand_speed = j.value("max_hand_speed", c.max_hand_speed);
    c.division_ratio_gt = j.value("division_ratio_gt", c.division_ratio_gt);
    c.seed = j.value("seed", c.seed);
    return c;
}

json mask_to_json(const MaskRle& m) {
    return json{{"x0", m.x0}, {"y0", m.y0}, {"w", m.w}, {"h", m.h}, {"runs", m.runs}};
}

MaskRle mask_from_json(const json& j) {
    MaskRle m;
    m.x0 = j.at("x0"); m.y0 = j.at("y0"); m.w = j.at("w"); m.h = j.at("h");
    m.runs = j.at("runs").get<std::vector<int>>();
    return m;
}

json hand_obs_to_json(const HandObs& h) {
    json jp = json::array();
    for (const Vec2& p : h.joint_px) jp.push_back(vec2_to_json(p));
    return json{{"visible", h.visible}, {"wrist_px", vec2_to_json(h.wrist_px)},
                {"wrist_conf", h.wrist_conf}, {"bbox", h.bbox},
                {"joint_px", jp}, {"mask", mask_to_json(h.mask)}};
}

HandObs hand_obs_from_json(const json& j) {
    HandObs h;
    h.visible = j.at("visible");
    h.wrist_px = vec2_from_json(j.at("wrist_px"));
    h.wrist_conf = j.at("wrist_conf");
    for (int i = 0; i < 4; ++i) h.bbox[i] = j.at("bbox")[i];
    for (int i = 0; i < hand::kNumJoints; ++i)
        h.joint_px[i] = vec2_from_json(j.at("joint_px")[i]);
    h.mask = mask_from_json(j.at("mask"));
    return h;
}

json chest_obs_to_json(const ChestFrameObs& c) {
    json markers = json::array();
    for (const auto& [id, px] : c.markers)
        markers.push_back(json{{"id", id}, {"px", vec2_to_json(px)}});
    json hands = json::array();
    for (const ChestHandObs& h : c.hands) {
        hands.push_back(json{{"visible", h.visible}, {"bbox", h.bbox},
                             {"O_cam", mat3_to_json(h.orientation_cam)},
                             {"beta", h.beta}, {"theta", h.theta}});
    }
    return json{{"markers", markers}, {"hands", hands}};
}

ChestFrameObs chest_obs_from_json(const json& j) {
    ChestFrameObs c;
    for (const auto& m : j.at("markers"))
        c.markers.emplace_back(m.at("id"), vec2_from_json(m.at("px")));
    for (int h = 0; h < 2; ++h) {
        const json& jh = j.at("hands")[h];
        ChestHandObs& ho = c.hands[h];
        ho.visible = jh.at("visible");
        for (int i = 0; i < 4; ++i) ho.bbox[i] = jh.at("bbox")[i];
        ho.orientation_cam = mat3_from_json(jh.at("O_cam"));
        for (int i = 0; i < hand::kShapeDim; ++i) ho.beta[i] = jh.at("beta")[i];
        for (int i = 0; i < 3 * hand::kNumArticulated; ++i) ho.theta[i] = jh.at("theta")[i];
    }
    return c;
}

}  // namespace

std::string to_json(const SceneRecording& scene) {
    json root;
    root["schema"] = "farpose-scene/1";
    root["config"] = config_to_json(scene.cfg);
    root["cameras"] = json::array();
    for (const Camera& c : scene.rig) root["cameras"].push_back(camera_to_json(c));
    root["chest_intrinsics"] = {camera_to_json(scene.chest_intrinsics[0]),
                                camera_to_json(scene.chest_intrinsics[1])};
    root["markers"] = json::array();
    for (const Vec3& m : scene.markers) root["markers"].push_back(vec3_to_json(m));

    root["gt"] = json::array();
    for (const FrameGt& g : scene.gt) {
        json body = json::array();
        for (const Vec3& p : g.body_world) body.push_back(vec3_to_json(p));
        json hands = json::array();
        for (const HandGt& h : g.hands) {
            hands.push_back(json{
                {"handedness", h.shape.handedness == hand::Handedness::Left ? "left" : "right"},
                {"beta", h.shape.beta}, {"theta", h.pose.theta},
                {"O", mat3_to_json(h.placement.orientation)},
                {"t", vec3_to_json(h.placement.wrist)}});
        }
        json chest = json::array();
        for (const RigidPose& p : g.chest_pose)
            chest.push_back(json{{"R", mat3_to_json(p.R)}, {"t", vec3_to_json(p.t)}});
        root["gt"].push_back(json{{"body", body}, {"hands", hands}, {"chest", chest}});
    }

    root["noiseless_body"] = json::array();
    for (const auto& per_cam : scene.noiseless_body) {
        json jc = json::array();
        for (const auto& kps : per_cam) {
            json jk = json::array();
            for (const Vec2& p : kps) jk.push_back(vec2_to_json(p));
            jc.push_back(jk);
        }
        root["noiseless_body"].push_back(jc);
    }

    root["frames"] = json::array();
    for (const auto& per_cam : scene.frames) {
        json jc = json::array();
        for (const ObservationFrame& o : per_cam) {
            json body = json::array();
            for (const BodyKeypointObs& b : o.body)
                body.push_back(json{{"px", vec2_to_json(b.px)}, {"conf", b.conf},
                                    {"visible", b.visible}});
            jc.push_back(json{{"camera", o.camera}, {"t", o.t}, {"body", body},
                              {"hands", {hand_obs_to_json(o.hands[0]),
                                         hand_obs_to_json(o.hands[1])}}});
        }
        root["frames"].push_back(jc);
    }

    root["chest_frames"] = {json::array(), json::array()};
    for (const ChestFrameObs& c : scene.chest_frames_left)
        root["chest_frames"][0].push_back(chest_obs_to_json(c));
    for (const ChestFrameObs& c : scene.chest_frames_right)
        root["chest_frames"][1].push_back(chest_obs_to_json(c));
    return root.dump();
}

SceneRecording scene_from_json(const std::string& text) {
    json root = json::parse(text);
    if (root.value("schema", "") != "farpose-scene/1")
        throw ConfigError("scene file: unknown schema");
    SceneRecording scene;
    scene.cfg = config_from_json(root.at("config"));
    for (const auto& jc : root.at("cameras")) scene.rig.push_back(camera_from_json(jc));
    scene.chest_intrinsics[0] = camera_from_json(root.at("chest_intrinsics")[0]);
    scene.chest_intrinsics[1] = camera_from_json(root.at("chest_intrinsics")[1]);
    for (const auto& jm : root.at("markers")) scene.markers.push_back(vec3_from_json(jm));

    for (const auto& jg : root.at("gt")) {
        FrameGt g;
        for (int k = 0; k < kBodyKeypoints; ++k)
            g.body_world[k] = vec3_from_json(jg.at("body")[k]);
        for (int h = 0; h < 2; ++h) {
            const json& jh = jg.at("hands")[h];
            HandGt& hg = g.hands[h];
            hg.shape.handedness = jh.at("handedness") == "left" ? hand::Handedness::Left
                                                                : hand::Handedness::Right;
            for (int i = 0; i < hand::kShapeDim; ++i) hg.shape.beta[i] = jh.at("beta")[i];
            for (int i = 0; i < 3 * hand::kNumArticulated; ++i)
                hg.pose.theta[i] = jh.at("theta")[i];
            hg.placement.orientation = mat3_from_json(jh.at("O"));
            hg.placement.wrist = vec3_from_json(jh.at("t"));
        }
        for (int k = 0; k < 2; ++k) {
            g.chest_pose[k].R = mat3_from_json(jg.at("chest")[k].at("R"));
            g.chest_pose[k].t = vec3_from_json(jg.at("chest")[k].at("t"));
            g.chest_pose[k].frame = geom::Frame::Camera;
        }
        scene.gt.push_back(g);
    }

    for (const auto& jc : root.at("noiseless_body")) {
        std::vector<std::array<Vec2, kBodyKeypoints>> per_cam;
        for (const auto& jk : jc) {
            std::array<Vec2, kBodyKeypoints> kps;
            for (int k = 0; k < kBodyKeypoints; ++k) kps[k] = vec2_from_json(jk[k]);
            per_cam.push_back(kps);
        }
        scene.noiseless_body.push_back(per_cam);
    }

    for (const auto& jt : root.at("frames")) {
        std::vector<ObservationFrame> per_cam;
        for (const auto& jo : jt) {
            ObservationFrame o;
            o.camera = jo.at("camera");
            o.t = jo.at("t");
            for (int k = 0; k < kBodyKeypoints; ++k) {
                const json& jb = jo.at("body")[k];
                o.body[k].px = vec2_from_json(jb.at("px"));
                o.body[k].conf = jb.at("conf");
                o.body[k].visible = jb.at("visible");
            }
            o.hands[0] = hand_obs_from_json(jo.at("hands")[0]);
            o.hands[1] = hand_obs_from_json(jo.at("hands")[1]);
            per_cam.push_back(o);
        }
        scene.frames.push_back(per_cam);
    }

    for (const auto& jc : root.at("chest_frames")[0])
        scene.chest_frames_left.push_back(chest_obs_from_json(jc));
    for (const auto& jc : root.at("chest_frames")[1])
        scene.chest_frames_right.push_back(chest_obs_from_json(jc));
    return scene;
}

void save_scene(const SceneRecording& scene, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write scene file: " + path);
    f << to_json(scene);
}

SceneRecording load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read scene file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return scene_from_json(ss.str());
}

}  // namespace farpose::synth
