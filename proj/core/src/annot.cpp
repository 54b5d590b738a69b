#include "farpose/annot.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace farpose::annot {

Trajectory chest_poses_from_markers(
    const std::vector<std::vector<std::pair<int, Vec2>>>& marker_obs,
    const Camera& intrinsics, const std::vector<Vec3>& marker_world) {
    Trajectory traj;
    traj.frame = geom::Frame::Marker;
    for (size_t f = 0; f < marker_obs.size(); ++f) {
        const auto& obs = marker_obs[f];
        if (obs.size() < 4) continue;
        std::vector<std::pair<Vec3, Vec2>> corrs;
        corrs.reserve(obs.size());
        for (const auto& [id, px] : obs)
            corrs.emplace_back(marker_world.at(id), px);
        geom::PnpResult pnp;
        try {
            pnp = geom::pnp_markers(corrs, intrinsics);
        } catch (const DegenerateInput&) {
            continue;
        } catch (const NoConvergence&) {
            continue;
        }
        traj.frames.push_back(static_cast<int>(f));
        // camera->world orientation and camera center
        traj.poses.push_back({pnp.pose.R.transpose(),
                              -pnp.pose.R.transpose() * pnp.pose.t,
                              geom::Frame::Marker});
    }
    return traj;
}

AlignedTrajectory align_trajectories(const Trajectory& marker_traj,
                                     const Trajectory& slam_traj) {
    std::map<int, size_t> slam_index;
    for (size_t i = 0; i < slam_traj.frames.size(); ++i)
        slam_index[slam_traj.frames[i]] = i;

    std::vector<Vec3> src, dst;
    std::vector<size_t> common_slam;
    for (size_t i = 0; i < marker_traj.frames.size(); ++i) {
        auto it = slam_index.find(marker_traj.frames[i]);
        if (it == slam_index.end()) continue;
        src.push_back(slam_traj.poses[it->second].t);
        dst.push_back(marker_traj.poses[i].t);
        common_slam.push_back(it->second);
    }
    if (src.size() < 3)
        throw DegenerateInput("align_trajectories: fewer than 3 common frames");

    AlignedTrajectory out;
    out.transform = geom::umeyama(src, dst);
    out.traj.frame = geom::Frame::World;
    out.traj.frames = slam_traj.frames;
    for (const geom::RigidPose& p : slam_traj.poses) {
        out.traj.poses.push_back({out.transform.R * p.R, out.transform.apply(p.t),
                                  geom::Frame::World});
    }
    for (size_t k = 0; k < src.size(); ++k)
        out.residuals.push_back((dst[k] - out.transform.apply(src[k])).norm());
    return out;
}

Mat3 hand_orientation_to_world(const Mat3& orientation_virtual,
                               const Mat3& rotation_crop,
                               const Mat3& rotation_world_chest) {
    return rotation_world_chest.transpose() * rotation_crop.transpose() *
           orientation_virtual;
}

VirtualCrop virtual_crop(const std::array<double, 4>& bbox, const Camera& chest_cam) {
    const double w = bbox[2] - bbox[0], h = bbox[3] - bbox[1];
    if (w <= 0 || h <= 0) throw DegenerateInput("virtual_crop: empty bbox");
    const Vec2 center(0.5 * (bbox[0] + bbox[2]), 0.5 * (bbox[1] + bbox[3]));
    Vec3 dc = geom::unproject(chest_cam, center);

    Vec2 a, b;
    if (w >= h) {
        a = Vec2(bbox[0], center.y());
        b = Vec2(bbox[2], center.y());
    } else {
        a = Vec2(center.x(), bbox[1]);
        b = Vec2(center.x(), bbox[3]);
    }
    Vec3 da = geom::unproject(chest_cam, a);
    Vec3 db = geom::unproject(chest_cam, b);
    double fov = std::acos(std::clamp(da.dot(db), -1.0, 1.0));
    if (fov < 1e-9) throw DegenerateInput("virtual_crop: degenerate FoV");

    VirtualCrop crop;
    crop.bbox = bbox;
    // Rotation taking the center ray onto the virtual optical axis.
    Vec3 axis = dc.cross(Vec3(0, 0, 1));
    double angle = std::acos(std::clamp(dc.z(), -1.0, 1.0));
    crop.rotation = axis.norm() < 1e-12
                        ? Mat3::Identity()
                        : geom::axis_angle_to_matrix(angle * axis.normalized());

    Camera& vc = crop.virtual_cam;
    vc.model = geom::CameraModel::Pinhole;
    vc.width = vc.height = 256;
    vc.cx = vc.cy = 128;
    vc.fx = vc.fy = 128.0 / std::tan(fov / 2.0);
    return crop;
}

std::optional<ReliableTriangulation> reliable_triangulate(
    const std::vector<WristObservation>& obs, const std::vector<Camera>& rig,
    double tau_pair, double tau_final) {
    if (obs.size() < 2) return std::nullopt;

    auto ray_of = [&](const WristObservation& o) {
        const Camera& cam = rig.at(o.camera);
        return geom::Ray{cam.center(),
                         cam.R.transpose() * geom::unproject(cam, o.px)};
    };

    std::vector<bool> reliable(obs.size(), false);
    for (size_t i = 0; i < obs.size(); ++i) {
        for (size_t j = i + 1; j < obs.size(); ++j) {
            try {
                auto tri = geom::triangulate({ray_of(obs[i]), ray_of(obs[j])});
                if (tri.rms_ray_dist < tau_pair) reliable[i] = reliable[j] = true;
            } catch (const DegenerateInput&) {
            }
        }
    }

    std::vector<geom::Ray> rays;
    ReliableTriangulation out;
    for (size_t i = 0; i < obs.size(); ++i) {
        if (!reliable[i]) continue;
        rays.push_back(ray_of(obs[i]));
        out.inliers.push_back(obs[i].camera);
    }
    if (rays.size() < 2) return std::nullopt;
    try {
        auto tri = geom::triangulate(rays);
        if (tri.rms_ray_dist >= tau_final) return std::nullopt;
        out.point = tri.point;
        out.rms_ray_dist = tri.rms_ray_dist;
    } catch (const DegenerateInput&) {
        return std::nullopt;
    }
    return out;
}

double division_ratio(const Vec3& elbow3d, const Vec3& wrist3d,
                      const hand::Joints& joints_local, const Mat3& orientation,
                      const std::vector<MaskView>& views) {
    if ((elbow3d - wrist3d).norm() < 1e-12)
        throw DegenerateInput("division_ratio: elbow equals wrist");
    double best_score = -1;
    double best_alpha = 0;
    for (int step = 0; step <= 20; ++step) {
        const double alpha = step * 0.05;
        hand::HandPlacement placement;
        placement.orientation = orientation;
        placement.wrist = (1.0 - alpha) * wrist3d + alpha * elbow3d;
        auto world = hand::place(joints_local, placement);
        double score = 0;
        for (const MaskView& v : views) {
            int inside = 0;
            for (const Vec3& j : world) {
                auto pj = geom::project(*v.camera, j);
                if (v.mask->contains(pj.px)) ++inside;
            }
            score += static_cast<double>(inside) / hand::kNumJoints;
        }
        if (score > best_score) {
            best_score = score;
            best_alpha = alpha;
        }
    }
    return best_alpha;
}

SceneAnnotation annotate_scene(const synth::SceneRecording& scene,
                               const AnnotationConfig& cfg) {
    SceneAnnotation out;
    const int T = static_cast<int>(scene.gt.size());

    // Chest pose recovery for both chest cameras: marker PnP plus a simulated
    // SLAM trajectory, aligned by Procrustes.
    std::array<AlignedTrajectory, 2> aligned;
    std::array<std::vector<const geom::RigidPose*>, 2> world_pose;
    for (int k = 0; k < 2; ++k) {
        std::vector<std::vector<std::pair<int, Vec2>>> marker_obs(T);
        for (int t = 0; t < T; ++t) marker_obs[t] = scene.chest_obs(k, t).markers;

        Trajectory marker_traj = chest_poses_from_markers(
            marker_obs, scene.chest_intrinsics[k], scene.markers);
        for (int t = 0; t < T; ++t)
            if (marker_obs[t].size() < 4) ++out.skipped_marker_frames;

        // Simulated SLAM: an arbitrary gauge the alignment must undo.
        Rng gauge_rng(cfg.slam_seed + static_cast<uint64_t>(k));
        geom::SimilarityTransform gauge;
        gauge.s = gauge_rng.uniform(0.5, 2.0);
        gauge.R = geom::axis_angle_to_matrix(
            Vec3(gauge_rng.uniform(-1, 1), gauge_rng.uniform(-1, 1),
                 gauge_rng.uniform(-1, 1)));
        gauge.t = Vec3(gauge_rng.uniform(-1, 1), gauge_rng.uniform(-1, 1),
                       gauge_rng.uniform(-1, 1));
        out.slam_gauges[k] = gauge;
        Trajectory slam = synth::corrupt_slam(
            synth::chest_trajectory(scene, k), gauge, cfg.slam_sigma_t,
            cfg.slam_sigma_r, cfg.slam_seed + 100 + static_cast<uint64_t>(k));

        aligned[k] = align_trajectories(marker_traj, slam);
        world_pose[k].assign(T, nullptr);
        for (size_t i = 0; i < aligned[k].traj.frames.size(); ++i)
            world_pose[k][aligned[k].traj.frames[i]] = &aligned[k].traj.poses[i];
    }

    out.frames.resize(T);
    for (int t = 0; t < T; ++t) {
        FrameAnnotation& fa = out.frames[t];
        fa.t = t;
        for (int h = 0; h < 2; ++h) {
            HandAnnotation& ha = fa.hands[h];

            // Chest-view hand estimate: prefer a chest camera that sees the hand.
            int chest = -1;
            for (int k = 0; k < 2; ++k)
                if (scene.chest_obs(k, t).hands[h].visible) { chest = k; break; }
            if (chest < 0 || world_pose[chest][t] == nullptr) continue;
            const synth::ChestHandObs& co = scene.chest_obs(chest, t).hands[h];

            VirtualCrop crop;
            try {
                crop = virtual_crop(co.bbox, scene.chest_intrinsics[chest]);
            } catch (const DegenerateInput&) {
                continue;
            }
            Mat3 orientation_virtual = crop.rotation * co.orientation_cam;
            ha.orientation_world = hand_orientation_to_world(
                orientation_virtual, crop.rotation, world_pose[chest][t]->R);
            ha.beta = co.beta;
            ha.theta = co.theta;

            // Wrist and elbow from the fixed cameras.
            const int wrist_kp = h == 0 ? synth::kLeftWrist : synth::kRightWrist;
            const int elbow_kp = h == 0 ? synth::kLeftElbow : synth::kRightElbow;
            auto gather = [&](int kp) {
                std::vector<WristObservation> v;
                for (size_t c = 0; c < scene.rig.size(); ++c) {
                    const auto& bk = scene.frames[t][c].body[kp];
                    if (bk.conf < cfg.min_conf) continue;
                    v.push_back({static_cast<int>(c), bk.px, bk.conf});
                }
                return v;
            };
            auto wrist_tri = reliable_triangulate(gather(wrist_kp), scene.rig,
                                                  cfg.tau_pair, cfg.tau_final);
            if (!wrist_tri) continue;
            auto elbow_tri = reliable_triangulate(gather(elbow_kp), scene.rig,
                                                  cfg.tau_pair, cfg.tau_final);

            hand::HandShape shape;
            shape.handedness = h == 0 ? hand::Handedness::Left : hand::Handedness::Right;
            shape.beta = ha.beta;
            hand::HandPose pose;
            pose.theta = ha.theta;
            auto joints_local = hand::forward_kinematics(shape, pose);

            double alpha = 0;
            if (elbow_tri && (elbow_tri->point - wrist_tri->point).norm() > 1e-9) {
                std::vector<MaskView> views;
                for (size_t c = 0; c < scene.rig.size(); ++c) {
                    const auto& ho = scene.frames[t][c].hands[h];
                    if (ho.visible && !ho.mask.runs.empty())
                        views.push_back({&ho.mask, &scene.rig[c]});
                }
                if (!views.empty())
                    alpha = division_ratio(elbow_tri->point, wrist_tri->point,
                                           joints_local, ha.orientation_world, views);
            }
            ha.wrist_world =
                (1.0 - alpha) * wrist_tri->point + alpha * elbow_tri.value_or(*wrist_tri).point;
            ha.ratio = alpha;
            ha.inlier_cameras = wrist_tri->inliers;
            ha.ray_rms_m = wrist_tri->rms_ray_dist;
            ha.ok = true;
        }
    }
    return out;
}

std::string to_json(const SceneAnnotation& ann) {
    nlohmann::ordered_json root;
    root["schema"] = "farpose-annotation/1";
    root["skipped_marker_frames"] = ann.skipped_marker_frames;
    root["frames"] = nlohmann::ordered_json::array();
    for (const FrameAnnotation& fa : ann.frames) {
        nlohmann::ordered_json jf;
        jf["t"] = fa.t;
        jf["hands"] = nlohmann::ordered_json::array();
        for (const HandAnnotation& ha : fa.hands) {
            nlohmann::ordered_json jh;
            jh["ok"] = ha.ok;
            if (ha.ok) {
                jh["hand"] = {{"beta", ha.beta},
                              {"theta", ha.theta},
                              {"O_world", std::vector<double>(
                                              ha.orientation_world.data(),
                                              ha.orientation_world.data() + 9)},
                              {"wrist_world", {ha.wrist_world.x(), ha.wrist_world.y(),
                                               ha.wrist_world.z()}}};
                jh["inliers"] = ha.inlier_cameras;
                jh["quality"] = {{"ray_rms_m", ha.ray_rms_m}, {"ratio", ha.ratio}};
            }
            jf["hands"].push_back(jh);
        }
        root["frames"].push_back(jf);
    }
    return root.dump();
}

}  // namespace farpose::annot
