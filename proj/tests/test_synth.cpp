#include <doctest.h>

#include <cmath>

#include "farpose/synth.hpp"

using namespace farpose;
using namespace farpose::synth;

namespace {

SceneConfig small_config() {
    SceneConfig cfg;
    cfg.frames = 30;
    cfg.seed = 42;
    return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic") {
    SceneConfig cfg = small_config();
    SceneRecording a = generate_scene(cfg);
    render_observations(a, cfg);
    SceneRecording b = generate_scene(cfg);
    render_observations(b, cfg);
    CHECK(to_json(a) == to_json(b));
}

TEST_CASE("config validation") {
    SceneConfig cfg = small_config();
    cfg.num_cameras = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.frames = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.keypoint_sigma_px = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("reprojection consistency of ground truth") {
    SceneConfig cfg = small_config();
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    for (int t = 0; t < cfg.frames; ++t) {
        for (size_t c = 0; c < scene.rig.size(); ++c) {
            for (int k = 0; k < kBodyKeypoints; ++k) {
                geom::Projection p = geom::project(scene.rig[c], scene.gt[t].body_world[k]);
                if (!p.visible) continue;
                CHECK((p.px - scene.noiseless_body[t][c][k]).norm() < 1e-6);
            }
        }
    }
}

TEST_CASE("zero noise implies observations equal projections and full visibility") {
    SceneConfig cfg = small_config();
    cfg.keypoint_sigma_px = 0;
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    for (int t = 0; t < cfg.frames; ++t) {
        for (size_t c = 0; c < scene.rig.size(); ++c) {
            const ObservationFrame& obs = scene.frames[t][c];
            for (int k = 0; k < kBodyKeypoints; ++k) {
                if (!obs.body[k].visible) continue;
                CHECK((obs.body[k].px - scene.noiseless_body[t][c][k]).norm() < 1e-12);
            }
            for (int h = 0; h < 2; ++h) {
                geom::Projection wp =
                    geom::project(scene.rig[c], scene.gt[t].hands[h].placement.wrist);
                CHECK(obs.hands[h].visible == wp.visible);
            }
        }
    }
}

TEST_CASE("occlusion probability one blanks every hand observation") {
    SceneConfig cfg = small_config();
    cfg.occlusion_prob = 1.0;
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    for (const auto& per_cam : scene.frames)
        for (const ObservationFrame& obs : per_cam)
            for (const HandObs& h : obs.hands) {
                CHECK_FALSE(h.visible);
                CHECK(h.wrist_conf < 0.3);
            }
}

TEST_CASE("hand speed bounded by config") {
    SceneConfig cfg = small_config();
    cfg.frames = 120;
    SceneRecording scene = generate_scene(cfg);
    const double step_max = cfg.max_hand_speed / cfg.fps + 1e-9;
    for (int t = 1; t < cfg.frames; ++t)
        for (int h = 0; h < 2; ++h) {
            double step = (scene.gt[t].hands[h].placement.wrist -
                           scene.gt[t - 1].hands[h].placement.wrist)
                              .norm();
            CHECK(step <= step_max);
        }
}

TEST_CASE("empirical pixel noise matches sigma") {
    SceneConfig cfg = small_config();
    cfg.frames = 240;
    cfg.keypoint_sigma_px = 0.5;
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    double sq = 0;
    long n = 0;
    for (int t = 0; t < cfg.frames; ++t)
        for (size_t c = 0; c < scene.rig.size(); ++c) {
            const ObservationFrame& obs = scene.frames[t][c];
            for (int k = 0; k < kBodyKeypoints; ++k) {
                if (!obs.body[k].visible) continue;
                geom::Vec2 err = obs.body[k].px - scene.noiseless_body[t][c][k];
                sq += err.x() * err.x() + err.y() * err.y();
                n += 2;
            }
        }
    REQUIRE(n >= 10000);
    double rms = std::sqrt(sq / n);
    CHECK(rms == doctest::Approx(cfg.keypoint_sigma_px).epsilon(0.10));
}

TEST_CASE("confidences stay in range and track visibility") {
    SceneConfig cfg = small_config();
    cfg.occlusion_prob = 0.2;
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    for (const auto& per_cam : scene.frames)
        for (const ObservationFrame& obs : per_cam) {
            for (const BodyKeypointObs& k : obs.body) {
                CHECK(k.conf >= 0);
                CHECK(k.conf <= 1);
                if (!k.visible) CHECK(k.conf < 0.3);
            }
            for (const HandObs& h : obs.hands)
                if (!h.visible) CHECK(h.wrist_conf < 0.3);
        }
}

TEST_CASE("corrupt_slam identity gauge round trips") {
    SceneConfig cfg = small_config();
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    geom::Trajectory gt = chest_trajectory(scene, 0);
    geom::Trajectory slam = corrupt_slam(gt, geom::SimilarityTransform{}, 0, 0, 9);
    REQUIRE(slam.poses.size() == gt.poses.size());
    for (size_t i = 0; i < gt.poses.size(); ++i) {
        CHECK((slam.poses[i].R - gt.poses[i].R).norm() < 1e-12);
        CHECK((slam.poses[i].t - gt.poses[i].t).norm() < 1e-12);
    }
}

TEST_CASE("scene JSON round trip") {
    SceneConfig cfg = small_config();
    cfg.frames = 8;
    SceneRecording scene = generate_scene(cfg);
    render_observations(scene, cfg);
    std::string j = to_json(scene);
    SceneRecording back = scene_from_json(j);
    CHECK(to_json(back) == j);
}
