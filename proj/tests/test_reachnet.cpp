#include <doctest.h>

#include <cmath>

#include "farpose/reachnet.hpp"
#include "farpose/rng.hpp"

using namespace farpose;
using namespace farpose::reachnet;

namespace {

FeatureConfig tiny_config() {
    FeatureConfig cfg;
    cfg.body_dim = 8;
    cfg.hand_dim = 16;
    cfg.hidden = 32;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.pose_layers = 1;
    cfg.pose_heads = 2;
    cfg.pose_hidden = 16;
    cfg.ray_freqs = 2;
    return cfg;
}

synth::SceneRecording make_scene(int frames = 6, uint64_t seed = 7,
                                 double sigma = 0.5) {
    synth::SceneConfig cfg;
    cfg.frames = frames;
    cfg.seed = seed;
    cfg.keypoint_sigma_px = sigma;
    synth::SceneRecording scene = synth::generate_scene(cfg);
    synth::render_observations(scene, cfg);
    return scene;
}

std::vector<ViewInput> frame_views(const synth::SceneRecording& scene, int t,
                                   int nviews) {
    std::vector<ViewInput> v;
    for (int c = 0; c < nviews; ++c) v.push_back({&scene.frames[t][c], &scene.rig[c]});
    return v;
}

Mat3 random_rotation(Rng& rng) {
    Vec3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
    return geom::axis_angle_to_matrix(axis.normalized() * rng.uniform() * kPi);
}

// Independent re-implementation of the fusion formula.
Mat3 mvu_oracle(const std::vector<Mat3>& O, const std::vector<double>& c,
                const std::vector<Mat3>& RF) {
    geom::Rot6d acc = geom::Rot6d::Zero();
    double wsum = 0;
    for (size_t n = 0; n < O.size(); ++n) {
        acc += c[n] * geom::rot6d_from_matrix(RF[n].transpose() * O[n]);
        wsum += c[n];
    }
    return geom::matrix_from_rot6d(acc / wsum);
}

}  // namespace

TEST_CASE("mvu_fuse single view and oracle agreement") {
    Mat3 Rz30 = geom::rot_z(deg2rad(30));
    Mat3 fused = mvu_fuse({Rz30}, {1.0}, {Mat3::Identity()});
    CHECK((fused - Rz30).norm() < 1e-12);

    Rng rng(41);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 2 + static_cast<int>(rng.raw() % 4);
        std::vector<Mat3> O, RF;
        std::vector<double> c;
        for (int i = 0; i < n; ++i) {
            O.push_back(random_rotation(rng));
            RF.push_back(random_rotation(rng));
            c.push_back(0.05 + rng.uniform());
        }
        Mat3 ours = mvu_fuse(O, c, RF);
        Mat3 oracle = mvu_oracle(O, c, RF);
        CHECK((ours - oracle).norm() < 1e-12);
        CHECK(geom::is_rotation(ours));
    }
}

TEST_CASE("mvu_fuse agreement fixed point and permutation invariance") {
    Rng rng(42);
    Mat3 world = random_rotation(rng);
    std::vector<Mat3> O, RF;
    std::vector<double> c;
    for (int i = 0; i < 4; ++i) {
        Mat3 R = random_rotation(rng);
        RF.push_back(R);
        O.push_back(R * world);  // all views agree in the world frame
        c.push_back(0.1 + rng.uniform());
    }
    CHECK((mvu_fuse(O, c, RF) - world).norm() < 1e-9);

    std::vector<Mat3> O2{O[2], O[0], O[3], O[1]}, RF2{RF[2], RF[0], RF[3], RF[1]};
    std::vector<double> c2{c[2], c[0], c[3], c[1]};
    CHECK((mvu_fuse(O, c, RF) - mvu_fuse(O2, c2, RF2)).norm() < 1e-12);
}

TEST_CASE("mvu_fuse rejects all-zero confidence") {
    Mat3 I = Mat3::Identity();
    CHECK_THROWS_AS(mvu_fuse({I, I}, {0.0, 0.0}, {I, I}), AllZeroConfidence);
}

TEST_CASE("hand crop follows the person height rule") {
    synth::SceneRecording scene = make_scene();
    const synth::ObservationFrame& obs = scene.frames[0][0];
    double ymin = obs.body[0].px.y(), ymax = ymin;
    for (const auto& kp : obs.body) {
        ymin = std::min(ymin, kp.px.y());
        ymax = std::max(ymax, kp.px.y());
    }
    for (int h = 0; h < 2; ++h) {
        std::array<double, 4> box = hand_crop(obs, h);
        double side = box[2] - box[0];
        CHECK(side == doctest::Approx(0.5 * (ymax - ymin)).epsilon(1e-9));
        CHECK(box[3] - box[1] == doctest::Approx(side).epsilon(1e-9));
        const int kp = h == 0 ? synth::kLeftWrist : synth::kRightWrist;
        CHECK(0.5 * (box[0] + box[2]) ==
              doctest::Approx(obs.body[kp].px.x()).epsilon(1e-9));
    }
}

TEST_CASE("hand features are deterministic, invisible hand is constant") {
    synth::SceneRecording scene = make_scene();
    Model model(tiny_config(), 5);
    tensornet::Tensor f1 = model.hand_features(scene.frames[0][0], 0);
    tensornet::Tensor f2 = model.hand_features(scene.frames[0][0], 0);
    for (int64_t i = 0; i < f1.numel(); ++i) CHECK(f1.val()(i) == f2.val()(i));

    synth::ObservationFrame hidden = scene.frames[0][0];
    hidden.hands[0].visible = false;
    synth::ObservationFrame hidden2 = scene.frames[1][0];
    hidden2.hands[0].visible = false;
    // Keypoint content no longer matters once the hand is invisible, as long
    // as the crop size matches.
    hidden2.body = hidden.body;
    tensornet::Tensor g1 = model.hand_features(hidden, 0);
    tensornet::Tensor g2 = model.hand_features(hidden2, 0);
    for (int64_t i = 0; i < g1.numel(); ++i)
        CHECK(g1.val()(i) == doctest::Approx(g2.val()(i)).epsilon(1e-12));
}

TEST_CASE("body features: shape, ablation, and joint-permutation sensitivity") {
    synth::SceneRecording scene = make_scene();
    FeatureConfig cfg = tiny_config();
    Model model(cfg, 5);
    tensornet::Tensor f = model.body_features(scene.frames[0][0], {});
    CHECK(f.shape().back() == cfg.body_dim);

    AblationFlags nb;
    nb.no_body = true;
    tensornet::Tensor z = model.body_features(scene.frames[0][0], nb);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.val()(i) == 0.0);

    synth::ObservationFrame swapped = scene.frames[0][0];
    std::swap(swapped.body[3], swapped.body[11]);
    tensornet::Tensor g = model.body_features(swapped, {});
    double diff = 0;
    for (int64_t i = 0; i < f.numel(); ++i) diff += std::abs(f.val()(i) - g.val()(i));
    CHECK(diff > 1e-9);
}

TEST_CASE("ray embedding gauge invariance and distinctness") {
    Model model(tiny_config(), 5);
    Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        Vec3 ray(rng.gaussian(), rng.gaussian(), rng.gaussian());
        ray.normalize();
        Mat3 R1 = random_rotation(rng);
        tensornet::Tensor base = model.ray_embedding(ray, R1);

        Mat3 Rg = random_rotation(rng);
        tensornet::Tensor rot = model.ray_embedding(Rg * ray, R1 * Rg.transpose());
        for (int64_t i = 0; i < base.numel(); ++i)
            CHECK(std::abs(base.val()(i) - rot.val()(i)) < 1e-12);
    }
    for (int trial = 0; trial < 100; ++trial) {
        Vec3 a(rng.gaussian(), rng.gaussian(), rng.gaussian());
        Vec3 b(rng.gaussian(), rng.gaussian(), rng.gaussian());
        a.normalize();
        b.normalize();
        if ((a - b).norm() < 1e-3) continue;
        tensornet::Tensor ea = model.ray_embedding(a, Mat3::Identity());
        tensornet::Tensor eb = model.ray_embedding(b, Mat3::Identity());
        double diff = 0;
        for (int64_t i = 0; i < ea.numel(); ++i)
            diff += std::abs(ea.val()(i) - eb.val()(i));
        CHECK(diff > 1e-9);
    }
}

TEST_CASE("forward_step output contract and single-view fusion") {
    synth::SceneRecording scene = make_scene();
    Model model(tiny_config(), 5);

    auto views = frame_views(scene, 0, 1);
    StepOutput step = model.forward_step(views, nullptr);
    auto preds = model.predict(step, views);
    for (int h = 0; h < 2; ++h) {
        REQUIRE(preds[h].R.size() == 1);
        CHECK(geom::is_rotation(preds[h].R[0]));
        CHECK(preds[h].c[0] > 0);
        CHECK(preds[h].c[0] < 1);
        // Single view: fusion degenerates to the world-converted view rotation.
        Mat3 oracle = views[0].cam->R.transpose() * preds[h].R[0];
        CHECK((preds[h].fused_world - oracle).norm() < 1e-9);
    }

    auto four = frame_views(scene, 0, 4);
    StepOutput step4 = model.forward_step(four, nullptr);
    for (int h = 0; h < 2; ++h) {
        CHECK(step4.hands[h].r6.shape() == std::vector<int64_t>{4, 6});
        CHECK(step4.hands[h].T.shape() == std::vector<int64_t>{4, 3});
        CHECK(step4.hands[h].c_logit.shape() == std::vector<int64_t>{4, 1});
        CHECK(step4.hands[h].beta.numel() == 10);
        CHECK(step4.hands[h].theta.numel() == 45);
    }
}

TEST_CASE("duplicated view rows are identical and fusion is duplication-invariant") {
    synth::SceneRecording scene = make_scene();
    Model model(tiny_config(), 5);
    std::vector<ViewInput> dup{{&scene.frames[0][0], &scene.rig[0]},
                               {&scene.frames[0][0], &scene.rig[0]}};
    StepOutput step = model.forward_step(dup, nullptr);
    auto preds = model.predict(step, dup);
    for (int h = 0; h < 2; ++h) {
        CHECK((preds[h].R[0] - preds[h].R[1]).norm() < 1e-9);
        CHECK((preds[h].T[0] - preds[h].T[1]).norm() < 1e-9);
        CHECK(preds[h].c[0] == doctest::Approx(preds[h].c[1]).epsilon(1e-9));
        // Equal tokens with equal confidences average to the same rotation.
        Mat3 one = mvu_fuse({preds[h].R[0]}, {preds[h].c[0]}, {scene.rig[0].R});
        CHECK((preds[h].fused_world - one).norm() < 1e-9);
    }
}

TEST_CASE("rollout determinism and autoregression flags") {
    synth::SceneRecording scene = make_scene(4);
    Model model(tiny_config(), 5);
    std::vector<std::vector<ViewInput>> frames;
    for (int t = 0; t < 4; ++t) frames.push_back(frame_views(scene, t, 3));

    auto a = model.rollout(frames);
    auto b = model.rollout(frames);
    REQUIRE(a.size() == 4);
    for (int t = 0; t < 4; ++t)
        for (int h = 0; h < 2; ++h)
            for (int64_t i = 0; i < a[t].hands[h].r6.numel(); ++i)
                CHECK(a[t].hands[h].r6.val()(i) == b[t].hands[h].r6.val()(i));

    // T=1 rollout equals a bare forward step.
    auto single = model.rollout({frames[0]});
    StepOutput direct = model.forward_step(frames[0], nullptr);
    for (int h = 0; h < 2; ++h)
        for (int64_t i = 0; i < direct.hands[h].theta.numel(); ++i)
            CHECK(single[0].hands[h].theta.val()(i) == direct.hands[h].theta.val()(i));

    // no_autoregressive: every frame behaves like frame 0.
    AblationFlags na;
    na.no_autoregressive = true;
    StepOutput carried = model.forward_step(frames[1], &a[0], na);
    StepOutput fresh = model.forward_step(frames[1], nullptr, na);
    for (int h = 0; h < 2; ++h)
        for (int64_t i = 0; i < carried.hands[h].r6.numel(); ++i)
            CHECK(carried.hands[h].r6.val()(i) == fresh.hands[h].r6.val()(i));
}

TEST_CASE("gauge invariance of a forward step") {
    synth::SceneRecording scene = make_scene();
    Model model(tiny_config(), 5);
    auto views = frame_views(scene, 0, 4);
    StepOutput base = model.forward_step(views, nullptr);
    auto base_preds = model.predict(base, views);

    Rng rng(44);
    Mat3 Rg = random_rotation(rng);
    // Rotating the world by Rg leaves the 2D observations unchanged and maps
    // extrinsics R -> R Rg^T (t unchanged).
    std::vector<Camera> rot_rig = scene.rig;
    for (Camera& c : rot_rig) c.R = c.R * Rg.transpose();
    std::vector<ViewInput> rot_views;
    for (int c = 0; c < 4; ++c)
        rot_views.push_back({&scene.frames[0][c], &rot_rig[c]});

    StepOutput rot = model.forward_step(rot_views, nullptr);
    auto rot_preds = model.predict(rot, rot_views);
    for (int h = 0; h < 2; ++h) {
        for (int n = 0; n < 4; ++n) {
            CHECK((base_preds[h].R[n] - rot_preds[h].R[n]).norm() < 1e-9);
            CHECK((base_preds[h].T[n] - rot_preds[h].T[n]).norm() < 1e-9);
            CHECK(std::abs(base_preds[h].c[n] - rot_preds[h].c[n]) < 1e-9);
        }
        for (int i = 0; i < hand::kShapeDim; ++i)
            CHECK(std::abs(base_preds[h].beta[i] - rot_preds[h].beta[i]) < 1e-9);
        CHECK((rot_preds[h].fused_world - Rg * base_preds[h].fused_world).norm() <
              1e-9);
    }
}

TEST_CASE("loss is zero at ground truth and matches the translation example") {
    synth::SceneRecording scene = make_scene(2, 9, 0.5);
    const int N = 4;
    std::vector<std::vector<ViewInput>> frames;
    std::vector<FrameTarget> targets;
    std::vector<int> view_ids{0, 1, 2, 3};
    for (int t = 0; t < 2; ++t) {
        frames.push_back(frame_views(scene, t, N));
        targets.push_back(make_target(scene, t, view_ids));
    }

    auto exact_steps = [&] {
        std::vector<StepOutput> steps;
        for (int t = 0; t < 2; ++t) {
            StepOutput step;
            for (int h = 0; h < 2; ++h) {
                const FrameTarget& tgt = targets[t];
                std::vector<double> r6(N * 6), tv(N * 3), logit(N);
                for (int n = 0; n < N; ++n) {
                    const Camera& cam = *frames[t][n].cam;
                    geom::Rot6d g =
                        geom::rot6d_from_matrix(cam.R * tgt.orientation_world[h]);
                    for (int i = 0; i < 6; ++i) r6[n * 6 + i] = g(i);
                    Vec3 tc = cam.R * tgt.wrist_world[h] + cam.t;
                    for (int i = 0; i < 3; ++i) tv[n * 3 + i] = tc(i);
                    double p = std::clamp(tgt.conf_target[n][h], 1e-12, 1.0 - 1e-12);
                    logit[n] = std::log(p / (1.0 - p));
                }
                HandOutput& ho = step.hands[h];
                ho.r6 = tensornet::Tensor::from({N, 6}, r6);
                ho.T = tensornet::Tensor::from({N, 3}, tv);
                ho.c_logit = tensornet::Tensor::from({N, 1}, logit);
                ho.beta = tensornet::Tensor::from(
                    {hand::kShapeDim},
                    std::vector<double>(tgt.beta[h].begin(), tgt.beta[h].end()));
                ho.theta = tensornet::Tensor::from(
                    {3 * hand::kNumArticulated},
                    std::vector<double>(tgt.theta[h].begin(), tgt.theta[h].end()));
            }
            steps.push_back(std::move(step));
        }
        return steps;
    };

    LossBreakdown zero = loss(exact_steps(), frames, targets, LossWeights{});
    CHECK(zero.l_r < 1e-9);
    CHECK(zero.l_t < 1e-9);
    CHECK(zero.l_beta < 1e-9);
    CHECK(zero.l_theta < 1e-9);
    CHECK(zero.l_j < 1e-6);
    CHECK(zero.l_c < 1e-9);
    CHECK(zero.total.item() < 1e-5);

    // Shift every per-view translation by 0.1 m in x: L_T becomes exactly 0.1.
    auto shifted = exact_steps();
    for (auto& step : shifted)
        for (auto& ho : step.hands)
            for (int n = 0; n < N; ++n) ho.T.val()(n * 3) += 0.1;
    LossWeights t_only;
    t_only.lambda_r = t_only.lambda_beta = t_only.lambda_theta = 0;
    t_only.lambda_j = t_only.lambda_c = 0;
    LossBreakdown lb = loss(shifted, frames, targets, t_only);
    CHECK(lb.l_t == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(lb.total.item() == doctest::Approx(0.1).epsilon(1e-9));
}

TEST_CASE("loss matches an independent formula oracle on random predictions") {
    synth::SceneRecording scene = make_scene(2, 10, 0.5);
    const int N = 3;
    std::vector<std::vector<ViewInput>> frames{frame_views(scene, 0, N)};
    std::vector<FrameTarget> targets{make_target(scene, 0, {0, 1, 2})};

    Rng rng(45);
    StepOutput step;
    for (int h = 0; h < 2; ++h) {
        std::vector<double> r6(N * 6), tv(N * 3), logit(N), beta(10), theta(45);
        for (double& v : r6) v = rng.gaussian();
        for (double& v : tv) v = rng.gaussian();
        for (double& v : logit) v = rng.gaussian();
        for (double& v : beta) v = 0.5 * rng.gaussian();
        for (double& v : theta) v = 0.3 * rng.gaussian();
        HandOutput& ho = step.hands[h];
        ho.r6 = tensornet::Tensor::from({N, 6}, r6);
        ho.T = tensornet::Tensor::from({N, 3}, tv);
        ho.c_logit = tensornet::Tensor::from({N, 1}, logit);
        ho.beta = tensornet::Tensor::from({10}, beta);
        ho.theta = tensornet::Tensor::from({45}, theta);
    }
    LossWeights w;
    LossBreakdown lb = loss({step}, frames, targets, w);

    // Re-derive L_R, L_T, L_beta, L_theta, L_C directly from the definitions.
    double lr = 0, lt = 0, lbq = 0, lth = 0, lc = 0;
    for (int h = 0; h < 2; ++h) {
        const HandOutput& ho = step.hands[h];
        const FrameTarget& tgt = targets[0];
        double hr = 0, ht = 0;
        for (int n = 0; n < N; ++n) {
            const Camera& cam = *frames[0][n].cam;
            geom::Rot6d g = geom::rot6d_from_matrix(cam.R * tgt.orientation_world[h]);
            for (int i = 0; i < 6; ++i) {
                double d = ho.r6.val()(n * 6 + i) - g(i);
                hr += d * d;
            }
            Vec3 tc = cam.R * tgt.wrist_world[h] + cam.t;
            for (int i = 0; i < 3; ++i) ht += std::abs(ho.T.val()(n * 3 + i) - tc(i));
        }
        lr += hr / N;
        lt += ht / N;
        for (int i = 0; i < 10; ++i) {
            double d = ho.beta.val()(i) - tgt.beta[h][i];
            lbq += d * d;
        }
        for (int i = 0; i < 45; ++i) {
            double d = ho.theta.val()(i) - tgt.theta[h][i];
            lth += d * d;
        }
        double hc = 0;
        for (int n = 0; n < N; ++n) {
            double y = tgt.conf_target[n][h];
            double s = 1.0 / (1.0 + std::exp(-ho.c_logit.val()(n)));
            double ce = -(y * std::log(s) + (1 - y) * std::log(1 - s));
            double ent = 0;
            if (y > 0) ent -= y * std::log(y);
            if (y < 1) ent -= (1 - y) * std::log(1 - y);
            hc += ce - ent;
        }
        lc += hc / N;
    }
    const double inv = 1.0 / 2.0;  // one frame, two hands
    CHECK(lb.l_r == doctest::Approx(lr * inv).epsilon(1e-9));
    CHECK(lb.l_t == doctest::Approx(lt * inv).epsilon(1e-9));
    CHECK(lb.l_beta == doctest::Approx(lbq * inv).epsilon(1e-9));
    CHECK(lb.l_theta == doctest::Approx(lth * inv).epsilon(1e-9));
    CHECK(lb.l_c == doctest::Approx(lc * inv).epsilon(1e-9));
    double total = w.lambda_r * lb.l_r + w.lambda_t * lb.l_t +
                   w.lambda_beta * lb.l_beta + w.lambda_theta * lb.l_theta +
                   w.lambda_j * lb.l_j + w.lambda_c * lb.l_c;
    CHECK(lb.total.item() == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("every parameter gets a finite gradient") {
    synth::SceneRecording scene = make_scene(4, 11, 0.5);
    Model model(tiny_config(), 6);
    std::vector<std::vector<ViewInput>> frames;
    std::vector<FrameTarget> targets;
    for (int t = 0; t < 2; ++t) {
        frames.push_back(frame_views(scene, t, 2));
        targets.push_back(make_target(scene, t, {0, 1}));
    }
    auto steps = model.rollout(frames);
    LossBreakdown lb = loss(steps, frames, targets, LossWeights{});
    model.params().zero_grads();
    lb.total.backward();
    int nonzero = 0;
    for (const auto& [name, p] : model.params().all()) {
        REQUIRE(p.grad().size() == p.val().size());
        for (int64_t i = 0; i < p.grad().size(); ++i)
            REQUIRE(std::isfinite(p.grad()(i)));
        if (p.grad().cwiseAbs().maxCoeff() > 0) ++nonzero;
    }
    // No dead heads: nearly all parameter blocks participate.
    CHECK(nonzero >= static_cast<int>(model.params().all().size()) - 2);
}

TEST_CASE("train config JSON round trip") {
    TrainConfig cfg;
    cfg.stage1_iters = 12;
    cfg.stage2_iters = 34;
    cfg.seed = 77;
    cfg.ablation.no_body = true;
    cfg.weights.lambda_c = 0.25;
    TrainConfig back = train_config_from_json(train_config_json(cfg));
    CHECK(back.stage1_iters == 12);
    CHECK(back.stage2_iters == 34);
    CHECK(back.seed == 77);
    CHECK(back.ablation.no_body);
    CHECK_FALSE(back.ablation.no_multiview);
    CHECK(back.weights.lambda_c == doctest::Approx(0.25));
    CHECK(back.features.hidden == cfg.features.hidden);
}
