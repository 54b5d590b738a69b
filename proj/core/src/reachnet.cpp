#include "farpose/reachnet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "farpose/rng.hpp"

namespace farpose::reachnet {

namespace tn = tensornet;

void FeatureConfig::validate() const {
    if (body_dim <= 0 || hand_dim <= 0 || hidden <= 0 || pose_hidden <= 0)
        throw ConfigError("FeatureConfig: dims must be positive");
    if (hidden % heads != 0 || pose_hidden % pose_heads != 0)
        throw ConfigError("FeatureConfig: hidden dim not divisible by heads");
    if (layers <= 0 || pose_layers <= 0 || ray_freqs <= 0)
        throw ConfigError("FeatureConfig: layer/frequency counts must be positive");
}

FeatureConfig FeatureConfig::desk_scale() {
    FeatureConfig c;
    c.body_dim = 32;
    c.hand_dim = 128;
    c.hidden = 128;
    c.layers = 2;
    c.heads = 4;
    c.pose_layers = 2;
    c.pose_heads = 8;
    c.pose_hidden = 32;
    return c;
}

// -- MVU fusion ---------------------------------------------------------------

Mat3 mvu_fuse(const std::vector<Mat3>& O, const std::vector<double>& c,
              const std::vector<Mat3>& camera_R) {
    if (O.empty() || O.size() != c.size() || O.size() != camera_R.size())
        throw ShapeMismatch("mvu_fuse: input lists must be non-empty and equal length");
    double csum = 0;
    for (double ci : c) csum += ci;
    if (csum < 1e-12) throw AllZeroConfidence("mvu_fuse: confidences sum to zero");
    Rot6d acc = Rot6d::Zero();
    for (size_t n = 0; n < O.size(); ++n)
        acc += c[n] * geom::rot6d_from_matrix(camera_R[n].transpose() * O[n]);
    return geom::matrix_from_rot6d(acc / csum);
}

// -- graph-side geometry helpers ----------------------------------------------

namespace {

using tn::Tensor;

Tensor elem(const Tensor& v, int i) { return tn::slice_rows(v, i, i + 1); }

Tensor neg(const Tensor& a) { return tn::scale(a, -1.0); }

Tensor dot3(const Tensor& a, const Tensor& b) { return tn::sum(tn::mul(a, b)); }

Tensor normalize3(const Tensor& v) {
    Tensor n = tn::sqrt(tn::add(dot3(v, v), Tensor::scalar(1e-24)));
    return tn::mul_bcast(v, tn::div(Tensor::scalar(1.0), n));
}

Tensor cross3(const Tensor& a, const Tensor& b) {
    Tensor ax = elem(a, 0), ay = elem(a, 1), az = elem(a, 2);
    Tensor bx = elem(b, 0), by = elem(b, 1), bz = elem(b, 2);
    return tn::concat_rows({tn::sub(tn::mul(ay, bz), tn::mul(az, by)),
                            tn::sub(tn::mul(az, bx), tn::mul(ax, bz)),
                            tn::sub(tn::mul(ax, by), tn::mul(ay, bx))});
}

Tensor const_mat(const Eigen::MatrixXd& m) {
    // Row-major copy into a constant tensor.
    std::vector<double> data;
    data.reserve(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return Tensor::from({m.rows(), m.cols()}, data);
}

/// Gram-Schmidt recovery of a (3,3) rotation from a (1,6) 6D row.
Tensor rotation_from_r6_graph(const Tensor& r6_row) {
    Tensor a = tn::transpose(tn::slice(r6_row, 0, 3));
    Tensor b = tn::transpose(tn::slice(r6_row, 3, 6));
    Tensor c1 = normalize3(a);
    Tensor u = tn::sub(b, tn::mul_bcast(c1, dot3(c1, b)));
    Tensor c2 = normalize3(u);
    return tn::concat({c1, c2, cross3(c1, c2)});
}

/// Rodrigues formula on an unnormalized (3,1) axis-angle.
Tensor rodrigues_graph(const Tensor& aa) {
    Tensor t2 = dot3(aa, aa);
    Tensor th = tn::sqrt(tn::add(t2, Tensor::scalar(1e-24)));
    Tensor s1 = tn::div(tn::sin(th), th);
    Tensor s2 = tn::div(tn::sub(Tensor::scalar(1.0), tn::cos(th)),
                        tn::add(t2, Tensor::scalar(1e-24)));
    Tensor x = elem(aa, 0), y = elem(aa, 1), z = elem(aa, 2);
    Tensor zero = Tensor::scalar(0.0);
    Tensor K = tn::concat({tn::concat_rows({zero, z, neg(y)}),
                           tn::concat_rows({neg(z), zero, x}),
                           tn::concat_rows({y, neg(x), zero})});
    Tensor I = const_mat(Eigen::Matrix3d::Identity());
    return tn::add(tn::add(I, tn::mul_bcast(K, s1)), tn::mul_bcast(tn::matmul(K, K), s2));
}

/// Differentiable forward kinematics: wrist-local joints as a (3,21) tensor.
/// Mirrors the numeric implementation (beta clamping omitted; supervised betas
/// stay well inside the clamp range).
Tensor fk_graph(const Tensor& beta, const Tensor& theta, hand::Handedness handedness) {
    const double mirror = handedness == hand::Handedness::Left ? -1.0 : 1.0;
    const auto& digits = hand::digit_templates();
    Tensor one = Tensor::scalar(1.0);
    Tensor global = tn::add(one, tn::scale(tn::slice(beta, 0, 1), 0.05));

    std::vector<Tensor> cols(hand::kNumJoints);
    cols[0] = Tensor::from({3, 1}, std::vector<double>{0, 0, 0});
    for (int d = 0; d < 5; ++d) {
        const auto& spec = digits[d];
        Tensor ls = tn::mul(global, tn::add(one, tn::scale(tn::slice(beta, d, d + 1), 0.05)));
        Eigen::Vector3d off = spec.mcp_offset, dir = spec.dir;
        off.x() *= mirror;
        dir.x() *= mirror;
        Tensor p = tn::mul_bcast(const_mat(off), ls);
        cols[1 + 4 * d] = p;
        Tensor R = const_mat(Eigen::Matrix3d::Identity());
        for (int b = 0; b < 3; ++b) {
            const int joint15 = 3 * d + b;
            Tensor aa = tn::transpose(tn::slice(theta, 3 * joint15, 3 * joint15 + 3));
            R = tn::matmul(R, rodrigues_graph(aa));
            Tensor step = tn::mul_bcast(tn::matmul(R, const_mat(dir)),
                                        tn::scale(ls, spec.bones[b]));
            p = tn::add(p, step);
            cols[2 + 4 * d + b] = p;
        }
    }
    return tn::concat(cols);
}

Tensor sum_terms(const std::vector<Tensor>& terms) {
    if (terms.empty()) return Tensor::scalar(0.0);
    Tensor acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = tn::add(acc, terms[i]);
    return acc;
}

}  // namespace

// -- feature stubs ------------------------------------------------------------

std::array<double, 4> hand_crop(const synth::ObservationFrame& obs, int hand) {
    double ymin = obs.body[0].px.y(), ymax = ymin;
    for (const auto& kp : obs.body) {
        ymin = std::min(ymin, kp.px.y());
        ymax = std::max(ymax, kp.px.y());
    }
    const double side = 0.5 * (ymax - ymin);
    const int wrist_kp = hand == 0 ? synth::kLeftWrist : synth::kRightWrist;
    const geom::Vec2 c = obs.body[wrist_kp].px;
    return {c.x() - side / 2, c.y() - side / 2, c.x() + side / 2, c.y() + side / 2};
}

Tensor Model::hand_features(const synth::ObservationFrame& obs, int hand) const {
    const auto box = hand_crop(obs, hand);
    const double side = std::max(box[2] - box[0], 1e-9);
    const geom::Vec2 center(0.5 * (box[0] + box[2]), 0.5 * (box[1] + box[3]));
    Eigen::VectorXd in = Eigen::VectorXd::Zero(44);
    const synth::HandObs& ho = obs.hands[hand];
    if (ho.visible) {
        for (int j = 0; j < hand::kNumJoints; ++j) {
            in(2 * j) = (ho.joint_px[j].x() - center.x()) / side;
            in(2 * j + 1) = (ho.joint_px[j].y() - center.y()) / side;
        }
        in(42) = 1.0;
    }
    in(43) = side / 1000.0;
    Eigen::VectorXd f = hand_stub_map_ * in;
    return Tensor::from({1, cfg_.hand_dim}, f);
}

Tensor Model::body_features(const synth::ObservationFrame& obs, const AblationFlags& abl) {
    if (abl.no_body) return Tensor::zeros({1, cfg_.body_dim});

    double xmin = obs.body[0].px.x(), xmax = xmin;
    double ymin = obs.body[0].px.y(), ymax = ymin;
    for (const auto& kp : obs.body) {
        xmin = std::min(xmin, kp.px.x());
        xmax = std::max(xmax, kp.px.x());
        ymin = std::min(ymin, kp.px.y());
        ymax = std::max(ymax, kp.px.y());
    }
    const geom::Vec2 center(0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
    const double size = std::max({xmax - xmin, ymax - ymin, 1.0});

    Eigen::MatrixXd stub(synth::kBodyKeypoints, cfg_.pose_hidden);
    std::vector<double> rel;
    rel.reserve(2 * synth::kBodyKeypoints);
    for (int j = 0; j < synth::kBodyKeypoints; ++j) {
        const double rx = (obs.body[j].px.x() - center.x()) / size;
        const double ry = (obs.body[j].px.y() - center.y()) / size;
        rel.push_back(rx);
        rel.push_back(ry);
        stub.row(j) = (body_stub_map_ * Eigen::Vector3d(rx, ry, obs.body[j].conf)).transpose();
    }
    Tensor tokens = tn::add(
        tn::add(const_mat(stub),
                tn::linear(Tensor::from({synth::kBodyKeypoints, 2}, rel), lin("pose.pos"))),
        params_.get("pose.joint_embed"));
    Tensor x = tn::concat_rows({params_.get("pose.cls"), tokens});
    for (int l = 0; l < cfg_.pose_layers; ++l)
        x = tn::transformer_encoder_layer(
            x, enc_layer("pose.enc" + std::to_string(l), cfg_.pose_heads));
    return tn::linear(tn::slice_rows(x, 0, 1), lin("pose.out"));
}

Tensor Model::ray_embedding(const Vec3& ray_world, const Mat3& first_camera_R) {
    const Vec3 r = first_camera_R * ray_world;
    std::vector<double> emb;
    emb.reserve(6 * cfg_.ray_freqs);
    for (int i = 0; i < 3; ++i) {
        double f = 1.0;
        for (int k = 0; k < cfg_.ray_freqs; ++k, f *= 2.0) {
            emb.push_back(std::sin(f * r(i)));
            emb.push_back(std::cos(f * r(i)));
        }
    }
    return tn::linear(Tensor::from({1, 6 * cfg_.ray_freqs}, emb), lin("ray"));
}

// -- model construction -------------------------------------------------------

namespace {

void create_linear(tn::ParamStore& p, const std::string& name, int in, int out,
                   std::mt19937_64& rng) {
    p.create(name + ".W", {in, out}, rng);
    p.create_zero(name + ".b", {out});
}

void create_ln(tn::ParamStore& p, const std::string& name, int dim) {
    p.create_zero(name + ".g", {dim}).val().setOnes();
    p.create_zero(name + ".b", {dim});
}

void create_enc_layer(tn::ParamStore& p, const std::string& prefix, int dim,
                      std::mt19937_64& rng) {
    create_ln(p, prefix + ".ln1", dim);
    create_ln(p, prefix + ".ln2", dim);
    for (const char* n : {".q", ".k", ".v", ".o"})
        create_linear(p, prefix + ".attn" + std::string(n), dim, dim, rng);
    create_linear(p, prefix + ".fc1", dim, 4 * dim, rng);
    create_linear(p, prefix + ".fc2", 4 * dim, dim, rng);
}

void create_dec_layer(tn::ParamStore& p, const std::string& prefix, int dim,
                      std::mt19937_64& rng) {
    create_ln(p, prefix + ".ln1", dim);
    create_ln(p, prefix + ".ln2", dim);
    create_ln(p, prefix + ".ln3", dim);
    for (const char* n : {".sq", ".sk", ".sv", ".so", ".cq", ".ck", ".cv", ".co"})
        create_linear(p, prefix + std::string(n), dim, dim, rng);
    create_linear(p, prefix + ".fc1", dim, 4 * dim, rng);
    create_linear(p, prefix + ".fc2", 4 * dim, dim, rng);
}

}  // namespace

tn::LinearParams Model::lin(const std::string& name) const {
    return {params_.get(name + ".W"), params_.get(name + ".b")};
}

tn::EncoderLayerParams Model::enc_layer(const std::string& prefix, int heads) const {
    tn::EncoderLayerParams e;
    e.ln1 = {params_.get(prefix + ".ln1.g"), params_.get(prefix + ".ln1.b")};
    e.ln2 = {params_.get(prefix + ".ln2.g"), params_.get(prefix + ".ln2.b")};
    e.attn = {lin(prefix + ".attn.q"), lin(prefix + ".attn.k"), lin(prefix + ".attn.v"),
              lin(prefix + ".attn.o"), heads};
    e.mlp = {lin(prefix + ".fc1"), lin(prefix + ".fc2")};
    return e;
}

tn::DecoderLayerParams Model::dec_layer(const std::string& prefix, int heads) const {
    tn::DecoderLayerParams d;
    d.ln1 = {params_.get(prefix + ".ln1.g"), params_.get(prefix + ".ln1.b")};
    d.ln2 = {params_.get(prefix + ".ln2.g"), params_.get(prefix + ".ln2.b")};
    d.ln3 = {params_.get(prefix + ".ln3.g"), params_.get(prefix + ".ln3.b")};
    d.self_attn = {lin(prefix + ".sq"), lin(prefix + ".sk"), lin(prefix + ".sv"),
                   lin(prefix + ".so"), heads};
    d.cross_attn = {lin(prefix + ".cq"), lin(prefix + ".ck"), lin(prefix + ".cv"),
                    lin(prefix + ".co"), heads};
    d.mlp = {lin(prefix + ".fc1"), lin(prefix + ".fc2")};
    return d;
}

Model::Model(const FeatureConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);

    // Fixed (non-trainable) stub feature maps; seeded independently of the
    // training seed so a checkpoint fully determines inference.
    std::mt19937_64 stub_rng(0x5eedf00d);
    auto u = [&stub_rng]() {
        return 2.0 * (static_cast<double>(stub_rng() >> 11) * 0x1.0p-53) - 1.0;
    };
    hand_stub_map_ = Eigen::MatrixXd::Zero(cfg_.hand_dim, 44);
    for (Eigen::Index i = 0; i < hand_stub_map_.size(); ++i)
        hand_stub_map_(i / 44, i % 44) = u() / std::sqrt(44.0);
    body_stub_map_ = Eigen::MatrixXd::Zero(cfg_.pose_hidden, 3);
    for (Eigen::Index i = 0; i < body_stub_map_.size(); ++i)
        body_stub_map_(i / 3, i % 3) = u() / std::sqrt(3.0);

    // Pose encoder (body features).
    create_linear(params_, "pose.pos", 2, cfg_.pose_hidden, rng);
    params_.create("pose.joint_embed", {synth::kBodyKeypoints, cfg_.pose_hidden}, rng);
    params_.create("pose.cls", {1, cfg_.pose_hidden}, rng);
    for (int l = 0; l < cfg_.pose_layers; ++l)
        create_enc_layer(params_, "pose.enc" + std::to_string(l), cfg_.pose_hidden, rng);
    create_linear(params_, "pose.out", cfg_.pose_hidden, cfg_.body_dim, rng);

    // Main encoder-decoder.
    create_linear(params_, "in_proj", cfg_.token_dim(), cfg_.hidden, rng);
    create_linear(params_, "ray", 6 * cfg_.ray_freqs, cfg_.hidden, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
        create_enc_layer(params_, "enc" + std::to_string(l), cfg_.hidden, rng);
        create_dec_layer(params_, "dec" + std::to_string(l), cfg_.hidden, rng);
    }
    for (int h = 0; h < 2; ++h) {
        params_.create("q_init_cam" + std::to_string(h), {1, cfg_.hidden}, rng);
        params_.create("q_init_cls" + std::to_string(h), {1, cfg_.hidden}, rng);
    }
    create_linear(params_, "cam_head.fc1", cfg_.hidden, cfg_.hidden, rng);
    create_linear(params_, "cam_head.fc2", cfg_.hidden, 10, rng);
    create_linear(params_, "cls_head.fc1", cfg_.hidden, cfg_.hidden, rng);
    create_linear(params_, "cls_head.fc2", cfg_.hidden, 55, rng);
}

// -- forward ------------------------------------------------------------------

namespace {
Vec3 wrist_ray_world(const ViewInput& v, int hand) {
    const int kp = hand == 0 ? synth::kLeftWrist : synth::kRightWrist;
    return (v.cam->R.transpose() * geom::unproject(*v.cam, v.obs->body[kp].px))
        .normalized();
}
}  // namespace

StepOutput Model::forward_step(const std::vector<ViewInput>& views, const StepOutput* prev,
                               const AblationFlags& abl) {
    if (views.empty()) throw ShapeMismatch("forward_step: no views");
    const int N = static_cast<int>(views.size());
    const Mat3& R1 = views[0].cam->R;

    // Per-hand, per-view ray embeddings in the gauge of the first camera.
    std::array<std::vector<Tensor>, 2> rays;
    for (int h = 0; h < 2; ++h)
        for (const ViewInput& v : views)
            rays[h].push_back(ray_embedding(wrist_ray_world(v, h), R1));

    // Encoder tokens.
    std::vector<Tensor> token_rows;
    token_rows.reserve(N);
    for (int n = 0; n < N; ++n)
        token_rows.push_back(tn::concat({body_features(*views[n].obs, abl),
                                         hand_features(*views[n].obs, 0),
                                         hand_features(*views[n].obs, 1)}));
    Tensor x = tn::linear(tn::concat_rows(token_rows), lin("in_proj"));
    x = tn::add(x, tn::add(tn::concat_rows(rays[0]), tn::concat_rows(rays[1])));
    for (int l = 0; l < cfg_.layers; ++l)
        x = tn::transformer_encoder_layer(x, enc_layer("enc" + std::to_string(l), cfg_.heads));
    Tensor memory = x;

    // Decoder queries: N camera queries + 1 CLS per hand.
    std::array<Tensor, 2> q;
    for (int h = 0; h < 2; ++h) {
        Tensor ray_block = tn::concat_rows(rays[h]);
        if (prev != nullptr && !abl.no_autoregressive) {
            q[h] = prev->hands[h].queries;
            if (!abl.no_ray_embedding) {
                Tensor pad = tn::concat_rows({ray_block, Tensor::zeros({1, cfg_.hidden})});
                q[h] = tn::add(q[h], pad);
            }
        } else {
            std::vector<Tensor> cam_rows(N, params_.get("q_init_cam" + std::to_string(h)));
            Tensor cams = tn::add(tn::concat_rows(cam_rows), ray_block);
            q[h] = tn::concat_rows({cams, params_.get("q_init_cls" + std::to_string(h))});
        }
    }

    Tensor dq = tn::concat_rows({q[0], q[1]});
    for (int l = 0; l < cfg_.layers; ++l)
        dq = tn::transformer_decoder_layer(dq, memory,
                                           dec_layer("dec" + std::to_string(l), cfg_.heads));

    StepOutput out;
    for (int h = 0; h < 2; ++h) {
        Tensor rows = tn::slice_rows(dq, h * (N + 1), (h + 1) * (N + 1));
        Tensor cam_rows = tn::slice_rows(rows, 0, N);
        Tensor cls_row = tn::slice_rows(rows, N, N + 1);
        Tensor cam_out = tn::linear(tn::gelu(tn::linear(cam_rows, lin("cam_head.fc1"))),
                                    lin("cam_head.fc2"));
        Tensor cls_out = tn::linear(tn::gelu(tn::linear(cls_row, lin("cls_head.fc1"))),
                                    lin("cls_head.fc2"));
        HandOutput& ho = out.hands[h];
        ho.r6 = tn::slice(cam_out, 0, 6);
        ho.T = tn::slice(cam_out, 6, 9);
        ho.c_logit = tn::slice(cam_out, 9, 10);
        ho.beta = tn::reshape(tn::slice(cls_out, 0, 10), {10});
        ho.theta = tn::reshape(tn::slice(cls_out, 10, 55), {45});
        ho.queries = rows;
    }
    return out;
}

std::vector<StepOutput> Model::rollout(const std::vector<std::vector<ViewInput>>& frames,
                                       const AblationFlags& abl) {
    std::vector<StepOutput> out;
    out.reserve(frames.size());
    for (size_t t = 0; t < frames.size(); ++t)
        out.push_back(forward_step(frames[t], t == 0 ? nullptr : &out.back(), abl));
    return out;
}

std::array<HandPrediction, 2> Model::predict(const StepOutput& step,
                                             const std::vector<ViewInput>& views) const {
    const int N = static_cast<int>(views.size());
    std::array<HandPrediction, 2> preds;
    for (int h = 0; h < 2; ++h) {
        const HandOutput& ho = step.hands[h];
        HandPrediction& p = preds[h];
        std::vector<Mat3> cam_R;
        for (int n = 0; n < N; ++n) {
            Rot6d r6;
            for (int i = 0; i < 6; ++i) r6(i) = ho.r6.val()(n * 6 + i);
            p.R.push_back(geom::matrix_from_rot6d(r6));
            p.T.push_back(Vec3(ho.T.val()(n * 3), ho.T.val()(n * 3 + 1),
                               ho.T.val()(n * 3 + 2)));
            p.c.push_back(1.0 / (1.0 + std::exp(-ho.c_logit.val()(n))));
            cam_R.push_back(views[n].cam->R);
        }
        for (int i = 0; i < hand::kShapeDim; ++i) p.beta[i] = ho.beta.val()(i);
        for (int i = 0; i < 3 * hand::kNumArticulated; ++i) p.theta[i] = ho.theta.val()(i);

        try {
            p.fused_world = mvu_fuse(p.R, p.c, cam_R);
        } catch (const DegenerateInput&) {
            // Averaged 6D halves parallel: fall back to the most confident view.
            const int best = static_cast<int>(
                std::max_element(p.c.begin(), p.c.end()) - p.c.begin());
            p.fused_world = cam_R[best].transpose() * p.R[best];
        }

        Vec3 acc = Vec3::Zero();
        double wsum = 0;
        for (int n = 0; n < N; ++n) {
            if (p.c[n] <= 0.5) continue;
            const Camera& cam = *views[n].cam;
            acc += p.c[n] * (cam.R.transpose() * (p.T[n] - cam.t));
            wsum += p.c[n];
        }
        if (wsum > 0) {
            p.wrist_world = acc / wsum;
        } else {
            const int best = static_cast<int>(
                std::max_element(p.c.begin(), p.c.end()) - p.c.begin());
            const Camera& cam = *views[best].cam;
            p.wrist_world = cam.R.transpose() * (p.T[best] - cam.t);
        }
    }
    return preds;
}

// -- loss ---------------------------------------------------------------------

FrameTarget make_target(const synth::SceneRecording& scene, int t,
                        const std::vector<int>& views) {
    FrameTarget tgt;
    const synth::FrameGt& gt = scene.gt[t];
    for (int h = 0; h < 2; ++h) {
        tgt.orientation_world[h] = gt.hands[h].placement.orientation;
        tgt.wrist_world[h] = gt.hands[h].placement.wrist;
        tgt.beta[h] = gt.hands[h].shape.beta;
        tgt.theta[h] = gt.hands[h].pose.theta;
        tgt.handedness[h] = gt.hands[h].shape.handedness;
    }
    for (int v : views) {
        const synth::ObservationFrame& obs = scene.frames[t][v];
        std::array<double, 2> conf{};
        std::array<bool, 2> vis{};
        for (int h = 0; h < 2; ++h) {
            const int kp = h == 0 ? synth::kLeftWrist : synth::kRightWrist;
            conf[h] = obs.body[kp].conf;
            vis[h] = obs.hands[h].visible;
        }
        tgt.conf_target.push_back(conf);
        tgt.hand_visible.push_back(vis);
    }
    return tgt;
}

LossBreakdown loss(const std::vector<StepOutput>& steps,
                   const std::vector<std::vector<ViewInput>>& frames,
                   const std::vector<FrameTarget>& targets, const LossWeights& w) {
    if (steps.size() != frames.size() || steps.size() != targets.size())
        throw ShapeMismatch("loss: sequence lengths differ");
    const int F = static_cast<int>(steps.size());

    std::vector<Tensor> r_terms, t_terms, b_terms, th_terms, j_terms, c_terms;
    for (int f = 0; f < F; ++f) {
        const int N = static_cast<int>(frames[f].size());
        for (int h = 0; h < 2; ++h) {
            const HandOutput& ho = steps[f].hands[h];
            const FrameTarget& tgt = targets[f];

            std::vector<double> r6_tgt, t_tgt;
            for (int n = 0; n < N; ++n) {
                const Camera& cam = *frames[f][n].cam;
                Rot6d g = geom::rot6d_from_matrix(cam.R * tgt.orientation_world[h]);
                for (int i = 0; i < 6; ++i) r6_tgt.push_back(g(i));
                Vec3 tc = cam.R * tgt.wrist_world[h] + cam.t;
                for (int i = 0; i < 3; ++i) t_tgt.push_back(tc(i));
            }
            r_terms.push_back(tn::scale(
                tn::l2(ho.r6, Tensor::from({N, 6}, r6_tgt)), 1.0 / N));
            t_terms.push_back(tn::scale(
                tn::l1(ho.T, Tensor::from({N, 3}, t_tgt)), 1.0 / N));
            b_terms.push_back(tn::l2(
                ho.beta, Tensor::from({10}, std::vector<double>(tgt.beta[h].begin(),
                                                                tgt.beta[h].end()))));
            th_terms.push_back(tn::l2(
                ho.theta, Tensor::from({45}, std::vector<double>(tgt.theta[h].begin(),
                                                                 tgt.theta[h].end()))));

            // L_J: predicted hand rendered per view and projected through the
            // view's camera intrinsics, compared to the GT projections,
            // normalized by image width.
            hand::HandShape gshape;
            gshape.beta = tgt.beta[h];
            gshape.handedness = tgt.handedness[h];
            hand::HandPose gpose;
            gpose.theta = tgt.theta[h];
            hand::HandPlacement gplace{tgt.orientation_world[h], tgt.wrist_world[h]};
            hand::Joints gt_world =
                hand::place(hand::forward_kinematics(gshape, gpose), gplace);

            Tensor fk = fk_graph(ho.beta, ho.theta, tgt.handedness[h]);  // (3,21)
            Tensor fk_t = tn::transpose(fk);                             // (21,3)
            for (int n = 0; n < N; ++n) {
                if (!tgt.hand_visible[n][h]) continue;
                const Camera& cam = *frames[f][n].cam;
                std::vector<double> gu(hand::kNumJoints), gv(hand::kNumJoints);
                bool ok = true;
                for (int j = 0; j < hand::kNumJoints; ++j) {
                    auto pj = geom::project(cam, gt_world[j]);
                    if (!pj.visible) { ok = false; break; }
                    gu[j] = pj.px.x();
                    gv[j] = pj.px.y();
                }
                if (!ok) continue;

                Tensor Rg = rotation_from_r6_graph(tn::slice_rows(ho.r6, n, n + 1));
                Tensor trow = tn::reshape(tn::slice_rows(ho.T, n, n + 1), {3});
                Tensor jc = tn::add(tn::matmul(fk_t, tn::transpose(Rg)), trow);  // (21,3)
                Tensor X = tn::slice(jc, 0, 1);
                Tensor Y = tn::slice(jc, 1, 2);
                Tensor Z = tn::clamp_min(tn::slice(jc, 2, 3), 0.05);
                const double W = cam.width;
                std::vector<double> tu(hand::kNumJoints), tv(hand::kNumJoints);
                for (int j = 0; j < hand::kNumJoints; ++j) {
                    tu[j] = (gu[j] - cam.cx) / W;
                    tv[j] = (gv[j] - cam.cy) / W;
                }
                Tensor du = tn::sub(tn::scale(tn::div(X, Z), cam.fx / W),
                                    Tensor::from({hand::kNumJoints, 1}, tu));
                Tensor dv = tn::sub(tn::scale(tn::div(Y, Z), cam.fy / W),
                                    Tensor::from({hand::kNumJoints, 1}, tv));
                j_terms.push_back(tn::add(tn::sum(tn::mul(du, du)),
                                          tn::sum(tn::mul(dv, dv))));
            }

            // L_C: binary cross-entropy against the wrist-keypoint confidence
            // target, shifted by the target entropy so a matched prediction
            // scores zero.
            std::vector<double> y(N);
            double entropy = 0;
            for (int n = 0; n < N; ++n) {
                y[n] = std::clamp(tgt.conf_target[n][h], 0.0, 1.0);
                if (y[n] > 0) entropy += y[n] * std::log(y[n]);
                if (y[n] < 1) entropy += (1 - y[n]) * std::log(1 - y[n]);
            }
            Tensor s = tn::sigmoid(tn::reshape(ho.c_logit, {N}));
            Tensor yt = Tensor::from({N}, y);
            std::vector<double> ym(N);
            for (int n = 0; n < N; ++n) ym[n] = 1.0 - y[n];
            Tensor ce = tn::add(
                tn::mul(yt, tn::log(tn::clamp_min(s, 1e-12))),
                tn::mul(Tensor::from({N}, ym),
                        tn::log(tn::clamp_min(
                            tn::sub(Tensor::from({N}, std::vector<double>(N, 1.0)), s),
                            1e-12))));
            c_terms.push_back(tn::scale(
                tn::add(tn::scale(tn::sum(ce), -1.0), Tensor::scalar(entropy)), 1.0 / N));
        }
    }

    const double inv_fh = 1.0 / (2.0 * F);
    LossBreakdown out;
    Tensor lr = tn::scale(sum_terms(r_terms), inv_fh);
    Tensor lt = tn::scale(sum_terms(t_terms), inv_fh);
    Tensor lb = tn::scale(sum_terms(b_terms), inv_fh);
    Tensor lth = tn::scale(sum_terms(th_terms), inv_fh);
    Tensor lj = j_terms.empty()
                    ? Tensor::scalar(0.0)
                    : tn::scale(sum_terms(j_terms),
                                1.0 / static_cast<double>(j_terms.size()));
    Tensor lc = tn::scale(sum_terms(c_terms), inv_fh);
    out.l_r = lr.item();
    out.l_t = lt.item();
    out.l_beta = lb.item();
    out.l_theta = lth.item();
    out.l_j = lj.item();
    out.l_c = lc.item();
    out.total = tn::add(
        tn::add(tn::add(tn::scale(lr, w.lambda_r), tn::scale(lt, w.lambda_t)),
                tn::add(tn::scale(lb, w.lambda_beta), tn::scale(lth, w.lambda_theta))),
        tn::add(tn::scale(lj, w.lambda_j), tn::scale(lc, w.lambda_c)));
    return out;
}

// -- training -----------------------------------------------------------------

void TrainConfig::validate() const {
    features.validate();
    if (stage1_iters < 0 || stage2_iters < 0)
        throw ConfigError("TrainConfig: negative iteration count");
    if (temporal_batch < 1 || stride < 1)
        throw ConfigError("TrainConfig: temporal batch and stride must be >= 1");
    if (stage1_views < 1 || stage2_views < 1)
        throw ConfigError("TrainConfig: view counts must be >= 1");
    if (lr <= 0) throw ConfigError("TrainConfig: learning rate must be positive");
}

TrainResult train_two_stage(Model& model,
                            const std::vector<const synth::SceneRecording*>& scenes,
                            const TrainConfig& cfg) {
    cfg.validate();
    if (scenes.empty()) throw ConfigError("train_two_stage: no training scenes");

    Rng rng(cfg.seed);
    tn::AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    tn::AdamW opt(model.params(), ocfg);

    std::ostringstream csv;
    csv.precision(17);
    csv << "iter,stage,total,l_r,l_t,l_beta,l_theta,l_j,l_c\n";

    TrainResult res;
    std::vector<double> trailing;
    const int total_iters = cfg.stage1_iters + cfg.stage2_iters;
    for (int iter = 0; iter < total_iters; ++iter) {
        const int stage = iter < cfg.stage1_iters ? 1 : 2;
        const synth::SceneRecording& scene =
            *scenes[rng.raw() % scenes.size()];
        const int ncams = static_cast<int>(scene.rig.size());
        int nviews = stage == 1 ? cfg.stage1_views : cfg.stage2_views;
        if (cfg.ablation.no_multiview) nviews = 1;
        nviews = std::min(nviews, ncams);

        std::vector<int> view_ids(ncams);
        for (int i = 0; i < ncams; ++i) view_ids[i] = i;
        for (int i = 0; i < nviews; ++i) {
            int j = i + static_cast<int>(rng.raw() % (ncams - i));
            std::swap(view_ids[i], view_ids[j]);
        }
        view_ids.resize(nviews);

        const int span = cfg.stride * (cfg.temporal_batch - 1);
        const int tmax = static_cast<int>(scene.gt.size()) - span;
        if (tmax <= 0) throw ConfigError("train_two_stage: scene shorter than one batch");
        const int t0 = static_cast<int>(rng.raw() % tmax);

        std::vector<std::vector<ViewInput>> frames;
        std::vector<FrameTarget> targets;
        for (int b = 0; b < cfg.temporal_batch; ++b) {
            const int t = t0 + b * cfg.stride;
            std::vector<ViewInput> vi;
            for (int v : view_ids) vi.push_back({&scene.frames[t][v], &scene.rig[v]});
            frames.push_back(vi);
            targets.push_back(make_target(scene, t, view_ids));
        }

        auto steps = model.rollout(frames, cfg.ablation);
        LossBreakdown lb = loss(steps, frames, targets, cfg.weights);
        const double total = lb.total.item();
        if (iter == 0) res.initial_loss = total;
        trailing.push_back(total);
        if (trailing.size() > 100) trailing.erase(trailing.begin());

        if (iter % cfg.log_interval == 0 || iter == total_iters - 1)
            csv << iter << ',' << stage << ',' << total << ',' << lb.l_r << ','
                << lb.l_t << ',' << lb.l_beta << ',' << lb.l_theta << ',' << lb.l_j
                << ',' << lb.l_c << '\n';

        model.params().zero_grads();
        lb.total.backward();
        opt.step();
    }

    double fsum = 0;
    for (double v : trailing) fsum += v;
    res.final_loss = trailing.empty() ? 0 : fsum / trailing.size();
    res.csv = csv.str();
    return res;
}

// -- config serialization -----------------------------------------------------

std::string train_config_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["features"] = {{"body_dim", cfg.features.body_dim},
                     {"hand_dim", cfg.features.hand_dim},
                     {"hidden", cfg.features.hidden},
                     {"layers", cfg.features.layers},
                     {"heads", cfg.features.heads},
                     {"pose_layers", cfg.features.pose_layers},
                     {"pose_heads", cfg.features.pose_heads},
                     {"pose_hidden", cfg.features.pose_hidden},
                     {"ray_freqs", cfg.features.ray_freqs}};
    j["stage1_iters"] = cfg.stage1_iters;
    j["stage2_iters"] = cfg.stage2_iters;
    j["stage1_views"] = cfg.stage1_views;
    j["stage2_views"] = cfg.stage2_views;
    j["temporal_batch"] = cfg.temporal_batch;
    j["stride"] = cfg.stride;
    j["lr"] = cfg.lr;
    j["weight_decay"] = cfg.weight_decay;
    j["weights"] = {{"lambda_r", cfg.weights.lambda_r},
                    {"lambda_t", cfg.weights.lambda_t},
                    {"lambda_beta", cfg.weights.lambda_beta},
                    {"lambda_theta", cfg.weights.lambda_theta},
                    {"lambda_j", cfg.weights.lambda_j},
                    {"lambda_c", cfg.weights.lambda_c}};
    j["ablation"] = {{"no_multiview", cfg.ablation.no_multiview},
                     {"no_body", cfg.ablation.no_body},
                     {"no_autoregressive", cfg.ablation.no_autoregressive},
                     {"no_ray_embedding", cfg.ablation.no_ray_embedding}};
    j["seed"] = cfg.seed;
    j["log_interval"] = cfg.log_interval;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config parse error: ") + e.what());
    }
    TrainConfig cfg;
    try {
        if (j.contains("features")) {
            const auto& f = j["features"];
            auto get = [&f](const char* k, int def) {
                return f.contains(k) ? f[k].get<int>() : def;
            };
            cfg.features.body_dim = get("body_dim", cfg.features.body_dim);
            cfg.features.hand_dim = get("hand_dim", cfg.features.hand_dim);
            cfg.features.hidden = get("hidden", cfg.features.hidden);
            cfg.features.layers = get("layers", cfg.features.layers);
            cfg.features.heads = get("heads", cfg.features.heads);
            cfg.features.pose_layers = get("pose_layers", cfg.features.pose_layers);
            cfg.features.pose_heads = get("pose_heads", cfg.features.pose_heads);
            cfg.features.pose_hidden = get("pose_hidden", cfg.features.pose_hidden);
            cfg.features.ray_freqs = get("ray_freqs", cfg.features.ray_freqs);
        }
        if (j.contains("stage1_iters")) cfg.stage1_iters = j["stage1_iters"];
        if (j.contains("stage2_iters")) cfg.stage2_iters = j["stage2_iters"];
        if (j.contains("stage1_views")) cfg.stage1_views = j["stage1_views"];
        if (j.contains("stage2_views")) cfg.stage2_views = j["stage2_views"];
        if (j.contains("temporal_batch")) cfg.temporal_batch = j["temporal_batch"];
        if (j.contains("stride")) cfg.stride = j["stride"];
        if (j.contains("lr")) cfg.lr = j["lr"];
        if (j.contains("weight_decay")) cfg.weight_decay = j["weight_decay"];
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            if (w.contains("lambda_r")) cfg.weights.lambda_r = w["lambda_r"];
            if (w.contains("lambda_t")) cfg.weights.lambda_t = w["lambda_t"];
            if (w.contains("lambda_beta")) cfg.weights.lambda_beta = w["lambda_beta"];
            if (w.contains("lambda_theta")) cfg.weights.lambda_theta = w["lambda_theta"];
            if (w.contains("lambda_j")) cfg.weights.lambda_j = w["lambda_j"];
            if (w.contains("lambda_c")) cfg.weights.lambda_c = w["lambda_c"];
        }
        if (j.contains("ablation")) {
            const auto& a = j["ablation"];
            if (a.contains("no_multiview")) cfg.ablation.no_multiview = a["no_multiview"];
            if (a.contains("no_body")) cfg.ablation.no_body = a["no_body"];
            if (a.contains("no_autoregressive"))
                cfg.ablation.no_autoregressive = a["no_autoregressive"];
            if (a.contains("no_ray_embedding"))
                cfg.ablation.no_ray_embedding = a["no_ray_embedding"];
        }
        if (j.contains("seed")) cfg.seed = j["seed"];
        if (j.contains("log_interval")) cfg.log_interval = j["log_interval"];
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config field error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace farpose::reachnet
