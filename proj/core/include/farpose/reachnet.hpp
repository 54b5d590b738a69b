#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "farpose/geom.hpp"
#include "farpose/hand.hpp"
#include "farpose/synth.hpp"
#include "farpose/tensornet.hpp"

namespace farpose::reachnet {

using geom::Camera;
using geom::Mat3;
using geom::Rot6d;
using geom::Vec3;
using tensornet::Tensor;

struct FeatureConfig {
    int body_dim = 256;
    int hand_dim = 1024;
    int hidden = 1024;
    int layers = 6;
    int heads = 4;
    int pose_layers = 6;
    int pose_heads = 8;
    int pose_hidden = 256;
    int ray_freqs = 4;  // sinusoidal frequencies 2^0..2^(k-1) per ray component

    int token_dim() const { return body_dim + 2 * hand_dim; }
    void validate() const;

    /// All dims divided by 8, 2 transformer layers; structure preserved.
    static FeatureConfig desk_scale();
};

struct AblationFlags {
    bool no_multiview = false;
    bool no_body = false;
    bool no_autoregressive = false;
    bool no_ray_embedding = false;  // drops query ray embeddings after frame 0
};

struct LossWeights {
    double lambda_r = 1.0;
    double lambda_t = 1.0;
    double lambda_beta = 1.0;
    double lambda_theta = 1.0;
    double lambda_j = 1.0;
    double lambda_c = 0.1;
};

/// Confidence-weighted rotation fusion in 6D representation space:
/// fused = G^-1( sum_n c_n G(camera_R_n^T O_n) / sum_n c_n ).
/// camera_R_n is the world->camera rotation of view n.
Mat3 mvu_fuse(const std::vector<Mat3>& O, const std::vector<double>& c,
              const std::vector<Mat3>& camera_R);

struct ViewInput {
    const synth::ObservationFrame* obs = nullptr;
    const Camera* cam = nullptr;
};

/// Square crop around the hand, side = 0.5 x person height in pixels.
std::array<double, 4> hand_crop(const synth::ObservationFrame& obs, int hand);

struct HandOutput {
    Tensor r6;       // (N, 6) per-view rotation, camera frame
    Tensor T;        // (N, 3) per-view wrist, camera frame, meters
    Tensor c_logit;  // (N, 1)
    Tensor beta;     // (10)
    Tensor theta;    // (45)
    Tensor queries;  // (N+1, hidden) pre-head decoder outputs, carried forward
};

struct StepOutput {
    std::array<HandOutput, 2> hands;  // 0 = left, 1 = right
};

struct HandPrediction {
    std::vector<Mat3> R;       // per view, camera frame
    std::vector<Vec3> T;       // per view, camera frame
    std::vector<double> c;     // per view, (0, 1)
    std::array<double, hand::kShapeDim> beta{};
    std::array<double, 3 * hand::kNumArticulated> theta{};
    Mat3 fused_world = Mat3::Identity();
    Vec3 wrist_world = Vec3::Zero();
};

class Model {
  public:
    Model(const FeatureConfig& cfg, uint64_t seed);

    /// One frame. `prev` carries the previous frame's decoder outputs; null
    /// means the learned initial queries are used.
    StepOutput forward_step(const std::vector<ViewInput>& views, const StepOutput* prev,
                            const AblationFlags& abl = {});

    std::vector<StepOutput> rollout(const std::vector<std::vector<ViewInput>>& frames,
                                    const AblationFlags& abl = {});

    /// Numeric per-hand prediction: rotations, confidences, MVU fusion, and
    /// the world wrist (confidence-weighted over views with c > 0.5).
    std::array<HandPrediction, 2> predict(const StepOutput& step,
                                          const std::vector<ViewInput>& views) const;

    /// Gauge-canceled sinusoidal embedding of a world-frame unit ray,
    /// projected to hidden.
    Tensor ray_embedding(const Vec3& ray_world, const Mat3& first_camera_R);

    Tensor hand_features(const synth::ObservationFrame& obs, int hand) const;
    Tensor body_features(const synth::ObservationFrame& obs, const AblationFlags& abl);

    tensornet::ParamStore& params() { return params_; }
    const tensornet::ParamStore& params() const { return params_; }
    const FeatureConfig& config() const { return cfg_; }

  private:
    FeatureConfig cfg_;
    tensornet::ParamStore params_;
    Eigen::MatrixXd hand_stub_map_;  // fixed seeded map, (hand_dim, 44)
    Eigen::MatrixXd body_stub_map_;  // fixed seeded map, (pose_hidden, 3)

    tensornet::LinearParams lin(const std::string& name) const;
    tensornet::EncoderLayerParams enc_layer(const std::string& prefix, int heads) const;
    tensornet::DecoderLayerParams dec_layer(const std::string& prefix, int heads) const;
};

/// Supervision for one frame.
struct FrameTarget {
    std::array<Mat3, 2> orientation_world;
    std::array<Vec3, 2> wrist_world;
    std::array<std::array<double, hand::kShapeDim>, 2> beta;
    std::array<std::array<double, 3 * hand::kNumArticulated>, 2> theta;
    std::array<hand::Handedness, 2> handedness;
    std::vector<std::array<double, 2>> conf_target;  // [view][hand] wrist-kp conf
    std::vector<std::array<bool, 2>> hand_visible;   // [view][hand] GT visibility
};

FrameTarget make_target(const synth::SceneRecording& scene, int t,
                        const std::vector<int>& views);

struct LossBreakdown {
    Tensor total;
    double l_r = 0, l_t = 0, l_beta = 0, l_theta = 0, l_j = 0, l_c = 0;
};

LossBreakdown loss(const std::vector<StepOutput>& steps,
                   const std::vector<std::vector<ViewInput>>& frames,
                   const std::vector<FrameTarget>& targets, const LossWeights& w);

struct TrainConfig {
    FeatureConfig features = FeatureConfig::desk_scale();
    int stage1_iters = 2000;
    int stage2_iters = 2000;
    int stage1_views = 4;
    int stage2_views = 2;
    int temporal_batch = 4;
    int stride = 4;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    LossWeights weights;
    AblationFlags ablation;
    uint64_t seed = 1;
    int log_interval = 10;

    void validate() const;
};

struct TrainResult {
    double initial_loss = 0;
    double final_loss = 0;  // trailing mean over the last 100 iterations
    std::string csv;        // iter, stage, total, per-component losses
};

TrainResult train_two_stage(Model& model,
                            const std::vector<const synth::SceneRecording*>& scenes,
                            const TrainConfig& cfg);

std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace farpose::reachnet
