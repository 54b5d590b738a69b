#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "farpose/common.hpp"

namespace farpose::tensornet {

using Buffer = Eigen::VectorXd;

/// Row-major dense tensor, rank 1..4. Ops that need a matrix view flatten all
/// leading dims into rows and treat the last dim as columns.
struct Node {
    std::vector<int64_t> shape;
    Buffer val;
    Buffer grad;  // allocated on demand
    bool track = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    int64_t numel() const { return val.size(); }
    int64_t cols() const { return shape.back(); }
    int64_t rows() const { return val.size() / shape.back(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad = Buffer::Zero(val.size());
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int64_t> shape, bool track = false);
    static Tensor from(std::vector<int64_t> shape, const std::vector<double>& data,
                       bool track = false);
    static Tensor from(std::vector<int64_t> shape, const Buffer& data,
                       bool track = false);
    static Tensor scalar(double v, bool track = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    // Handle semantics: a const Tensor still refers to mutable storage.
    Buffer& val() const { return node_->val; }
    Buffer& grad() const { return node_->grad; }
    bool tracked() const { return node_->track; }
    double item() const;
    void zero_grad() { node_->ensure_grad(); node_->grad.setZero(); }

    /// Reverse-mode sweep from this (scalar) tensor; seeds d(this)/d(this)=1.
    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

// -- core ops -----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);       // same shape, or b broadcast per row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // elementwise, same shape
Tensor mul_bcast(const Tensor& a, const Tensor& s); // s is a 1-element tensor
Tensor div(const Tensor& a, const Tensor& b);       // elementwise, same shape
Tensor scale(const Tensor& a, double k);
Tensor matmul(const Tensor& a, const Tensor& b);    // 2D views
Tensor transpose(const Tensor& a);                  // 2D views
Tensor softmax(const Tensor& a);                    // over last dim
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);  // gradient zero where clamped
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts);    // along last dim
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& a, int64_t col0, int64_t col1);  // [col0, col1)
Tensor slice_rows(const Tensor& a, int64_t row0, int64_t row1);
Tensor reshape(const Tensor& a, std::vector<int64_t> shape);
Tensor mean(const Tensor& a);                       // scalar
Tensor sum(const Tensor& a);                        // scalar
Tensor l1(const Tensor& a, const Tensor& b);        // sum |a - b|
Tensor l2(const Tensor& a, const Tensor& b);        // sum (a - b)^2

/// Treats a as constant: value passes through, gradient stops.
Tensor detach(const Tensor& a);

// -- attention / transformer --------------------------------------------------

struct LinearParams {
    Tensor W;  // (in, out)
    Tensor b;  // (out)
};

Tensor linear(const Tensor& x, const LinearParams& p);

struct AttentionParams {
    LinearParams q, k, v, o;
    int heads = 1;
};

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in,
                            const Tensor& v_in, const AttentionParams& p);

struct MlpParams {
    LinearParams fc1, fc2;
};

struct LayerNormParams {
    Tensor gain, bias;
};

struct EncoderLayerParams {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    MlpParams mlp;
};

struct DecoderLayerParams {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn, cross_attn;
    MlpParams mlp;
};

/// Pre-norm residual encoder block.
Tensor transformer_encoder_layer(const Tensor& x, const EncoderLayerParams& p);

/// Pre-norm residual decoder block attending to encoder memory.
Tensor transformer_decoder_layer(const Tensor& x, const Tensor& memory,
                                 const DecoderLayerParams& p);

// -- parameters, optimizer, checkpoints --------------------------------------

class ParamStore {
  public:
    Tensor create(const std::string& name, std::vector<int64_t> shape,
                  std::mt19937_64& rng);
    Tensor create_zero(const std::string& name, std::vector<int64_t> shape);
    const std::vector<std::pair<std::string, Tensor>>& all() const { return params_; }
    Tensor get(const std::string& name) const;
    void zero_grads();

    void save(const std::string& path) const;
    void load(const std::string& path);

  private:
    std::vector<std::pair<std::string, Tensor>> params_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class AdamW {
  public:
    AdamW(ParamStore& store, AdamWConfig cfg);
    void step();
    int64_t t() const { return t_; }

  private:
    ParamStore& store_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
    std::vector<Buffer> m_, v_;
};

/// Single AdamW update on raw buffers (shared by the optimizer and tests).
void adamw_step(Buffer& param, const Buffer& grad, Buffer& m, Buffer& v,
                const AdamWConfig& cfg, int64_t t);

}  // namespace farpose::tensornet
