#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "farpose/tensornet.hpp"

using namespace farpose;
using namespace farpose::tensornet;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, std::mt19937_64& rng,
                     double lo = -1.0, double hi = 1.0) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(static_cast<size_t>(n));
    for (double& v : data) v = dist(rng);
    return Tensor::from(std::move(shape), data, true);
}

// Central finite differences against backward() on a scalar-valued graph.
double max_rel_grad_err(const std::function<Tensor()>& fn,
                        const std::vector<Tensor>& inputs, double h = 1e-5) {
    Tensor out = fn();
    for (Tensor in : inputs) in.zero_grad();
    out.backward();
    double worst = 0;
    for (const Tensor& in : inputs) {
        for (int64_t i = 0; i < in.numel(); ++i) {
            double keep = in.val()(i);
            in.val()(i) = keep + h;
            double up = fn().item();
            in.val()(i) = keep - h;
            double down = fn().item();
            in.val()(i) = keep;
            double fd = (up - down) / (2 * h);
            double an = in.grad()(i);
            double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("matmul identity and shape errors") {
    std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
    Tensor I = Tensor::from({3, 3}, eye);
    std::mt19937_64 rng(1);
    Tensor A = random_tensor({3, 4}, rng);
    Tensor out = matmul(I, A);
    for (int64_t i = 0; i < 12; ++i) CHECK(out.val()(i) == A.val()(i));

    Tensor bad = random_tensor({5, 2}, rng);
    CHECK_THROWS_AS(matmul(A, bad), ShapeMismatch);
}

TEST_CASE("softmax rows sum to one, uniform stays uniform") {
    Tensor u = Tensor::from({2, 4}, std::vector<double>(8, 0.7));
    Tensor s = softmax(u);
    for (int64_t i = 0; i < 8; ++i) CHECK(s.val()(i) == doctest::Approx(0.25).epsilon(1e-12));

    std::mt19937_64 rng(2);
    Tensor x = random_tensor({3, 5}, rng, -3, 3);
    Tensor sx = softmax(x);
    for (int r = 0; r < 3; ++r) {
        double sum = 0;
        for (int c = 0; c < 5; ++c) sum += sx.val()(r * 5 + c);
        CHECK(sum == doctest::Approx(1).epsilon(1e-12));
    }
}

TEST_CASE("elementwise op gradients vs finite differences") {
    std::mt19937_64 rng(3);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({4, 6}, rng);
    Tensor pos = random_tensor({4, 6}, rng, 0.5, 2.0);

    CHECK(max_rel_grad_err([&] { return sum(add(a, b)); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(sub(a, b)); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(mul(a, b)); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(div(a, pos)); }, {a, pos}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(scale(a, -2.5)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(gelu(a)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(sigmoid(a)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(log(pos)); }, {pos}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(exp(a)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(sin(a)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(cos(a)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(tensornet::sqrt(pos)); }, {pos}) < 1e-4);
}

TEST_CASE("structural op gradients vs finite differences") {
    std::mt19937_64 rng(4);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({4, 6}, rng);
    Tensor row = random_tensor({6}, rng);
    Tensor s1 = random_tensor({1, 1}, rng, 0.5, 1.5);
    Tensor m1 = random_tensor({4, 3}, rng);
    Tensor m2 = random_tensor({3, 5}, rng);
    Tensor gain = random_tensor({1, 6}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({1, 6}, rng);

    CHECK(max_rel_grad_err([&] { return sum(add(a, row)); }, {a, row}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(mul_bcast(a, s1)); }, {a, s1}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(matmul(m1, m2)); }, {m1, m2}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(transpose(m1)); }, {m1}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(softmax(a)); }, {a}) < 1e-3);
    CHECK(max_rel_grad_err([&] { return l2(softmax(a), b); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(layer_norm(a, gain, bias)); },
                           {a, gain, bias}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return l2(layer_norm(a, gain, bias), b); },
                           {a, gain, bias}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(concat({a, b})); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(concat_rows({a, b})); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(slice(a, 1, 4)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(slice_rows(a, 1, 3)); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(reshape(a, {2, 12})); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return mean(a); }, {a}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return l1(a, b); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return l2(a, b); }, {a, b}) < 1e-4);
    CHECK(max_rel_grad_err([&] { return sum(clamp_min(a, 0.1)); }, {a}) < 1e-3);
}

TEST_CASE("detach stops gradients") {
    std::mt19937_64 rng(5);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor out = sum(mul(detach(a), a));
    a.zero_grad();
    out.backward();
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a.grad()(i) == doctest::Approx(a.val()(i)).epsilon(1e-12));
}

TEST_CASE("attention: single token is the value path") {
    std::mt19937_64 rng(6);
    const int d = 8;
    AttentionParams p;
    p.heads = 2;
    for (LinearParams* lp : {&p.q, &p.k, &p.v, &p.o}) {
        lp->W = random_tensor({d, d}, rng);
        lp->b = random_tensor({d}, rng);
    }
    Tensor x = random_tensor({1, d}, rng);
    Tensor out = multi_head_attention(x, x, x, p);
    Tensor oracle = linear(linear(x, p.v), p.o);
    for (int64_t i = 0; i < d; ++i)
        CHECK(out.val()(i) == doctest::Approx(oracle.val()(i)).epsilon(1e-9));
}

TEST_CASE("attention and transformer layer gradients") {
    std::mt19937_64 rng(7);
    const int d = 6;
    AttentionParams p;
    p.heads = 2;
    std::vector<Tensor> params;
    for (LinearParams* lp : {&p.q, &p.k, &p.v, &p.o}) {
        lp->W = random_tensor({d, d}, rng, -0.5, 0.5);
        lp->b = random_tensor({d}, rng, -0.1, 0.1);
        params.push_back(lp->W);
        params.push_back(lp->b);
    }
    Tensor x = random_tensor({3, d}, rng);
    params.push_back(x);
    CHECK(max_rel_grad_err([&] { return sum(multi_head_attention(x, x, x, p)); },
                           params) < 1e-4);
}

TEST_CASE("encoder memory permutation leaves decoder output unchanged") {
    std::mt19937_64 rng(8);
    const int d = 8;
    DecoderLayerParams p;
    auto fill_attn = [&](AttentionParams& ap) {
        ap.heads = 2;
        for (LinearParams* lp : {&ap.q, &ap.k, &ap.v, &ap.o}) {
            lp->W = random_tensor({d, d}, rng, -0.5, 0.5);
            lp->b = random_tensor({d}, rng, -0.1, 0.1);
        }
    };
    fill_attn(p.self_attn);
    fill_attn(p.cross_attn);
    p.mlp.fc1.W = random_tensor({d, 2 * d}, rng, -0.5, 0.5);
    p.mlp.fc1.b = random_tensor({2 * d}, rng);
    p.mlp.fc2.W = random_tensor({2 * d, d}, rng, -0.5, 0.5);
    p.mlp.fc2.b = random_tensor({d}, rng);
    for (LayerNormParams* ln : {&p.ln1, &p.ln2, &p.ln3}) {
        ln->gain = Tensor::from({d}, std::vector<double>(d, 1.0));
        ln->bias = Tensor::from({d}, std::vector<double>(d, 0.0));
    }

    Tensor queries = random_tensor({2, d}, rng);
    Tensor memory = random_tensor({4, d}, rng);
    Tensor out = transformer_decoder_layer(queries, memory, p);

    // Swap memory rows 1 and 3.
    Buffer perm = memory.val();
    for (int c = 0; c < d; ++c) std::swap(perm(1 * d + c), perm(3 * d + c));
    Tensor memory2 = Tensor::from({4, d}, perm);
    Tensor out2 = transformer_decoder_layer(queries, memory2, p);
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK(out.val()(i) == doctest::Approx(out2.val()(i)).epsilon(1e-9));
}

TEST_CASE("encoder and decoder layer gradients") {
    std::mt19937_64 rng(9);
    const int d = 6;
    EncoderLayerParams p;
    p.attn.heads = 2;
    std::vector<Tensor> params;
    for (LinearParams* lp : {&p.attn.q, &p.attn.k, &p.attn.v, &p.attn.o}) {
        lp->W = random_tensor({d, d}, rng, -0.5, 0.5);
        lp->b = random_tensor({d}, rng, -0.1, 0.1);
        params.push_back(lp->W);
    }
    p.mlp.fc1.W = random_tensor({d, 2 * d}, rng, -0.5, 0.5);
    p.mlp.fc1.b = random_tensor({2 * d}, rng);
    p.mlp.fc2.W = random_tensor({2 * d, d}, rng, -0.5, 0.5);
    p.mlp.fc2.b = random_tensor({d}, rng);
    for (LayerNormParams* ln : {&p.ln1, &p.ln2}) {
        ln->gain = random_tensor({d}, rng, 0.8, 1.2);
        ln->bias = random_tensor({d}, rng, -0.1, 0.1);
        params.push_back(ln->gain);
        params.push_back(ln->bias);
    }
    params.push_back(p.mlp.fc1.W);
    params.push_back(p.mlp.fc2.W);
    Tensor x = random_tensor({3, d}, rng);
    params.push_back(x);
    CHECK(max_rel_grad_err([&] { return sum(transformer_encoder_layer(x, p)); },
                           params) < 1e-4);
}

TEST_CASE("adamw closed-form single step") {
    AdamWConfig cfg;
    cfg.lr = 1e-2;
    cfg.weight_decay = 0;

    Buffer p = Buffer::Zero(3), m = Buffer::Zero(3), v = Buffer::Zero(3);
    Buffer g(3);
    g << 0.5, -1.25, 2.0;
    adamw_step(p, g, m, v, cfg, 1);
    for (int i = 0; i < 3; ++i) {
        // Bias-corrected first step: update = -lr * g / (|g| + eps).
        double expect = -cfg.lr * g(i) / (std::abs(g(i)) + cfg.eps);
        CHECK(p(i) == doctest::Approx(expect).epsilon(1e-6));
    }

    // Zero grad, zero decay: no movement.
    Buffer p2 = Buffer::Ones(3), m2 = Buffer::Zero(3), v2 = Buffer::Zero(3);
    adamw_step(p2, Buffer::Zero(3), m2, v2, cfg, 1);
    for (int i = 0; i < 3; ++i) CHECK(p2(i) == doctest::Approx(1).epsilon(1e-9));

    // Decay only.
    AdamWConfig wd = cfg;
    wd.weight_decay = 0.1;
    Buffer p3 = Buffer::Ones(3), m3 = Buffer::Zero(3), v3 = Buffer::Zero(3);
    adamw_step(p3, Buffer::Zero(3), m3, v3, wd, 1);
    for (int i = 0; i < 3; ++i)
        CHECK(p3(i) == doctest::Approx(1 - wd.lr * wd.weight_decay).epsilon(1e-9));
}

TEST_CASE("checkpoint round trip") {
    namespace fs = std::filesystem;
    ParamStore store;
    std::mt19937_64 rng(10);
    Tensor a = store.create("block.w", {4, 3}, rng);
    Tensor b = store.create("block.b", {1, 3}, rng);

    fs::path path = fs::temp_directory_path() / "farpose_ckpt_test.fpkt";
    store.save(path.string());

    ParamStore other;
    std::mt19937_64 rng2(999);
    Tensor a2 = other.create("block.w", {4, 3}, rng2);
    Tensor b2 = other.create("block.b", {1, 3}, rng2);
    other.load(path.string());
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a2.val()(i) == a.val()(i));
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(b2.val()(i) == b.val()(i));
    fs::remove(path);
}

TEST_CASE("random composed graphs match finite differences") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({4, 4}, rng, -0.5, 0.5);
        Tensor g = random_tensor({1, 4}, rng, 0.8, 1.2);
        Tensor bz = random_tensor({1, 4}, rng, -0.1, 0.1);
        auto fn = [&] {
            Tensor h = gelu(matmul(x, w));
            h = layer_norm(h, g, bz);
            h = softmax(h);
            return l2(h, sigmoid(x));
        };
        CHECK(max_rel_grad_err(fn, {x, w, g, bz}) < 1e-4);
    }
}
