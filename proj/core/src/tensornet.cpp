#include "farpose/tensornet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace farpose::tensornet {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::shared_ptr<Node> make_node(std::vector<int64_t> shape) {
    if (shape.empty() || shape.size() > 4)
        throw ShapeMismatch("tensor rank must be 1..4");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val = Buffer::Zero(shape_numel(n->shape));
    return n;
}

Tensor make_op(std::vector<int64_t> shape, std::vector<Tensor> inputs) {
    auto n = make_node(std::move(shape));
    for (const Tensor& t : inputs) {
        n->parents.push_back(t.node());
        if (t.tracked()) n->track = true;
    }
    return Tensor(n);
}

ConstMatMap mat(const Tensor& t) {
    return ConstMatMap(t.val().data(), t.node()->rows(), t.node()->cols());
}

MatMap grad_mat(const Tensor& t) {
    t.node()->ensure_grad();
    return MatMap(t.grad().data(), t.node()->rows(), t.node()->cols());
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) throw ShapeMismatch(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape, bool track) {
    auto n = make_node(std::move(shape));
    n->track = track;
    return Tensor(n);
}

Tensor Tensor::from(std::vector<int64_t> shape, const std::vector<double>& data,
                    bool track) {
    auto n = make_node(std::move(shape));
    if (static_cast<int64_t>(data.size()) != n->numel())
        throw ShapeMismatch("Tensor::from: data length mismatch");
    std::copy(data.begin(), data.end(), n->val.data());
    n->track = track;
    return Tensor(n);
}

Tensor Tensor::from(std::vector<int64_t> shape, const Buffer& data, bool track) {
    auto n = make_node(std::move(shape));
    if (data.size() != n->numel()) throw ShapeMismatch("Tensor::from: data length mismatch");
    n->val = data;
    n->track = track;
    return Tensor(n);
}

Tensor Tensor::scalar(double v, bool track) {
    auto n = make_node({1});
    n->val(0) = v;
    n->track = track;
    return Tensor(n);
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeMismatch("item: tensor is not scalar");
    return node_->val(0);
}

void Tensor::backward() const {
    if (numel() != 1) throw ShapeMismatch("backward: root must be scalar");
    // Post-order DFS, then reverse: each node's backward runs after all its
    // consumers have accumulated into its grad.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->track && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad(0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

// -- elementwise and structural ops ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    const bool bias_bcast =
        b.shape().size() == 1 && b.numel() == a.node()->cols() && a.shape() != b.shape();
    if (!bias_bcast) check_same_shape(a, b, "add");
    Tensor out = make_op(a.shape(), {a, b});
    if (bias_bcast) {
        MatMap(out.val().data(), out.node()->rows(), out.node()->cols()) =
            mat(a).rowwise() + b.val().transpose();
    } else {
        out.val() = a.val() + b.val();
    }
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, b, on, bias_bcast]() {
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad; }
            if (b.tracked()) {
                b.node()->ensure_grad();
                if (bias_bcast)
                    b.grad() += ConstMatMap(on->grad.data(), on->rows(), on->cols())
                                    .colwise().sum().transpose();
                else
                    b.grad() += on->grad;
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_op(a.shape(), {a, b});
    out.val() = a.val().cwiseProduct(b.val());
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, b, on]() {
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad.cwiseProduct(b.val()); }
            if (b.tracked()) { b.node()->ensure_grad(); b.grad() += on->grad.cwiseProduct(a.val()); }
        };
    }
    return out;
}

Tensor mul_bcast(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw ShapeMismatch("mul_bcast: scale must be scalar");
    Tensor out = make_op(a.shape(), {a, s});
    out.val() = a.val() * s.val()(0);
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, s, on]() {
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad * s.val()(0); }
            if (s.tracked()) { s.node()->ensure_grad(); s.grad()(0) += on->grad.dot(a.val()); }
        };
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "div");
    Tensor out = make_op(a.shape(), {a, b});
    out.val() = a.val().cwiseQuotient(b.val());
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, b, on]() {
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad.cwiseQuotient(b.val()); }
            if (b.tracked()) {
                b.node()->ensure_grad();
                b.grad() -= on->grad.cwiseProduct(a.val()).cwiseQuotient(b.val().cwiseAbs2());
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, double k) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val() * k;
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on, k]() {
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad * k; }
        };
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.node()->cols() != b.node()->rows())
        throw ShapeMismatch("matmul: inner dimensions differ");
    Tensor out = make_op({a.node()->rows(), b.node()->cols()}, {a, b});
    MatMap(out.val().data(), a.node()->rows(), b.node()->cols()) = mat(a) * mat(b);
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, b, on]() {
            ConstMatMap g(on->grad.data(), on->rows(), on->cols());
            if (a.tracked()) grad_mat(a) += g * mat(b).transpose();
            if (b.tracked()) grad_mat(b) += mat(a).transpose() * g;
        };
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out = make_op({a.node()->cols(), a.node()->rows()}, {a});
    MatMap(out.val().data(), a.node()->cols(), a.node()->rows()) = mat(a).transpose();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (a.tracked())
                grad_mat(a) += ConstMatMap(on->grad.data(), on->rows(), on->cols()).transpose();
        };
    }
    return out;
}

Tensor softmax(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    const int64_t rows = a.node()->rows(), cols = a.node()->cols();
    MatMap o(out.val().data(), rows, cols);
    ConstMatMap x(a.val().data(), rows, cols);
    for (int64_t r = 0; r < rows; ++r) {
        Eigen::RowVectorXd e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
        o.row(r) = e / e.sum();
    }
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            ConstMatMap g(on->grad.data(), on->rows(), on->cols());
            ConstMatMap s(on->val.data(), on->rows(), on->cols());
            MatMap ga = grad_mat(a);
            for (int64_t r = 0; r < on->rows(); ++r) {
                double dot = g.row(r).dot(s.row(r));
                ga.row(r) += s.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
    const int64_t rows = a.node()->rows(), cols = a.node()->cols();
    if (gain.numel() != cols || bias.numel() != cols)
        throw ShapeMismatch("layer_norm: gain/bias must match last dim");
    constexpr double eps = 1e-5;
    Tensor out = make_op(a.shape(), {a, gain, bias});
    // Save the normalized values and inverse stddev for the backward pass.
    auto xhat = std::make_shared<RowMat>(rows, cols);
    auto inv_std = std::make_shared<Eigen::VectorXd>(rows);
    {
        ConstMatMap x(a.val().data(), rows, cols);
        MatMap o(out.val().data(), rows, cols);
        for (int64_t r = 0; r < rows; ++r) {
            double mu = x.row(r).mean();
            double var = (x.row(r).array() - mu).square().mean();
            double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)(r) = is;
            xhat->row(r) = (x.row(r).array() - mu) * is;
            o.row(r) = xhat->row(r).cwiseProduct(gain.val().transpose()) +
                       bias.val().transpose();
        }
    }
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, gain, bias, on, xhat, inv_std]() {
            ConstMatMap g(on->grad.data(), on->rows(), on->cols());
            const int64_t cols = on->cols();
            if (gain.tracked()) {
                gain.node()->ensure_grad();
                gain.grad() += g.cwiseProduct(*xhat).colwise().sum().transpose();
            }
            if (bias.tracked()) {
                bias.node()->ensure_grad();
                bias.grad() += g.colwise().sum().transpose();
            }
            if (a.tracked()) {
                MatMap ga = grad_mat(a);
                for (int64_t r = 0; r < on->rows(); ++r) {
                    Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gain.val().transpose());
                    double m1 = dxhat.mean();
                    double m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
                    ga.row(r) += (*inv_std)(r) *
                                 (dxhat.array() - m1 - xhat->row(r).array() * m2).matrix();
                }
            }
        };
    }
    return out;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().unaryExpr(
        [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() += on->grad.cwiseProduct(a.val().unaryExpr([](double x) {
                return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                       x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
            }));
        };
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() += on->grad.cwiseProduct(
                on->val.cwiseProduct(Buffer::Ones(on->val.size()) - on->val));
        };
    }
    return out;
}

Tensor log(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().array().log();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() += on->grad.cwiseQuotient(a.val());
        };
    }
    return out;
}

Tensor exp(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().array().exp();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() += on->grad.cwiseProduct(on->val);
        };
    }
    return out;
}

Tensor clamp_min(const Tensor& a, double lo) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().cwiseMax(lo);
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on, lo]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            for (int64_t i = 0; i < a.numel(); ++i)
                if (a.val()(i) > lo) a.grad()(i) += on->grad(i);
        };
    }
    return out;
}

Tensor sin(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().array().sin();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() += on->grad.cwiseProduct(a.val().array().cos().matrix());
        };
    }
    return out;
}

Tensor cos(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().array().cos();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() -= on->grad.cwiseProduct(a.val().array().sin().matrix());
        };
    }
    return out;
}

Tensor sqrt(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a});
    out.val() = a.val().array().sqrt();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (!a.tracked()) return;
            a.node()->ensure_grad();
            a.grad() += on->grad.cwiseQuotient(2.0 * on->val);
        };
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat: no inputs");
    const int64_t rows = parts[0].node()->rows();
    int64_t cols = 0;
    for (const Tensor& p : parts) {
        if (p.node()->rows() != rows) throw ShapeMismatch("concat: row count mismatch");
        cols += p.node()->cols();
    }
    std::vector<int64_t> shape = parts[0].shape();
    shape.back() = cols;
    if (rows == 1 && shape.size() == 1) shape = {cols};
    Tensor out = make_op(shape, parts);
    MatMap o(out.val().data(), rows, cols);
    int64_t c0 = 0;
    for (const Tensor& p : parts) {
        o.middleCols(c0, p.node()->cols()) = mat(p);
        c0 += p.node()->cols();
    }
    if (out.tracked()) {
        auto on = out.node();
        auto ps = parts;
        out.node()->backward_fn = [ps, on, rows, cols]() {
            ConstMatMap g(on->grad.data(), rows, cols);
            int64_t c0 = 0;
            for (const Tensor& p : ps) {
                if (p.tracked()) grad_mat(p) += g.middleCols(c0, p.node()->cols());
                c0 += p.node()->cols();
            }
        };
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
    const int64_t cols = parts[0].node()->cols();
    int64_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.node()->cols() != cols) throw ShapeMismatch("concat_rows: column mismatch");
        rows += p.node()->rows();
    }
    Tensor out = make_op({rows, cols}, parts);
    int64_t r0 = 0;
    MatMap o(out.val().data(), rows, cols);
    for (const Tensor& p : parts) {
        o.middleRows(r0, p.node()->rows()) = mat(p);
        r0 += p.node()->rows();
    }
    if (out.tracked()) {
        auto on = out.node();
        auto ps = parts;
        out.node()->backward_fn = [ps, on, rows, cols]() {
            ConstMatMap g(on->grad.data(), rows, cols);
            int64_t r0 = 0;
            for (const Tensor& p : ps) {
                if (p.tracked()) grad_mat(p) += g.middleRows(r0, p.node()->rows());
                r0 += p.node()->rows();
            }
        };
    }
    return out;
}

Tensor slice(const Tensor& a, int64_t col0, int64_t col1) {
    const int64_t cols = a.node()->cols();
    if (col0 < 0 || col1 > cols || col0 >= col1) throw ShapeMismatch("slice: bad range");
    std::vector<int64_t> shape = a.shape();
    shape.back() = col1 - col0;
    Tensor out = make_op(shape, {a});
    MatMap(out.val().data(), a.node()->rows(), col1 - col0) =
        mat(a).middleCols(col0, col1 - col0);
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on, col0, col1]() {
            if (a.tracked())
                grad_mat(a).middleCols(col0, col1 - col0) +=
                    ConstMatMap(on->grad.data(), on->rows(), on->cols());
        };
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int64_t row0, int64_t row1) {
    const int64_t rows = a.node()->rows();
    if (row0 < 0 || row1 > rows || row0 >= row1) throw ShapeMismatch("slice_rows: bad range");
    Tensor out = make_op({row1 - row0, a.node()->cols()}, {a});
    MatMap(out.val().data(), row1 - row0, a.node()->cols()) =
        mat(a).middleRows(row0, row1 - row0);
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on, row0, row1]() {
            if (a.tracked())
                grad_mat(a).middleRows(row0, row1 - row0) +=
                    ConstMatMap(on->grad.data(), on->rows(), on->cols());
        };
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int64_t> shape) {
    if (shape_numel(shape) != a.numel()) throw ShapeMismatch("reshape: element count differs");
    Tensor out = make_op(std::move(shape), {a});
    out.val() = a.val();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad; }
        };
    }
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_op({1}, {a});
    out.val()(0) = a.val().sum();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, on]() {
            if (a.tracked()) {
                a.node()->ensure_grad();
                a.grad().array() += on->grad(0);
            }
        };
    }
    return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor l1(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l1");
    Tensor out = make_op({1}, {a, b});
    Buffer d = a.val() - b.val();
    out.val()(0) = d.cwiseAbs().sum();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, b, on]() {
            Buffer sgn = (a.val() - b.val()).unaryExpr([](double x) {
                return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
            });
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad(0) * sgn; }
            if (b.tracked()) { b.node()->ensure_grad(); b.grad() -= on->grad(0) * sgn; }
        };
    }
    return out;
}

Tensor l2(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l2");
    Tensor out = make_op({1}, {a, b});
    Buffer d = a.val() - b.val();
    out.val()(0) = d.squaredNorm();
    if (out.tracked()) {
        auto on = out.node();
        out.node()->backward_fn = [a, b, on]() {
            Buffer d2 = 2.0 * (a.val() - b.val());
            if (a.tracked()) { a.node()->ensure_grad(); a.grad() += on->grad(0) * d2; }
            if (b.tracked()) { b.node()->ensure_grad(); b.grad() -= on->grad(0) * d2; }
        };
    }
    return out;
}

Tensor detach(const Tensor& a) {
    auto n = make_node(a.shape());
    n->val = a.val();
    n->track = false;
    return Tensor(n);
}

// -- transformer building blocks ---------------------------------------------

Tensor linear(const Tensor& x, const LinearParams& p) {
    return add(matmul(x, p.W), p.b);
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in,
                            const Tensor& v_in, const AttentionParams& p) {
    const int64_t hidden = p.q.W.shape()[1];
    if (hidden % p.heads != 0)
        throw ShapeMismatch("attention: hidden dim not divisible by heads");
    const int64_t dh = hidden / p.heads;
    Tensor Q = linear(q_in, p.q);
    Tensor K = linear(k_in, p.k);
    Tensor V = linear(v_in, p.v);
    std::vector<Tensor> head_outs;
    head_outs.reserve(p.heads);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < p.heads; ++h) {
        Tensor Qh = slice(Q, h * dh, (h + 1) * dh);
        Tensor Kh = slice(K, h * dh, (h + 1) * dh);
        Tensor Vh = slice(V, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul(Qh, transpose(Kh)), inv_sqrt_dh);
        head_outs.push_back(matmul(softmax(scores), Vh));
    }
    return linear(concat(head_outs), p.o);
}

namespace {
Tensor mlp_block(const Tensor& x, const MlpParams& p) {
    return linear(gelu(linear(x, p.fc1)), p.fc2);
}
}  // namespace

Tensor transformer_encoder_layer(const Tensor& x, const EncoderLayerParams& p) {
    Tensor h = layer_norm(x, p.ln1.gain, p.ln1.bias);
    Tensor y = add(x, multi_head_attention(h, h, h, p.attn));
    Tensor h2 = layer_norm(y, p.ln2.gain, p.ln2.bias);
    return add(y, mlp_block(h2, p.mlp));
}

Tensor transformer_decoder_layer(const Tensor& x, const Tensor& memory,
                                 const DecoderLayerParams& p) {
    Tensor h = layer_norm(x, p.ln1.gain, p.ln1.bias);
    Tensor y = add(x, multi_head_attention(h, h, h, p.self_attn));
    Tensor h2 = layer_norm(y, p.ln2.gain, p.ln2.bias);
    Tensor z = add(y, multi_head_attention(h2, memory, memory, p.cross_attn));
    Tensor h3 = layer_norm(z, p.ln3.gain, p.ln3.bias);
    return add(z, mlp_block(h3, p.mlp));
}

// -- parameters and optimizer -------------------------------------------------

namespace {
double uniform53(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
}  // namespace

Tensor ParamStore::create(const std::string& name, std::vector<int64_t> shape,
                          std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(shape, true);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.val()(i) = (2.0 * uniform53(rng) - 1.0) * bound;
    params_.emplace_back(name, t);
    return t;
}

Tensor ParamStore::create_zero(const std::string& name, std::vector<int64_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    params_.emplace_back(name, t);
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw ConfigError("ParamStore: unknown parameter " + name);
}

void ParamStore::zero_grads() {
    for (auto& [n, t] : params_) t.zero_grad();
}

void ParamStore::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["params"] = nlohmann::json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : params_) {
        manifest["params"].push_back(
            {{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel() * static_cast<int64_t>(sizeof(double));
    }
    const std::string mstr = manifest.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write checkpoint: " + path);
    f.write("FPKT1", 5);
    uint64_t mlen = mstr.size();
    f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& [name, t] : params_)
        f.write(reinterpret_cast<const char*>(t.val().data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

void ParamStore::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read checkpoint: " + path);
    char magic[5];
    f.read(magic, 5);
    if (std::memcmp(magic, "FPKT1", 5) != 0)
        throw ConfigError("bad checkpoint magic: " + path);
    uint64_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string mstr(mlen, '\0');
    f.read(mstr.data(), static_cast<std::streamsize>(mlen));
    nlohmann::json manifest = nlohmann::json::parse(mstr);
    if (manifest["params"].size() != params_.size())
        throw ConfigError("checkpoint parameter count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
        const auto& entry = manifest["params"][i];
        auto& [name, t] = params_[i];
        if (entry["name"] != name ||
            entry["shape"].get<std::vector<int64_t>>() != t.shape())
            throw ConfigError("checkpoint manifest mismatch at " + name);
        f.read(reinterpret_cast<char*>(t.val().data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!f) throw ConfigError("truncated checkpoint: " + path);
}

void adamw_step(Buffer& param, const Buffer& grad, Buffer& m, Buffer& v,
                const AdamWConfig& cfg, int64_t t) {
    if (param.size() != grad.size()) throw ShapeMismatch("adamw: grad shape mismatch");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    param.array() -= cfg.lr * cfg.weight_decay * param.array();  // decoupled decay
    param.array() -= cfg.lr * (m.array() / bc1) /
                     ((v.array() / bc2).sqrt() + cfg.eps);
}

AdamW::AdamW(ParamStore& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
    for (const auto& [name, t] : store.all()) {
        m_.push_back(Buffer::Zero(t.numel()));
        v_.push_back(Buffer::Zero(t.numel()));
    }
}

void AdamW::step() {
    ++t_;
    const auto& params = store_.all();
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        t.node()->ensure_grad();
        adamw_step(t.val(), t.grad(), m_[i], v_[i], cfg_, t_);
    }
}

}  // namespace farpose::tensornet
