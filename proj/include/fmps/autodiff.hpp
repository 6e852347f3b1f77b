#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "fmps/tensor.hpp"

namespace fmps::ad {

// Reverse-mode tape over Tensors. A tape lives for one forward pass, is
// confined to one thread, and is discarded after backward(). Nodes are
// appended in topological order, so a single reverse sweep visits each node
// exactly once.
enum class OpKind {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    MulConst,  // element-wise product with a fixed tensor; doubles as masking
    AddConst,
    Scale,
    MatMul,
    BiasRows,  // (B x n) + broadcast row vector (n)
    Tanh,
    Gelu,
    Softplus,
    Sum,
    Mean,
    SquaredL2,
    AvgPool2,
    Conv2d,
    ConcatCols,
    Reshape,
    Probe,  // identity; bumps a counter when the backward sweep reaches it
};

struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

namespace detail {

struct Node {
    OpKind kind;
    int a = -1;
    int b = -1;
    Tensor value;
    Tensor aux;           // fixed operand (mask, kernel, constant) or cached input
    double scalar = 0.0;  // scale factor
    std::size_t extent = 0;  // pool factor / concat split column
    std::atomic<long>* probe = nullptr;
};

inline double gelu_scalar(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
}

inline double gelu_grad_scalar(double x) {
    const double phi = std::exp(-0.5 * x * x) * 0.3989422804014327;  // N(0,1) pdf
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
    return cdf + x * phi;
}

inline double softplus_scalar(double x) {
    // log(1 + e^x), stable for both tails
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) {
    return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    Value input(Tensor v) { return push({OpKind::Input, -1, -1, std::move(v)}); }

    Value constant(Tensor v) { return push({OpKind::Constant, -1, -1, std::move(v)}); }

    Value add(Value x, Value y) {
        return push({OpKind::Add, x.id, y.id, val(x) + val(y)});
    }

    Value sub(Value x, Value y) {
        return push({OpKind::Sub, x.id, y.id, val(x) - val(y)});
    }

    Value mul(Value x, Value y) {
        return push({OpKind::Mul, x.id, y.id, val(x) * val(y)});
    }

    Value mul_const(Value x, Tensor c) {
        Tensor v = val(x) * c;
        return push({OpKind::MulConst, x.id, -1, std::move(v), std::move(c)});
    }

    // Masking is an element-wise product with a fixed 0/1 tensor.
    Value mask(Value x, const Tensor& m) { return mul_const(x, m); }

    Value add_const(Value x, Tensor c) {
        Tensor v = val(x) + c;
        return push({OpKind::AddConst, x.id, -1, std::move(v), std::move(c)});
    }

    Value scale(Value x, double c) {
        detail::Node n{OpKind::Scale, x.id, -1, c * val(x)};
        n.scalar = c;
        return push(std::move(n));
    }

    Value matmul(Value x, Value y) {
        return push({OpKind::MatMul, x.id, y.id, fmps::matmul(val(x), val(y))});
    }

    Value bias_rows(Value x, Value b) {
        const Tensor& xv = val(x);
        const Tensor& bv = val(b);
        if (xv.rank() != 2 || bv.size() != xv.shape()[1]) {
            throw ContractViolation("bias_rows: shape mismatch " +
                                    Tensor::shape_string(xv.shape()) + " vs " +
                                    Tensor::shape_string(bv.shape()));
        }
        Tensor out = xv;
        const std::size_t rows = xv.shape()[0], cols = xv.shape()[1];
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
        return push({OpKind::BiasRows, x.id, b.id, std::move(out)});
    }

    // x @ w + broadcast bias
    Value affine(Value x, Value w, Value b) { return bias_rows(matmul(x, w), b); }

    Value tanh(Value x) {
        Tensor out = val(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
        return push({OpKind::Tanh, x.id, -1, std::move(out)});
    }

    Value gelu(Value x) {
        Tensor out = val(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_scalar(out[i]);
        return push({OpKind::Gelu, x.id, -1, std::move(out)});
    }

    Value softplus(Value x) {
        Tensor out = val(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::softplus_scalar(out[i]);
        return push({OpKind::Softplus, x.id, -1, std::move(out)});
    }

    Value sum(Value x) {
        return push({OpKind::Sum, x.id, -1, Tensor::scalar(fmps::sum(val(x)))});
    }

    Value mean(Value x) {
        return push({OpKind::Mean, x.id, -1, Tensor::scalar(fmps::mean(val(x)))});
    }

    Value squared_l2(Value x) {
        return push({OpKind::SquaredL2, x.id, -1, Tensor::scalar(fmps::squared_l2(val(x)))});
    }

    Value avg_pool2(Value x, std::size_t k) {
        detail::Node n{OpKind::AvgPool2, x.id, -1, fmps::avg_pool2(val(x), k)};
        n.extent = k;
        return push(std::move(n));
    }

    Value conv2d(Value x, Tensor kernel) {
        Tensor out = fmps::conv2d_same(val(x), kernel);
        return push({OpKind::Conv2d, x.id, -1, std::move(out), std::move(kernel)});
    }

    Value concat_cols(Value x, Value y) {
        const Tensor& a = val(x);
        const Tensor& b = val(y);
        if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0]) {
            throw ContractViolation("concat_cols: shape mismatch " +
                                    Tensor::shape_string(a.shape()) + " vs " +
                                    Tensor::shape_string(b.shape()));
        }
        const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
        Tensor out({rows, ca + cb});
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = a.at(i, j);
            for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = b.at(i, j);
        }
        detail::Node n{OpKind::ConcatCols, x.id, y.id, std::move(out)};
        n.extent = ca;
        return push(std::move(n));
    }

    Value reshape(Value x, std::vector<std::size_t> shape) {
        return push({OpKind::Reshape, x.id, -1, val(x).reshaped(std::move(shape))});
    }

    // Identity pass-through that increments `counter` when a backward sweep
    // propagates gradient into the subgraph behind it.
    Value probe(Value x, std::atomic<long>* counter) {
        detail::Node n{OpKind::Probe, x.id, -1, val(x)};
        n.probe = counter;
        return push(std::move(n));
    }

    const Tensor& value(Value v) const { return val(v); }

    std::size_t node_count() const { return nodes_.size(); }

    // Accumulates d(root)/d(node) for every ancestor of the scalar root.
    void backward(Value root) {
        if (!recording_) {
            throw ContractViolation("gradient requested on a tape with recording disabled");
        }
        check(root);
        if (nodes_[root.id].value.size() != 1) {
            throw ContractViolation("backward: root must be scalar, got shape " +
                                    Tensor::shape_string(nodes_[root.id].value.shape()));
        }
        grads_.assign(nodes_.size(), Tensor());
        reached_.assign(nodes_.size(), 0);
        grads_[root.id] = Tensor::scalar(1.0);
        reached_[root.id] = 1;
        for (int i = root.id; i >= 0; --i) {
            if (!reached_[i]) continue;
            propagate(i);
        }
        backward_done_ = true;
    }

    // Gradient of the last backward() root with respect to v. Zero tensor if
    // v does not feed the root.
    Tensor grad(Value v) const {
        if (!backward_done_) {
            throw ContractViolation("grad requested before backward()");
        }
        check(v);
        if (!reached_[v.id]) return Tensor::zeros(nodes_[v.id].value.shape());
        return grads_[v.id];
    }

  private:
    Value push(detail::Node n) {
        nodes_.push_back(std::move(n));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor& val(Value v) const {
        check(v);
        return nodes_[v.id].value;
    }

    void check(Value v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
            throw ContractViolation("value is not on this tape");
        }
    }

    void add_grad(int id, const Tensor& g) {
        if (id < 0) return;
        if (!reached_[id]) {
            grads_[id] = g;
            reached_[id] = 1;
        } else {
            grads_[id] += g;
        }
    }

    void propagate(int i) {
        detail::Node& n = nodes_[i];
        const Tensor& g = grads_[i];
        switch (n.kind) {
            case OpKind::Input:
            case OpKind::Constant:
                break;
            case OpKind::Add:
                add_grad(n.a, g);
                add_grad(n.b, g);
                break;
            case OpKind::Sub: {
                add_grad(n.a, g);
                add_grad(n.b, -1.0 * g);
                break;
            }
            case OpKind::Mul:
                add_grad(n.a, g * nodes_[n.b].value);
                add_grad(n.b, g * nodes_[n.a].value);
                break;
            case OpKind::MulConst:
                add_grad(n.a, g * n.aux);
                break;
            case OpKind::AddConst:
                add_grad(n.a, g);
                break;
            case OpKind::Scale:
                add_grad(n.a, n.scalar * g);
                break;
            case OpKind::MatMul:
                add_grad(n.a, matmul_nt(g, nodes_[n.b].value));
                add_grad(n.b, matmul_tn(nodes_[n.a].value, g));
                break;
            case OpKind::BiasRows: {
                add_grad(n.a, g);
                const std::size_t rows = g.shape()[0], cols = g.shape()[1];
                Tensor db(nodes_[n.b].value.shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
                add_grad(n.b, db);
                break;
            }
            case OpKind::Tanh: {
                Tensor gx = g;
                for (std::size_t k = 0; k < gx.size(); ++k)
                    gx[k] *= 1.0 - n.value[k] * n.value[k];
                add_grad(n.a, gx);
                break;
            }
            case OpKind::Gelu: {
                const Tensor& x = nodes_[n.a].value;
                Tensor gx = g;
                for (std::size_t k = 0; k < gx.size(); ++k)
                    gx[k] *= detail::gelu_grad_scalar(x[k]);
                add_grad(n.a, gx);
                break;
            }
            case OpKind::Softplus: {
                const Tensor& x = nodes_[n.a].value;
                Tensor gx = g;
                for (std::size_t k = 0; k < gx.size(); ++k)
                    gx[k] *= detail::sigmoid_scalar(x[k]);
                add_grad(n.a, gx);
                break;
            }
            case OpKind::Sum:
                add_grad(n.a, Tensor::full(nodes_[n.a].value.shape(), g[0]));
                break;
            case OpKind::Mean:
                add_grad(n.a, Tensor::full(nodes_[n.a].value.shape(),
                                           g[0] / static_cast<double>(nodes_[n.a].value.size())));
                break;
            case OpKind::SquaredL2:
                add_grad(n.a, (2.0 * g[0]) * nodes_[n.a].value);
                break;
            case OpKind::AvgPool2: {
                const std::size_t k = n.extent;
                const Tensor& x = nodes_[n.a].value;
                Tensor gx(x.shape());
                const double inv = 1.0 / static_cast<double>(k * k);
                const std::size_t oh = g.shape()[0], ow = g.shape()[1];
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const double gv = g.at(i, j) * inv;
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v)
                                gx.at(i * k + u, j * k + v) = gv;
                    }
                add_grad(n.a, gx);
                break;
            }
            case OpKind::Conv2d: {
                // adjoint of zero-padded same convolution: scatter each output
                // gradient back through the kernel window
                const Tensor& kern = n.aux;
                const Tensor& x = nodes_[n.a].value;
                const std::size_t h = x.shape()[0], w = x.shape()[1], ks = kern.shape()[0];
                const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(ks / 2);
                Tensor gx(x.shape());
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        const double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        for (std::size_t u = 0; u < ks; ++u)
                            for (std::size_t v = 0; v < ks; ++v) {
                                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - p;
                                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - p;
                                if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                                    jj >= static_cast<std::ptrdiff_t>(w))
                                    continue;
                                gx.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) +=
                                    kern.at(u, v) * gv;
                            }
                    }
                add_grad(n.a, gx);
                break;
            }
            case OpKind::ConcatCols: {
                const Tensor& a = nodes_[n.a].value;
                const Tensor& b = nodes_[n.b].value;
                const std::size_t rows = g.shape()[0], ca = n.extent, cb = b.shape()[1];
                Tensor ga(a.shape()), gb(b.shape());
                for (std::size_t i = 0; i < rows; ++i) {
                    for (std::size_t j = 0; j < ca; ++j) ga.at(i, j) = g.at(i, j);
                    for (std::size_t j = 0; j < cb; ++j) gb.at(i, j) = g.at(i, ca + j);
                }
                add_grad(n.a, ga);
                add_grad(n.b, gb);
                break;
            }
            case OpKind::Reshape:
                add_grad(n.a, g.reshaped(nodes_[n.a].value.shape()));
                break;
            case OpKind::Probe:
                if (n.probe) n.probe->fetch_add(1, std::memory_order_relaxed);
                add_grad(n.a, g);
                break;
        }
    }

    std::vector<detail::Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> reached_;
    bool recording_;
    bool backward_done_ = false;
};

}  // namespace fmps::ad
