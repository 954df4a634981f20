// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with reverse-mode automatic differentiation.
// Row-major storage, single-threaded graph construction, deterministic
// forward and backward for fixed inputs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace adamoe {

struct TensorNode;
using BackwardFn = std::function<void(TensorNode&)>;

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    BackwardFn backward_fn;  // pushes this node's grad into its parents
    std::string op;

    std::size_t size() const { return values.size(); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

/// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
public:
    Tensor();  // scalar 0, no grad
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0,
                    bool requires_grad = false);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values,
           bool requires_grad = false);
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor scalar(double v, bool requires_grad = false);

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->values.size(); }
    std::size_t rows() const;  // 2-D only
    std::size_t cols() const;  // 2-D only

    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }
    double item() const;                              // requires size() == 1
    double at(std::size_t i, std::size_t j) const;    // 2-D accessor

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    const std::shared_ptr<TensorNode>& node() const { return node_; }
    bool defined() const { return node_ != nullptr; }

private:
    std::shared_ptr<TensorNode> node_;
};

/// Generic node constructor; every built-in op goes through this, and callers
/// may use it to extend the op set (backward_fn reads node.grad and
/// accumulates into node.parents[i]->grad).
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
               std::vector<Tensor> parents, BackwardFn backward_fn,
               std::string op_name);

// Elementwise (same shape on both operands).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);

// Linear algebra (2-D).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Softmax along `axis` with max subtraction; lanes sum to 1 within 1e-12.
Tensor softmax(const Tensor& a, std::size_t axis);

// Reductions.
Tensor sum(const Tensor& a);   // -> scalar (shape {1})
Tensor mean(const Tensor& a);  // -> scalar

// Structure ops (2-D unless noted).
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor scatter_rows(const Tensor& a, const std::vector<int>& rows,
                    std::size_t total_rows);  // duplicate targets accumulate
Tensor gather_elems(const Tensor& a, const std::vector<std::size_t>& flat);  // -> 1-D
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor rowwise_scale(const Tensor& m, const Tensor& s);  // out[i,j] = m[i,j]*s[i]

/// Per-row layer normalization with affine gamma/beta (1-D, length = cols).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Mean over rows of (logsumexp(row) - row[target]); numerically stable,
/// backward is softmax(row) - onehot(target).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

/// Reverse-mode sweep from a scalar loss. Gradient accumulation is additive;
/// callers zero parameter grads between steps.
void backward(const Tensor& loss);

}  // namespace adamoe
