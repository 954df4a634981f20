// SPDX-License-Identifier: Apache-2.0

#include "adamoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace adamoe {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
        if (d == 0) throw std::invalid_argument("tensor extent must be positive");
        n *= d;
    }
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_2d(const Tensor& a, const char* op) {
    if (a.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                    shape_str(a.shape()));
    }
}

}  // namespace

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) {
    node_->shape = {1};
    node_->values = {0.0};
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
    std::size_t n = shape_numel(shape);
    node_->shape = std::move(shape);
    node_->values.assign(n, fill);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values,
               bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("tensor: " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor({1}, {v}, requires_grad);
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw std::invalid_argument("rows(): tensor is not 2-D");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw std::invalid_argument("cols(): tensor is not 2-D");
    return node_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) {
        throw std::invalid_argument("item(): tensor has " + std::to_string(size()) +
                                    " elements, expected 1");
    }
    return node_->values[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2 || i >= node_->shape[0] || j >= node_->shape[1]) {
        throw std::out_of_range("at(" + std::to_string(i) + "," + std::to_string(j) +
                                "): out of range for " + shape_str(node_->shape));
    }
    return node_->values[i * node_->shape[1] + j];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        throw std::runtime_error("grad(): no gradient present (run backward first)");
    }
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->values.size(), 0.0);
}

Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
               std::vector<Tensor> parents, BackwardFn backward_fn,
               std::string op_name) {
    Tensor out(std::move(shape), std::move(values));
    auto& node = *out.node();
    node.op = std::move(op_name);
    node.parents.reserve(parents.size());
    for (const Tensor& p : parents) {
        node.parents.push_back(p.node());
        if (p.requires_grad()) node.requires_grad = true;
    }
    if (node.requires_grad) node.backward_fn = std::move(backward_fn);
    return out;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](TensorNode& n) {
                       for (int k = 0; k < 2; ++k) {
                           auto& p = *n.parents[k];
                           if (!p.requires_grad) continue;
                           p.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               p.grad[i] += n.grad[i];
                       }
                   },
                   "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](TensorNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pa.grad[i] += n.grad[i];
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pb.grad[i] -= n.grad[i];
                       }
                   },
                   "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](TensorNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pa.grad[i] += n.grad[i] * pb.values[i];
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pb.grad[i] += n.grad[i] * pa.values[i];
                       }
                   },
                   "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
    return make_op(a.shape(), std::move(out), {a, b},
                   [](TensorNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pa.grad[i] += n.grad[i] / pb.values[i];
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pb.grad[i] -= n.grad[i] * pa.values[i] /
                                             (pb.values[i] * pb.values[i]);
                       }
                   },
                   "div");
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    return make_op(a.shape(), std::move(out), {a},
                   [c](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[i] += n.grad[i] * c;
                   },
                   "scale");
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
    return make_op(a.shape(), std::move(out), {a},
                   [](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       // subgradient at 0 is 0
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           if (p.values[i] > 0.0) p.grad[i] += n.grad[i];
                   },
                   "relu");
}

Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a.values()[i]);
    return make_op(a.shape(), std::move(out), {a},
                   [](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[i] += n.grad[i] / p.values[i];
                   },
                   "log");
}

// ---------------------------------------------------------------------------
// linear algebra

namespace {

// C[m x n] += A[m x k] * B[k x n], ikj loop order
void matmul_acc(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A^T where A is [k x m], times B [k x n]:  C = A^T B
void matmul_at_b(const double* a, const double* b, double* c, std::size_t k,
                 std::size_t m, std::size_t n) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* arow = a + kk * m;
        const double* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += A[m x n] * B^T where B is [k x n]:  C = A B^T
void matmul_a_bt(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* crow = c + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* brow = b + j * n;
            double acc = 0.0;
            for (std::size_t t = 0; t < n; ++t) acc += arow[t] * brow[t];
            crow[j] += acc;
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: inner extents disagree, " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    matmul_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_op({m, n}, std::move(out), {a, b},
                   [m, k, n](TensorNode& node) {
                       auto& pa = *node.parents[0];
                       auto& pb = *node.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();  // dA = dC * B^T
                           matmul_a_bt(node.grad.data(), pb.values.data(),
                                       pa.grad.data(), m, n, k);
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();  // dB = A^T * dC
                           matmul_at_b(pa.values.data(), node.grad.data(),
                                       pb.grad.data(), m, k, n);
                       }
                   },
                   "matmul");
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.values()[i * c + j];
    return make_op({c, r}, std::move(out), {a},
                   [r, c](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                               p.grad[i * c + j] += n.grad[j * r + i];
                   },
                   "transpose");
}

// ---------------------------------------------------------------------------
// softmax

Tensor softmax(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of range for " + shape_str(a.shape()));
    }
    std::size_t lane = a.shape()[axis];
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
    std::size_t outer = a.size() / (lane * inner);

    std::vector<double> out(a.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * lane * inner + in;
            double mx = a.values()[base];
            for (std::size_t L = 1; L < lane; ++L)
                mx = std::max(mx, a.values()[base + L * inner]);
            double denom = 0.0;
            for (std::size_t L = 0; L < lane; ++L) {
                double e = std::exp(a.values()[base + L * inner] - mx);
                out[base + L * inner] = e;
                denom += e;
            }
            for (std::size_t L = 0; L < lane; ++L) out[base + L * inner] /= denom;
        }
    }
    return make_op(a.shape(), std::move(out), {a},
                   [lane, inner, outer](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       // dx_i = y_i * (g_i - sum_j g_j y_j) per lane
                       for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t in = 0; in < inner; ++in) {
                               std::size_t base = o * lane * inner + in;
                               double dot = 0.0;
                               for (std::size_t L = 0; L < lane; ++L) {
                                   std::size_t idx = base + L * inner;
                                   dot += n.grad[idx] * n.values[idx];
                               }
                               for (std::size_t L = 0; L < lane; ++L) {
                                   std::size_t idx = base + L * inner;
                                   p.grad[idx] += n.values[idx] * (n.grad[idx] - dot);
                               }
                           }
                       }
                   },
                   "softmax");
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op({1}, {s}, {a},
                   [](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (double& g : p.grad) g += n.grad[0];
                   },
                   "sum");
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// structure

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != a.size()) {
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " +
                                    shape_str(shape) + " changes element count");
    }
    return make_op(std::move(shape), a.values(), {a},
                   [](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[i] += n.grad[i];
                   },
                   "reshape");
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
    require_2d(a, "gather_rows");
    std::size_t c = a.cols();
    for (int r : rows) {
        if (r < 0 || static_cast<std::size_t>(r) >= a.rows()) {
            throw std::out_of_range("gather_rows: row " + std::to_string(r) +
                                    " out of range for " + shape_str(a.shape()));
        }
    }
    std::vector<double> out(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = a.values().data() + static_cast<std::size_t>(rows[i]) * c;
        std::copy(src, src + c, out.data() + i * c);
    }
    return make_op({rows.size(), c}, std::move(out), {a},
                   [rows, c](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                           double* dst = p.grad.data() + static_cast<std::size_t>(rows[i]) * c;
                           const double* g = n.grad.data() + i * c;
                           for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
                       }
                   },
                   "gather_rows");
}

Tensor scatter_rows(const Tensor& a, const std::vector<int>& rows,
                    std::size_t total_rows) {
    require_2d(a, "scatter_rows");
    if (rows.size() != a.rows()) {
        throw std::invalid_argument("scatter_rows: " + std::to_string(rows.size()) +
                                    " indices for " + std::to_string(a.rows()) + " rows");
    }
    std::size_t c = a.cols();
    for (int r : rows) {
        if (r < 0 || static_cast<std::size_t>(r) >= total_rows) {
            throw std::out_of_range("scatter_rows: target row " + std::to_string(r) +
                                    " out of range for total " + std::to_string(total_rows));
        }
    }
    std::vector<double> out(total_rows * c, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = out.data() + static_cast<std::size_t>(rows[i]) * c;
        const double* src = a.values().data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    return make_op({total_rows, c}, std::move(out), {a},
                   [rows, c](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < rows.size(); ++i) {
                           const double* g = n.grad.data() + static_cast<std::size_t>(rows[i]) * c;
                           double* dst = p.grad.data() + i * c;
                           for (std::size_t j = 0; j < c; ++j) dst[j] += g[j];
                       }
                   },
                   "scatter_rows");
}

Tensor gather_elems(const Tensor& a, const std::vector<std::size_t>& flat) {
    for (std::size_t f : flat) {
        if (f >= a.size()) {
            throw std::out_of_range("gather_elems: index " + std::to_string(f) +
                                    " out of range for " + std::to_string(a.size()));
        }
    }
    std::vector<double> out(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) out[i] = a.values()[flat[i]];
    return make_op({flat.size()}, std::move(out), {a},
                   [flat](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < flat.size(); ++i)
                           p.grad[flat[i]] += n.grad[i];
                   },
                   "gather_elems");
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    require_2d(a, "slice_cols");
    if (c0 >= c1 || c1 > a.cols()) {
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + shape_str(a.shape()));
    }
    std::size_t r = a.rows(), c = a.cols(), w = c1 - c0;
    std::vector<double> out(r * w);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.values()[i * c + c0 + j];
    return make_op({r, w}, std::move(out), {a},
                   [r, c, c0, w](TensorNode& n) {
                       auto& p = *n.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < w; ++j)
                               p.grad[i * c + c0 + j] += n.grad[i * w + j];
                   },
                   "slice_cols");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    std::size_t r = parts[0].rows(), total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        if (p.rows() != r) throw std::invalid_argument("concat_cols: row count mismatch");
        total += p.cols();
    }
    std::vector<double> out(r * total);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(off);
        std::size_t w = p.cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j)
                out[i * total + off + j] = p.values()[i * w + j];
        off += w;
    }
    return make_op({r, total}, std::move(out), parts,
                   [r, total, offsets](TensorNode& n) {
                       for (std::size_t k = 0; k < n.parents.size(); ++k) {
                           auto& p = *n.parents[k];
                           if (!p.requires_grad) continue;
                           p.ensure_grad();
                           std::size_t w = p.shape[1], off = offsets[k];
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < w; ++j)
                                   p.grad[i * w + j] += n.grad[i * total + off + j];
                       }
                   },
                   "concat_cols");
}

Tensor rowwise_scale(const Tensor& m, const Tensor& s) {
    require_2d(m, "rowwise_scale");
    if (s.size() != m.rows()) {
        throw std::invalid_argument("rowwise_scale: scale length " +
                                    std::to_string(s.size()) + " != rows " +
                                    std::to_string(m.rows()));
    }
    std::size_t r = m.rows(), c = m.cols();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.values()[i * c + j] * s.values()[i];
    return make_op({r, c}, std::move(out), {m, s},
                   [r, c](TensorNode& n) {
                       auto& pm = *n.parents[0];
                       auto& ps = *n.parents[1];
                       if (pm.requires_grad) {
                           pm.ensure_grad();
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j)
                                   pm.grad[i * c + j] += n.grad[i * c + j] * ps.values[i];
                       }
                       if (ps.requires_grad) {
                           ps.ensure_grad();
                           for (std::size_t i = 0; i < r; ++i) {
                               double acc = 0.0;
                               for (std::size_t j = 0; j < c; ++j)
                                   acc += n.grad[i * c + j] * pm.values[i * c + j];
                               ps.grad[i] += acc;
                           }
                       }
                   },
                   "rowwise_scale");
}

// ---------------------------------------------------------------------------
// layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    require_2d(x, "layer_norm");
    std::size_t r = x.rows(), c = x.cols();
    if (gamma.size() != c || beta.size() != c) {
        throw std::invalid_argument("layer_norm: gamma/beta length must equal columns");
    }
    std::vector<double> out(r * c);
    std::vector<double> xhat(r * c);
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x.values().data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(c);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            double xh = (row[j] - mu) * is;
            xhat[i * c + j] = xh;
            out[i * c + j] = gamma.values()[j] * xh + beta.values()[j];
        }
    }
    return make_op({r, c}, std::move(out), {x, gamma, beta},
                   [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& n) {
                       auto& px = *n.parents[0];
                       auto& pg = *n.parents[1];
                       auto& pb = *n.parents[2];
                       if (pg.requires_grad) pg.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       if (px.requires_grad) px.ensure_grad();
                       for (std::size_t i = 0; i < r; ++i) {
                           const double* g = n.grad.data() + i * c;
                           const double* xh = xhat.data() + i * c;
                           if (pg.requires_grad || pb.requires_grad) {
                               for (std::size_t j = 0; j < c; ++j) {
                                   if (pg.requires_grad) pg.grad[j] += g[j] * xh[j];
                                   if (pb.requires_grad) pb.grad[j] += g[j];
                               }
                           }
                           if (px.requires_grad) {
                               // dxhat = g * gamma; dx = (dxhat - mean(dxhat)
                               //        - xhat * mean(dxhat*xhat)) * inv_std
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t j = 0; j < c; ++j) {
                                   double dxh = g[j] * pg.values[j];
                                   m1 += dxh;
                                   m2 += dxh * xh[j];
                               }
                               m1 /= static_cast<double>(c);
                               m2 /= static_cast<double>(c);
                               for (std::size_t j = 0; j < c; ++j) {
                                   double dxh = g[j] * pg.values[j];
                                   px.grad[i * c + j] += (dxh - m1 - xh[j] * m2) * inv_std[i];
                               }
                           }
                       }
                   },
                   "layer_norm");
}

// ---------------------------------------------------------------------------
// cross entropy

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    require_2d(logits, "cross_entropy");
    std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n) {
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(n) + " rows");
    }
    for (int t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw std::invalid_argument("cross_entropy: target " + std::to_string(t) +
                                        " out of range for " + std::to_string(v) + " classes");
        }
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.values().data() + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        loss += mx + std::log(denom) - row[static_cast<std::size_t>(targets[i])];
    }
    loss /= static_cast<double>(n);
    return make_op({1}, {loss}, {logits},
                   [targets, n, v](TensorNode& node) {
                       auto& p = *node.parents[0];
                       if (!p.requires_grad) return;
                       p.ensure_grad();
                       double g = node.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                           const double* row = p.values.data() + i * v;
                           double mx = row[0];
                           for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                           double denom = 0.0;
                           for (std::size_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
                           for (std::size_t j = 0; j < v; ++j) {
                               double sm = std::exp(row[j] - mx) / denom;
                               double ind = (j == static_cast<std::size_t>(targets[i])) ? 1.0 : 0.0;
                               p.grad[i * v + j] += g * (sm - ind);
                           }
                       }
                   },
                   "cross_entropy");
}

// ---------------------------------------------------------------------------
// backward

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    }
    // iterative post-order topological sort
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    struct Frame {
        TensorNode* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

}  // namespace adamoe
