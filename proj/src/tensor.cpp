#include "msse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "msse/kernels.hpp"

namespace msse {

namespace {

bool g_grad_enabled = true;

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

// Builds a graph node. Parents and the backward closure are only retained
// when gradients are both enabled and needed.
TensorPtr make_node(const char* op, std::vector<int> shape, std::vector<double> data,
                    std::vector<TensorPtr> parents, std::function<void(Tensor&)> bw) {
    check_finite(op, data);
    auto t = Tensor::from_data(std::move(shape), std::move(data), false);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        t->requires_grad = true;
        t->parents = std::move(parents);
        t->backward_fn = std::move(bw);
    }
    return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
    }
}

}  // namespace

TensorPtr Tensor::create(std::vector<int> shape, bool requires_grad) {
    return from_data(shape, std::vector<double>(static_cast<std::size_t>(shape_product(shape)), 0.0),
                     requires_grad);
}

TensorPtr Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_product(shape) != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    return from_data(shape, std::vector<double>(static_cast<std::size_t>(shape_product(shape)), value),
                     requires_grad);
}

TensorPtr Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(static_cast<std::size_t>(shape_product(shape)));
    for (auto& x : d) x = rng.normal() * stddev;
    return from_data(std::move(shape), std::move(d), requires_grad);
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const TensorPtr& root) {
    if (root->size() != 1) throw DimensionError("backward: root must be a scalar");
    if (!root->requires_grad) return;

    // iterative post-order DFS
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---- elementwise -----------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("add", *a, *b);
    std::vector<double> y(a->data.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->data[i] + b->data[i];
    return make_node("add", a->shape, std::move(y), {a, b}, [](Tensor& self) {
        for (int side = 0; side < 2; ++side) {
            Tensor& p = *self.parents[side];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
        }
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape("mul", *a, *b);
    std::vector<double> y(a->data.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->data[i] * b->data[i];
    return make_node("mul", a->shape, std::move(y), {a, b}, [](Tensor& self) {
        Tensor& a = *self.parents[0];
        Tensor& b = *self.parents[1];
        if (a.requires_grad) {
            a.ensure_grad();
            for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i] * b.data[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            for (std::size_t i = 0; i < b.grad.size(); ++i) b.grad[i] += self.grad[i] * a.data[i];
        }
    });
}

TensorPtr relu(const TensorPtr& x) {
    std::vector<double> y(x->data.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    return make_node("relu", x->shape, std::move(y), {x}, [](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.grad.size(); ++i) {
            if (x.data[i] > 0.0) x.grad[i] += self.grad[i];
        }
    });
}

TensorPtr sigmoid(const TensorPtr& x) {
    std::vector<double> y(x->data.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
    return make_node("sigmoid", x->shape, std::move(y), {x}, [](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.grad.size(); ++i) {
            const double s = self.data[i];
            x.grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

// ---- linear algebra ----------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->ndim() != 2 || b->ndim() != 2) throw DimensionError("matmul: operands must be 2-D");
    if (a->shape[1] != b->shape[0]) {
        throw DimensionError("matmul: inner extents differ, " + shape_str(a->shape) + " vs " +
                             shape_str(b->shape));
    }
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> y(static_cast<std::size_t>(m) * n);
    kernels::matmul(a->data.data(), b->data.data(), y.data(), m, k, n);
    return make_node("matmul", {m, n}, std::move(y), {a, b}, [m, k, n](Tensor& self) {
        Tensor& a = *self.parents[0];
        Tensor& b = *self.parents[1];
        if (a.requires_grad) {
            a.ensure_grad();
            // dA = dY * B^T
            for (int i = 0; i < m; ++i) {
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += self.grad[i * n + j] * b.data[p * n + j];
                    a.grad[i * k + p] += acc;
                }
            }
        }
        if (b.requires_grad) {
            b.ensure_grad();
            // dB = A^T * dY
            for (int p = 0; p < k; ++p) {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += a.data[i * k + p] * self.grad[i * n + j];
                    b.grad[p * n + j] += acc;
                }
            }
        }
    });
}

TensorPtr conv2d_same(const TensorPtr& x, const TensorPtr& kernels_t, const TensorPtr& bias) {
    if (x->ndim() != 3) throw DimensionError("conv2d_same: input must be [H,W,Cin]");
    if (kernels_t->ndim() != 4) throw DimensionError("conv2d_same: kernels must be [kh,kw,Cin,Cout]");
    const int H = x->shape[0], W = x->shape[1], Cin = x->shape[2];
    const int kh = kernels_t->shape[0], kw = kernels_t->shape[1];
    const int Cout = kernels_t->shape[3];
    if (kh % 2 == 0 || kw % 2 == 0) {
        throw ConfigError("conv2d_same: kernel extents must be odd, got " +
                          std::to_string(kh) + "x" + std::to_string(kw));
    }
    if (kernels_t->shape[2] != Cin) {
        throw DimensionError("conv2d_same: kernel Cin " + std::to_string(kernels_t->shape[2]) +
                             " does not match input Cin " + std::to_string(Cin));
    }
    if (bias && (bias->ndim() != 1 || bias->shape[0] != Cout)) {
        throw DimensionError("conv2d_same: bias must be [Cout]");
    }

    std::vector<double> y(static_cast<std::size_t>(H) * W * Cout);
    kernels::conv2d(x->data.data(), kernels_t->data.data(), bias ? bias->data.data() : nullptr,
                    y.data(), H, W, Cin, kh, kw, Cout);

    std::vector<TensorPtr> parents = {x, kernels_t};
    if (bias) parents.push_back(bias);
    return make_node("conv2d_same", {H, W, Cout}, std::move(y), std::move(parents),
                     [H, W, Cin, kh, kw, Cout](Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& w = *self.parents[1];
        if (x.requires_grad) {
            std::vector<double> dx(x.data.size());
            kernels::conv2d_grad_x(self.grad.data(), w.data.data(), dx.data(),
                                   H, W, Cin, kh, kw, Cout);
            x.ensure_grad();
            for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
        }
        if (w.requires_grad) {
            std::vector<double> dw(w.data.size());
            kernels::conv2d_grad_w(x.data.data(), self.grad.data(), dw.data(),
                                   H, W, Cin, kh, kw, Cout);
            w.ensure_grad();
            for (std::size_t i = 0; i < dw.size(); ++i) w.grad[i] += dw[i];
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Tensor& b = *self.parents[2];
            b.ensure_grad();
            for (int co = 0; co < Cout; ++co) {
                double acc = 0.0;
                for (int p = 0; p < H * W; ++p) acc += self.grad[p * Cout + co];
                b.grad[co] += acc;
            }
        }
    });
}

TensorPtr conv1d_causal_dilated(const TensorPtr& x, const TensorPtr& kernels_t, int dilation) {
    if (x->ndim() != 2) throw DimensionError("conv1d_causal_dilated: input must be [T,Cin]");
    if (kernels_t->ndim() != 3) {
        throw DimensionError("conv1d_causal_dilated: kernels must be [k,Cin,Cout]");
    }
    if (dilation < 1) {
        throw ConfigError("conv1d_causal_dilated: dilation must be >= 1, got " +
                          std::to_string(dilation));
    }
    const int T = x->shape[0], Cin = x->shape[1];
    const int k = kernels_t->shape[0], Cout = kernels_t->shape[2];
    if (kernels_t->shape[1] != Cin) {
        throw DimensionError("conv1d_causal_dilated: kernel Cin mismatch");
    }

    std::vector<double> y(static_cast<std::size_t>(T) * Cout);
    kernels::conv1d(x->data.data(), kernels_t->data.data(), y.data(), T, Cin, k, Cout, dilation);
    return make_node("conv1d_causal_dilated", {T, Cout}, std::move(y), {x, kernels_t},
                     [T, Cin, k, Cout, dilation](Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& w = *self.parents[1];
        if (x.requires_grad) {
            std::vector<double> dx(x.data.size());
            kernels::conv1d_grad_x(self.grad.data(), w.data.data(), dx.data(),
                                   T, Cin, k, Cout, dilation);
            x.ensure_grad();
            for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
        }
        if (w.requires_grad) {
            std::vector<double> dw(w.data.size());
            kernels::conv1d_grad_w(x.data.data(), self.grad.data(), dw.data(),
                                   T, Cin, k, Cout, dilation);
            w.ensure_grad();
            for (std::size_t i = 0; i < dw.size(); ++i) w.grad[i] += dw[i];
        }
    });
}

// ---- shape ops -----------------------------------------------------------

TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape) {
    if (shape_product(new_shape) != x->size()) {
        throw DimensionError("reshape: element count mismatch " + shape_str(x->shape) + " -> " +
                             shape_str(new_shape));
    }
    return make_node("reshape", std::move(new_shape), x->data, {x}, [](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += self.grad[i];
    });
}

TensorPtr transpose2d(const TensorPtr& x) {
    if (x->ndim() != 2) throw DimensionError("transpose2d: input must be 2-D");
    const int A = x->shape[0], B = x->shape[1];
    std::vector<double> y(x->data.size());
    for (int i = 0; i < A; ++i)
        for (int j = 0; j < B; ++j) y[j * A + i] = x->data[i * B + j];
    return make_node("transpose2d", {B, A}, std::move(y), {x}, [A, B](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (int i = 0; i < A; ++i)
            for (int j = 0; j < B; ++j) x.grad[i * B + j] += self.grad[j * A + i];
    });
}

TensorPtr reverse_axis0(const TensorPtr& x) {
    const int A = x->shape[0];
    const std::size_t stride = x->data.size() / static_cast<std::size_t>(A);
    std::vector<double> y(x->data.size());
    for (int i = 0; i < A; ++i) {
        std::copy_n(x->data.begin() + static_cast<std::size_t>(i) * stride, stride,
                    y.begin() + static_cast<std::size_t>(A - 1 - i) * stride);
    }
    return make_node("reverse_axis0", x->shape, std::move(y), {x}, [A, stride](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (int i = 0; i < A; ++i) {
            const double* src = self.grad.data() + static_cast<std::size_t>(A - 1 - i) * stride;
            double* dst = x.grad.data() + static_cast<std::size_t>(i) * stride;
            for (std::size_t j = 0; j < stride; ++j) dst[j] += src[j];
        }
    });
}

TensorPtr mean_axis0(const TensorPtr& x) {
    if (x->ndim() < 1 || x->shape[0] < 1) throw DataError("mean_axis0: empty input");
    const int A = x->shape[0];
    const std::size_t rest = x->data.size() / static_cast<std::size_t>(A);
    std::vector<int> out_shape(x->shape.begin() + 1, x->shape.end());
    if (out_shape.empty()) out_shape = {1};
    std::vector<double> y(rest, 0.0);
    for (int i = 0; i < A; ++i) {
        const double* row = x->data.data() + static_cast<std::size_t>(i) * rest;
        for (std::size_t j = 0; j < rest; ++j) y[j] += row[j];
    }
    const double inv = 1.0 / A;
    for (auto& v : y) v *= inv;
    return make_node("mean_axis0", std::move(out_shape), std::move(y), {x},
                     [A, rest, inv](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (int i = 0; i < A; ++i) {
            double* dst = x.grad.data() + static_cast<std::size_t>(i) * rest;
            for (std::size_t j = 0; j < rest; ++j) dst[j] += self.grad[j] * inv;
        }
    });
}

TensorPtr concat_last(const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    const auto& first = parts.front()->shape;
    int total_c = 0;
    for (const auto& p : parts) {
        if (p->ndim() != static_cast<int>(first.size())) {
            throw DimensionError("concat_last: rank mismatch");
        }
        for (std::size_t d = 0; d + 1 < first.size(); ++d) {
            if (p->shape[d] != first[d]) {
                throw DimensionError("concat_last: leading extents differ: " +
                                     shape_str(p->shape) + " vs " + shape_str(first));
            }
        }
        total_c += p->shape.back();
    }
    std::vector<int> out_shape = first;
    out_shape.back() = total_c;
    const std::size_t rows = static_cast<std::size_t>(shape_product(out_shape)) / total_c;

    std::vector<double> y(rows * total_c);
    std::vector<int> widths;
    for (const auto& p : parts) widths.push_back(p->shape.back());
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const int w = widths[pi];
        const double* src = parts[pi]->data.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(src + r * w, w, y.begin() + r * total_c + off);
        }
        off += static_cast<std::size_t>(w);
    }
    return make_node("concat_last", std::move(out_shape), std::move(y), parts,
                     [rows, total_c, widths](Tensor& self) {
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            Tensor& p = *self.parents[pi];
            const int w = widths[pi];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* src = self.grad.data() + r * total_c + off;
                    double* dst = p.grad.data() + r * w;
                    for (int j = 0; j < w; ++j) dst[j] += src[j];
                }
            }
            off += static_cast<std::size_t>(w);
        }
    });
}

// ---- channel ops -----------------------------------------------------

TensorPtr scale_channels(const TensorPtr& u, const TensorPtr& s) {
    const int C = u->shape.back();
    if (s->size() != C) {
        throw DimensionError("scale_channels: gate length " + std::to_string(s->size()) +
                             " does not match channel count " + std::to_string(C));
    }
    const std::size_t rows = u->data.size() / static_cast<std::size_t>(C);
    std::vector<double> y(u->data.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (int c = 0; c < C; ++c) y[r * C + c] = u->data[r * C + c] * s->data[c];
    }
    return make_node("scale_channels", u->shape, std::move(y), {u, s}, [rows, C](Tensor& self) {
        Tensor& u = *self.parents[0];
        Tensor& s = *self.parents[1];
        if (u.requires_grad) {
            u.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (int c = 0; c < C; ++c) u.grad[r * C + c] += self.grad[r * C + c] * s.data[c];
        }
        if (s.requires_grad) {
            s.ensure_grad();
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r) acc += self.grad[r * C + c] * u.data[r * C + c];
                s.grad[c] += acc;
            }
        }
    });
}

TensorPtr channel_mask_scale(const TensorPtr& x, std::vector<double> mask) {
    const int C = x->shape.back();
    if (static_cast<int>(mask.size()) != C) {
        throw DimensionError("channel_mask_scale: mask length mismatch");
    }
    const std::size_t rows = x->data.size() / static_cast<std::size_t>(C);
    std::vector<double> y(x->data.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) y[r * C + c] = x->data[r * C + c] * mask[c];
    return make_node("channel_mask_scale", x->shape, std::move(y), {x},
                     [rows, C, mask = std::move(mask)](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
            for (int c = 0; c < C; ++c) x.grad[r * C + c] += self.grad[r * C + c] * mask[c];
    });
}

TensorPtr scale_by_weight(const TensorPtr& x, const TensorPtr& w, int idx) {
    if (idx < 0 || idx >= w->size()) throw DimensionError("scale_by_weight: index out of range");
    const double wv = w->data[static_cast<std::size_t>(idx)];
    std::vector<double> y(x->data.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x->data[i] * wv;
    return make_node("scale_by_weight", x->shape, std::move(y), {x, w}, [idx, wv](Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& w = *self.parents[1];
        if (x.requires_grad) {
            x.ensure_grad();
            for (std::size_t i = 0; i < x.grad.size(); ++i) x.grad[i] += self.grad[i] * wv;
        }
        if (w.requires_grad) {
            w.ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < x.data.size(); ++i) acc += self.grad[i] * x.data[i];
            w.grad[static_cast<std::size_t>(idx)] += acc;
        }
    });
}

// ---- classifier head ---------------------------------------------------

TensorPtr softmax(const TensorPtr& logits) {
    if (logits->ndim() != 1) throw DimensionError("softmax: input must be 1-D");
    const std::size_t K = logits->data.size();
    double m = logits->data[0];
    for (double v : logits->data) m = std::max(m, v);
    std::vector<double> y(K);
    double z = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
        y[i] = std::exp(logits->data[i] - m);
        z += y[i];
    }
    for (auto& v : y) v /= z;
    return make_node("softmax", logits->shape, std::move(y), {logits}, [K](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < K; ++i) dot += self.grad[i] * self.data[i];
        for (std::size_t i = 0; i < K; ++i) x.grad[i] += self.data[i] * (self.grad[i] - dot);
    });
}

TensorPtr neg_log_prob(const TensorPtr& probs, int true_class, double clamp) {
    if (true_class < 0 || true_class >= probs->size()) {
        throw DataError("neg_log_prob: class id " + std::to_string(true_class) +
                        " out of range for " + std::to_string(probs->size()) + " classes");
    }
    const double p = std::max(probs->data[static_cast<std::size_t>(true_class)], clamp);
    std::vector<double> y = {-std::log(p)};
    return make_node("neg_log_prob", {1}, std::move(y), {probs},
                     [true_class, clamp](Tensor& self) {
        Tensor& probs = *self.parents[0];
        if (!probs.requires_grad) return;
        probs.ensure_grad();
        const double pv = probs.data[static_cast<std::size_t>(true_class)];
        if (pv > clamp) probs.grad[static_cast<std::size_t>(true_class)] += -self.grad[0] / pv;
    });
}

// ---- pooling -------------------------------------------------------------

TensorPtr avgpool2x2(const TensorPtr& x) {
    if (x->ndim() != 3) throw DimensionError("avgpool2x2: input must be [H,W,C]");
    const int H = x->shape[0], W = x->shape[1], C = x->shape[2];
    const int H2 = (H + 1) / 2, W2 = (W + 1) / 2;
    std::vector<double> y(static_cast<std::size_t>(H2) * W2 * C);
    for (int i = 0; i < H2; ++i) {
        for (int j = 0; j < W2; ++j) {
            const int h0 = 2 * i, w0 = 2 * j;
            const int hn = std::min(2, H - h0), wn = std::min(2, W - w0);
            const double inv = 1.0 / (hn * wn);
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int a = 0; a < hn; ++a)
                    for (int b = 0; b < wn; ++b) acc += x->data[((h0 + a) * W + w0 + b) * C + c];
                y[(i * W2 + j) * C + c] = acc * inv;
            }
        }
    }
    return make_node("avgpool2x2", {H2, W2, C}, std::move(y), {x}, [H, W, C, H2, W2](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (int i = 0; i < H2; ++i) {
            for (int j = 0; j < W2; ++j) {
                const int h0 = 2 * i, w0 = 2 * j;
                const int hn = std::min(2, H - h0), wn = std::min(2, W - w0);
                const double inv = 1.0 / (hn * wn);
                for (int c = 0; c < C; ++c) {
                    const double g = self.grad[(i * W2 + j) * C + c] * inv;
                    for (int a = 0; a < hn; ++a)
                        for (int b = 0; b < wn; ++b) x.grad[((h0 + a) * W + w0 + b) * C + c] += g;
                }
            }
        }
    });
}

TensorPtr upsample2x_nn(const TensorPtr& x, int H, int W) {
    if (x->ndim() != 3) throw DimensionError("upsample2x_nn: input must be [H,W,C]");
    const int H2 = x->shape[0], W2 = x->shape[1], C = x->shape[2];
    if ((H + 1) / 2 != H2 || (W + 1) / 2 != W2) {
        throw DimensionError("upsample2x_nn: target extents do not halve to input extents");
    }
    std::vector<double> y(static_cast<std::size_t>(H) * W * C);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c)
                y[(i * W + j) * C + c] = x->data[((i / 2) * W2 + j / 2) * C + c];
    return make_node("upsample2x_nn", {H, W, C}, std::move(y), {x}, [H, W, C, W2](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int c = 0; c < C; ++c)
                    x.grad[((i / 2) * W2 + j / 2) * C + c] += self.grad[(i * W + j) * C + c];
    });
}

// ---- batch normalization --------------------------------------------------

namespace {
void check_bn_args(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta) {
    if (x->ndim() < 1) throw DimensionError("batch_norm: input needs a channel axis");
    const int C = x->shape.back();
    if (gamma->ndim() != 1 || gamma->shape[0] != C || beta->ndim() != 1 || beta->shape[0] != C) {
        throw DimensionError("batch_norm: gamma/beta must be [C] with C=" + std::to_string(C));
    }
}
}  // namespace

TensorPtr batch_norm_train(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps, std::vector<double>* batch_mean,
                           std::vector<double>* batch_var) {
    check_bn_args(x, gamma, beta);
    if (eps <= 0) throw ConfigError("batch_norm: epsilon must be positive");
    const int C = x->shape.back();
    const std::size_t total = x->data.size();
    const std::size_t n_per_c = total / C;

    std::vector<double> mu(C, 0.0), var(C, 0.0);
    for (std::size_t i = 0; i < total; ++i) mu[i % C] += x->data[i];
    for (auto& v : mu) v /= static_cast<double>(n_per_c);
    for (std::size_t i = 0; i < total; ++i) {
        const double d = x->data[i] - mu[i % C];
        var[i % C] += d * d;
    }
    for (auto& v : var) v /= static_cast<double>(n_per_c);
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;

    std::vector<double> inv_s(C);
    for (int c = 0; c < C; ++c) inv_s[c] = 1.0 / std::sqrt(var[c] + eps);

    std::vector<double> y(total);
    for (std::size_t i = 0; i < total; ++i) {
        const int c = static_cast<int>(i % C);
        y[i] = gamma->data[c] * (x->data[i] - mu[c]) * inv_s[c] + beta->data[c];
    }
    return make_node("batch_norm_train", x->shape, std::move(y), {x, gamma, beta},
                     [C, n_per_c, mu = std::move(mu), inv_s = std::move(inv_s)](Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& gamma = *self.parents[1];
        Tensor& beta = *self.parents[2];
        const std::size_t total = x.data.size();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t i = 0; i < total; ++i) {
            const int c = static_cast<int>(i % C);
            const double xhat = (x.data[i] - mu[c]) * inv_s[c];
            sum_dy[c] += self.grad[i];
            sum_dy_xhat[c] += self.grad[i] * xhat;
        }
        if (gamma.requires_grad) {
            gamma.ensure_grad();
            for (int c = 0; c < C; ++c) gamma.grad[c] += sum_dy_xhat[c];
        }
        if (beta.requires_grad) {
            beta.ensure_grad();
            for (int c = 0; c < C; ++c) beta.grad[c] += sum_dy[c];
        }
        if (x.requires_grad) {
            x.ensure_grad();
            const double inv_n = 1.0 / static_cast<double>(n_per_c);
            for (std::size_t i = 0; i < total; ++i) {
                const int c = static_cast<int>(i % C);
                const double xhat = (x.data[i] - mu[c]) * inv_s[c];
                x.grad[i] += gamma.data[c] * inv_s[c] *
                             (self.grad[i] - inv_n * sum_dy[c] - xhat * inv_n * sum_dy_xhat[c]);
            }
        }
    });
}

TensorPtr batch_norm_eval(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          const std::vector<double>& mean, const std::vector<double>& var,
                          double eps) {
    check_bn_args(x, gamma, beta);
    if (eps <= 0) throw ConfigError("batch_norm: epsilon must be positive");
    const int C = x->shape.back();
    if (static_cast<int>(mean.size()) != C || static_cast<int>(var.size()) != C) {
        throw DimensionError("batch_norm: running statistics must be [C]");
    }
    std::vector<double> inv_s(C);
    for (int c = 0; c < C; ++c) {
        if (var[c] < 0) throw NumericError("batch_norm: negative running variance");
        inv_s[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    const std::size_t total = x->data.size();
    std::vector<double> y(total);
    for (std::size_t i = 0; i < total; ++i) {
        const int c = static_cast<int>(i % C);
        y[i] = gamma->data[c] * (x->data[i] - mean[c]) * inv_s[c] + beta->data[c];
    }
    return make_node("batch_norm_eval", x->shape, std::move(y), {x, gamma, beta},
                     [C, mean, inv_s = std::move(inv_s)](Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& gamma = *self.parents[1];
        Tensor& beta = *self.parents[2];
        const std::size_t total = x.data.size();
        if (gamma.requires_grad) {
            gamma.ensure_grad();
            for (std::size_t i = 0; i < total; ++i) {
                const int c = static_cast<int>(i % C);
                gamma.grad[c] += self.grad[i] * (x.data[i] - mean[c]) * inv_s[c];
            }
        }
        if (beta.requires_grad) {
            beta.ensure_grad();
            for (std::size_t i = 0; i < total; ++i) beta.grad[i % C] += self.grad[i];
        }
        if (x.requires_grad) {
            x.ensure_grad();
            for (std::size_t i = 0; i < total; ++i) {
                const int c = static_cast<int>(i % C);
                x.grad[i] += self.grad[i] * gamma.data[c] * inv_s[c];
            }
        }
    });
}

// ---- reductions to scalar ------------------------------------------------

TensorPtr sum_all(const TensorPtr& x) {
    double acc = 0.0;
    for (double v : x->data) acc += v;
    return make_node("sum_all", {1}, {acc}, {x}, [](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (auto& g : x.grad) g += self.grad[0];
    });
}

TensorPtr dot_const(const TensorPtr& x, std::vector<double> w) {
    if (w.size() != x->data.size()) throw DimensionError("dot_const: weight length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += x->data[i] * w[i];
    return make_node("dot_const", {1}, {acc}, {x}, [w = std::move(w)](Tensor& self) {
        Tensor& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        for (std::size_t i = 0; i < w.size(); ++i) x.grad[i] += self.grad[0] * w[i];
    });
}

}  // namespace msse
