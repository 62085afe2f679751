#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "msse/common.hpp"
#include "msse/rng.hpp"

namespace msse {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor with reverse-mode differentiation. Ops build a
// DAG: each result node keeps its inputs alive through `parents` and knows
// how to push its gradient into them. Values are stored as doubles; every
// op validates that its output is finite.
//
// Tensors are immutable once produced by an op. Gradient accumulation is
// additive across fan-out; callers zero grads between optimizer steps.
struct Tensor : std::enable_shared_from_this<Tensor> {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized like data once touched by backward

    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    static TensorPtr create(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr from_data(std::vector<int> shape, std::vector<double> data,
                               bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
    static TensorPtr randn(std::vector<int> shape, Rng& rng, double stddev,
                           bool requires_grad = false);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& at(int i) { return data[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double& at(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }
    double at(int i) const { return data[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double at(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
    }

    void ensure_grad();
    void zero_grad();
};

// Disables graph construction while alive (evaluation passes, finite
// differences). Nested guards restore the previous mode.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

bool grad_enabled();

// Reverse-mode sweep from a scalar root. Seeds root.grad with 1 and runs
// every node's backward_fn in reverse topological order.
void backward(const TensorPtr& root);

// ---- differentiable ops ------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

// 2-D cross-correlation over x[H,W,Cin] with odd-extent kernels and
// symmetric zero padding; output keeps H and W. bias may be null.
TensorPtr conv2d_same(const TensorPtr& x, const TensorPtr& kernels, const TensorPtr& bias);

// 1-D causal convolution over x[T,Cin]; output at t sees inputs at <= t,
// with taps spaced `dilation` frames apart.
TensorPtr conv1d_causal_dilated(const TensorPtr& x, const TensorPtr& kernels, int dilation);

TensorPtr relu(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);

TensorPtr reshape(const TensorPtr& x, std::vector<int> new_shape);
TensorPtr transpose2d(const TensorPtr& x);   // [A,B] -> [B,A]
TensorPtr reverse_axis0(const TensorPtr& x);
TensorPtr mean_axis0(const TensorPtr& x);    // [A, rest...] -> [rest...]
TensorPtr concat_last(const std::vector<TensorPtr>& parts);

// y[..., c] = u[..., c] * s[c]
TensorPtr scale_channels(const TensorPtr& u, const TensorPtr& s);
// y[..., c] = x[..., c] * mask[c]; mask is plain data, not a graph node
TensorPtr channel_mask_scale(const TensorPtr& x, std::vector<double> mask);
// y = w[idx] * x with gradients into both x and w
TensorPtr scale_by_weight(const TensorPtr& x, const TensorPtr& w, int idx);

TensorPtr softmax(const TensorPtr& logits);  // 1-D
// -log(max(probs[true_class], clamp)); the cross-entropy core
TensorPtr neg_log_prob(const TensorPtr& probs, int true_class, double clamp = 1e-12);

// Per-channel batch normalization over every non-channel axis. The training
// form normalizes by batch statistics (handed back through the out
// parameters so the caller can update running averages); the eval form
// normalizes by the supplied running statistics.
TensorPtr batch_norm_train(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                           double eps, std::vector<double>* batch_mean,
                           std::vector<double>* batch_var);
TensorPtr batch_norm_eval(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          const std::vector<double>& mean, const std::vector<double>& var,
                          double eps);

TensorPtr avgpool2x2(const TensorPtr& x);                  // [H,W,C] -> [ceil(H/2),ceil(W/2),C]
TensorPtr upsample2x_nn(const TensorPtr& x, int H, int W); // nearest-neighbor back to [H,W,C]

TensorPtr sum_all(const TensorPtr& x);                         // scalar
TensorPtr dot_const(const TensorPtr& x, std::vector<double> w);  // scalar

}  // namespace msse
