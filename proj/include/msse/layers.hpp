#pragma once

#include <utility>
#include <vector>

#include "msse/rng.hpp"
#include "msse/tensor.hpp"

namespace msse::layers {

// Squeeze-and-excitation bottleneck. Both projections are bias-free; the
// channel count is w1's second extent, the reduction ratio C / hidden.
struct SeParams {
    TensorPtr w1;  // [(C/r) x C]
    TensorPtr w2;  // [C x (C/r)]
    int ratio = 4;

    int channels() const { return w1 ? w1->shape[1] : 0; }
    static SeParams init(int channels, int ratio, Rng& rng);
};

// Returns (gated map, per-channel gates). Input is any tensor whose last
// axis is channels; the squeeze averages over every other axis.
std::pair<TensorPtr, TensorPtr> se_forward(const TensorPtr& u, const SeParams& p);

// Channel-wise dropout: a channel is zeroed whole or kept whole.
struct DropoutSpec {
    double rate = 0.0;

    explicit DropoutSpec(double r);
};

TensorPtr spatial_dropout(const TensorPtr& x, const DropoutSpec& spec, Rng& rng, bool training);

struct BatchNormParams {
    TensorPtr gamma;  // learnable [C]
    TensorPtr beta;   // learnable [C]
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;
    double epsilon = 1e-5;

    int channels() const { return gamma ? gamma->shape[0] : 0; }
    static BatchNormParams init(int channels);
};

// Training mode normalizes by batch statistics and folds them into the
// running averages; eval mode normalizes by the running averages.
TensorPtr batch_norm(const TensorPtr& x, BatchNormParams& p, bool training);

// Arithmetic mean over the time axis of [T x C].
TensorPtr global_temporal_pool(const TensorPtr& x);

// softmax(W x + b) for a single feature vector x[C].
TensorPtr dense_softmax(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

}  // namespace msse::layers
