#include "msse/layers.hpp"

#include <cmath>
#include <string>

namespace msse::layers {

SeParams SeParams::init(int channels, int ratio, Rng& rng) {
    if (channels <= 0) throw ConfigError("se: channel count must be positive");
    if (ratio <= 0) throw ConfigError("se: reduction ratio must be positive");
    if (channels % ratio != 0) {
        throw ConfigError("se: channels (" + std::to_string(channels) +
                          ") must be divisible by the reduction ratio (" + std::to_string(ratio) +
                          ")");
    }
    const int hidden = channels / ratio;
    SeParams p;
    p.ratio = ratio;
    p.w1 = Tensor::randn({hidden, channels}, rng, std::sqrt(2.0 / channels), true);
    p.w2 = Tensor::randn({channels, hidden}, rng, std::sqrt(2.0 / hidden), true);
    return p;
}

std::pair<TensorPtr, TensorPtr> se_forward(const TensorPtr& u, const SeParams& p) {
    if (u->ndim() < 2) throw DimensionError("se_forward: input needs at least [spatial x C]");
    const int C = u->shape.back();
    if (C != p.channels()) {
        throw DimensionError("se_forward: input has " + std::to_string(C) +
                             " channels but params expect " + std::to_string(p.channels()));
    }
    // squeeze: mean over every non-channel axis
    TensorPtr z = u;
    while (z->ndim() > 1) z = mean_axis0(z);
    auto h = relu(matmul(p.w1, reshape(z, {C, 1})));
    auto s = reshape(sigmoid(matmul(p.w2, h)), {C});
    return {scale_channels(u, s), s};
}

DropoutSpec::DropoutSpec(double r) : rate(r) {
    if (r < 0.0 || r >= 1.0) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(r));
    }
}

TensorPtr spatial_dropout(const TensorPtr& x, const DropoutSpec& spec, Rng& rng, bool training) {
    if (!training || spec.rate == 0.0) return x;
    const int C = x->shape.back();
    const double keep_scale = 1.0 / (1.0 - spec.rate);
    std::vector<double> mask(C);
    for (int c = 0; c < C; ++c) mask[c] = rng.uniform() < spec.rate ? 0.0 : keep_scale;
    return channel_mask_scale(x, std::move(mask));
}

BatchNormParams BatchNormParams::init(int channels) {
    if (channels <= 0) throw ConfigError("batch_norm: channel count must be positive");
    BatchNormParams p;
    p.gamma = Tensor::full({channels}, 1.0, true);
    p.beta = Tensor::full({channels}, 0.0, true);
    p.running_mean.assign(channels, 0.0);
    p.running_var.assign(channels, 1.0);
    return p;
}

TensorPtr batch_norm(const TensorPtr& x, BatchNormParams& p, bool training) {
    if (x->shape.back() != p.channels()) {
        throw DimensionError("batch_norm: input has " + std::to_string(x->shape.back()) +
                             " channels but params expect " + std::to_string(p.channels()));
    }
    if (!training) {
        return batch_norm_eval(x, p.gamma, p.beta, p.running_mean, p.running_var, p.epsilon);
    }
    std::vector<double> mu, var;
    auto y = batch_norm_train(x, p.gamma, p.beta, p.epsilon, &mu, &var);
    for (int c = 0; c < p.channels(); ++c) {
        p.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mu[c];
        p.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * var[c];
    }
    return y;
}

TensorPtr global_temporal_pool(const TensorPtr& x) {
    if (x->ndim() != 2) throw DimensionError("global_temporal_pool: input must be [T x C]");
    if (x->shape[0] < 1) throw DataError("global_temporal_pool: empty time axis");
    return mean_axis0(x);
}

TensorPtr dense_softmax(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    if (x->ndim() != 1) throw DimensionError("dense_softmax: input must be a vector");
    const int C = x->shape[0];
    if (w->ndim() != 2 || w->shape[1] != C) {
        throw DimensionError("dense_softmax: weight " + shape_str(w->shape) +
                             " does not accept a length-" + std::to_string(C) + " input");
    }
    const int K = w->shape[0];
    if (b->ndim() != 1 || b->shape[0] != K) {
        throw DimensionError("dense_softmax: bias must be [" + std::to_string(K) + "]");
    }
    auto logits = add(reshape(matmul(w, reshape(x, {C, 1})), {K}), b);
    return softmax(logits);
}

}  // namespace msse::layers
