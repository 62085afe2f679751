#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "msse/layers.hpp"
#include "msse/rng.hpp"
#include "msse/tensor.hpp"

namespace msse::model {

// Architecture wirings: the reference network plus the four reduced forms
// used by the ablation runner.
enum class Variant { full, tim_only, avgpool_instead_of_sd, uniform_3x3, no_se };

Variant variant_from_string(const std::string& name);
std::string variant_name(Variant v);
// Compact labels used in the ablation CSV: full, tim, wo_sd, wo_pc, wo_se.
std::string variant_short_name(Variant v);
const std::vector<Variant>& all_variants();

struct ModelConfig {
    int n_mfcc = 39;
    int tff_filters_per_path = 39;
    std::vector<std::pair<int, int>> tff_kernels = {{9, 1}, {1, 11}, {3, 3}};
    double tff_dropout = 0.2;
    int se_ratio = 3;
    int n_tab = 10;
    int tab_filters = 39;
    int tab_kernel = 2;
    double tab_dropout = 0.1;
    int n_classes = 6;
    Variant variant = Variant::full;

    void validate() const;
    bool uses_tff() const { return variant != Variant::tim_only; }
    bool uses_se() const { return uses_tff() && variant != Variant::no_se; }
    std::vector<std::pair<int, int>> effective_tff_kernels() const;
    int concat_width() const;  // channels after the parallel paths are concatenated
    int fused_width() const;   // width of the sequence handed to the temporal stack

    nlohmann::json to_json() const;
    // Starts from defaults and overrides the keys present in j; unknown keys
    // are a configuration error.
    static ModelConfig from_json(const nlohmann::json& j);
};

// Frames any one output frame of a causal temporal stack can see. Each
// block chains two convolutions at the same dilation, hence the factor 2:
// 1 + 2 * sum_j (k-1) * 2^(j-1).
std::int64_t receptive_field(const ModelConfig& cfg);

// Closed-form learnable parameter count (excludes batch-norm running
// statistics); asserted against enumeration in the tests.
std::int64_t param_count(const ModelConfig& cfg);

struct TffPath {
    TensorPtr kernel;  // [kh x kw x 1 x F]
    TensorPtr bias;    // [F]
    layers::BatchNormParams bn;
};

struct SubBlock {
    TensorPtr kernel;  // [k x C x C]
    layers::BatchNormParams bn;
};

struct Tab {
    SubBlock sb1;
    SubBlock sb2;
};

struct TffOut {
    TensorPtr fused;     // [T x fused_width]
    TensorPtr pre_skip;  // [T x concat_width]: gated and frequency-pooled, before the raw concat
};

struct TimOut {
    TensorPtr g_drf;            // [tab_filters]
    std::vector<TensorPtr> g;   // pooled bidirectional features per depth
};

struct ForwardOut {
    TensorPtr probs;  // [n_classes]
    TensorPtr g_drf;  // [tab_filters]
};

class Model {
public:
    ModelConfig cfg;
    std::vector<TffPath> tff_paths;  // empty for tim_only
    layers::SeParams se;             // empty unless cfg.uses_se()
    TensorPtr input_proj;            // [1 x fused_width x tab_filters], shared by both directions
    std::vector<Tab> fwd_tabs;
    std::vector<Tab> bwd_tabs;
    TensorPtr w_drf;  // [n_tab] fusion weights
    TensorPtr cls_w;  // [n_classes x tab_filters]
    TensorPtr cls_b;  // [n_classes]
    bool trained = false;

    static Model init(const ModelConfig& cfg, Rng& rng);

    // Parallel-kernel paths -> concat -> channel gating -> frequency pool ->
    // raw-feature concat. Input is [n_mfcc x T x 1].
    TffOut tff_forward(const TensorPtr& mfcc, Rng& rng, bool training);

    // One gated temporal block at the given dilation.
    TensorPtr tab_forward(const TensorPtr& f, Tab& tab, int dilation, Rng& rng, bool training);

    // Shared 1x1 projection into both directions, n_tab blocks each,
    // per-depth pooled sums, learned weighted fusion.
    TimOut tim_forward(const TensorPtr& x, Rng& rng, bool training);

    ForwardOut forward(const TensorPtr& mfcc, Rng& rng, bool training);

    // Learnable tensors in a fixed, documented order.
    std::vector<std::pair<std::string, TensorPtr>> named_params();
    // Batch-norm blocks by name, for running-statistics serialization.
    std::vector<std::pair<std::string, layers::BatchNormParams*>> named_bn();
};

// Constructs the wiring selected by cfg.variant (validated).
Model build_variant(const ModelConfig& cfg, Rng& rng);

// Checkpoint file: magic, version, JSON header {config, trained, tensor
// manifest} and a little-endian 32-bit float blob. Round trips bit-exactly.
void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

}  // namespace msse::model
