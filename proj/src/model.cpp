#include "msse/model.hpp"

#include <cmath>

namespace msse::model {

Variant variant_from_string(const std::string& name) {
    if (name == "full") return Variant::full;
    if (name == "tim_only") return Variant::tim_only;
    if (name == "avgpool_instead_of_sd") return Variant::avgpool_instead_of_sd;
    if (name == "uniform_3x3") return Variant::uniform_3x3;
    if (name == "no_se") return Variant::no_se;
    throw ConfigError("unknown model variant '" + name +
                      "' (expected full, tim_only, avgpool_instead_of_sd, uniform_3x3, no_se)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::tim_only: return "tim_only";
        case Variant::avgpool_instead_of_sd: return "avgpool_instead_of_sd";
        case Variant::uniform_3x3: return "uniform_3x3";
        case Variant::no_se: return "no_se";
    }
    throw ConfigError("unknown model variant");
}

std::string variant_short_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::tim_only: return "tim";
        case Variant::avgpool_instead_of_sd: return "wo_sd";
        case Variant::uniform_3x3: return "wo_pc";
        case Variant::no_se: return "wo_se";
    }
    throw ConfigError("unknown model variant");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::full, Variant::tim_only,
                                           Variant::avgpool_instead_of_sd, Variant::uniform_3x3,
                                           Variant::no_se};
    return v;
}

void ModelConfig::validate() const {
    if (n_mfcc < 1) throw ConfigError("n_mfcc must be positive");
    if (tff_filters_per_path < 1) throw ConfigError("tff_filters_per_path must be positive");
    if (tff_kernels.empty()) throw ConfigError("at least one tff kernel path is required");
    for (const auto& [kh, kw] : tff_kernels) {
        if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0) {
            throw ConfigError("tff kernel extents must be odd and positive, got " +
                              std::to_string(kh) + "x" + std::to_string(kw));
        }
    }
    if (tff_dropout < 0 || tff_dropout >= 1) throw ConfigError("tff_dropout must lie in [0, 1)");
    if (tab_dropout < 0 || tab_dropout >= 1) throw ConfigError("tab_dropout must lie in [0, 1)");
    if (se_ratio < 1) throw ConfigError("se_ratio must be positive");
    if (uses_se()) {
        const int c = concat_width();
        if (c % se_ratio != 0 || c / se_ratio < 1) {
            throw ConfigError("concatenated channel count " + std::to_string(c) +
                              " must be divisible by se_ratio " + std::to_string(se_ratio));
        }
    }
    if (n_tab < 1 || n_tab > 30) throw ConfigError("n_tab must lie in [1, 30]");
    if (tab_filters < 1) throw ConfigError("tab_filters must be positive");
    if (tab_kernel < 1) throw ConfigError("tab_kernel must be positive");
    if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
}

std::vector<std::pair<int, int>> ModelConfig::effective_tff_kernels() const {
    if (variant == Variant::uniform_3x3) {
        return std::vector<std::pair<int, int>>(tff_kernels.size(), {3, 3});
    }
    return tff_kernels;
}

int ModelConfig::concat_width() const {
    return static_cast<int>(tff_kernels.size()) * tff_filters_per_path;
}

int ModelConfig::fused_width() const {
    return uses_tff() ? concat_width() + n_mfcc : n_mfcc;
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json k = nlohmann::json::array();
    for (const auto& [kh, kw] : tff_kernels) k.push_back({kh, kw});
    return nlohmann::json{{"n_mfcc", n_mfcc},
                          {"tff_filters_per_path", tff_filters_per_path},
                          {"tff_kernels", k},
                          {"tff_dropout", tff_dropout},
                          {"se_ratio", se_ratio},
                          {"n_tab", n_tab},
                          {"tab_filters", tab_filters},
                          {"tab_kernel", tab_kernel},
                          {"tab_dropout", tab_dropout},
                          {"n_classes", n_classes},
                          {"variant", variant_name(variant)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "n_mfcc") cfg.n_mfcc = value.get<int>();
        else if (key == "tff_filters_per_path") cfg.tff_filters_per_path = value.get<int>();
        else if (key == "tff_kernels") {
            cfg.tff_kernels.clear();
            for (const auto& pair : value) {
                if (!pair.is_array() || pair.size() != 2) {
                    throw ConfigError("tff_kernels entries must be [kh, kw] pairs");
                }
                cfg.tff_kernels.emplace_back(pair[0].get<int>(), pair[1].get<int>());
            }
        } else if (key == "tff_dropout") cfg.tff_dropout = value.get<double>();
        else if (key == "se_ratio") cfg.se_ratio = value.get<int>();
        else if (key == "n_tab") cfg.n_tab = value.get<int>();
        else if (key == "tab_filters") cfg.tab_filters = value.get<int>();
        else if (key == "tab_kernel") cfg.tab_kernel = value.get<int>();
        else if (key == "tab_dropout") cfg.tab_dropout = value.get<double>();
        else if (key == "n_classes") cfg.n_classes = value.get<int>();
        else if (key == "variant") cfg.variant = variant_from_string(value.get<std::string>());
        else throw ConfigError("unknown model config key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::int64_t receptive_field(const ModelConfig& cfg) {
    std::int64_t rf = 1;
    for (int j = 1; j <= cfg.n_tab; ++j) {
        rf += 2LL * (cfg.tab_kernel - 1) * (1LL << (j - 1));
    }
    return rf;
}

std::int64_t param_count(const ModelConfig& cfg) {
    std::int64_t n = 0;
    const std::int64_t f = cfg.tff_filters_per_path;
    if (cfg.uses_tff()) {
        for (const auto& [kh, kw] : cfg.effective_tff_kernels()) {
            n += static_cast<std::int64_t>(kh) * kw * 1 * f;  // conv kernel
            n += f;                                           // conv bias
            n += 2 * f;                                       // bn gamma + beta
        }
        if (cfg.uses_se()) {
            const std::int64_t c = cfg.concat_width();
            n += 2 * c * (c / cfg.se_ratio);  // two bias-free projections
        }
    }
    const std::int64_t tf = cfg.tab_filters;
    n += static_cast<std::int64_t>(cfg.fused_width()) * tf;  // shared 1x1 projection
    // two directions, n_tab blocks, two sub-blocks of conv + bn each
    n += 2LL * cfg.n_tab * 2 * (static_cast<std::int64_t>(cfg.tab_kernel) * tf * tf + 2 * tf);
    n += cfg.n_tab;                                       // fusion weights
    n += static_cast<std::int64_t>(cfg.n_classes) * tf;   // classifier weight
    n += cfg.n_classes;                                   // classifier bias
    return n;
}

Model Model::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    if (cfg.uses_tff()) {
        for (const auto& [kh, kw] : cfg.effective_tff_kernels()) {
            TffPath path;
            path.kernel = Tensor::randn({kh, kw, 1, cfg.tff_filters_per_path}, rng,
                                        std::sqrt(2.0 / (kh * kw)), true);
            path.bias = Tensor::full({cfg.tff_filters_per_path}, 0.0, true);
            path.bn = layers::BatchNormParams::init(cfg.tff_filters_per_path);
            m.tff_paths.push_back(std::move(path));
        }
        if (cfg.uses_se()) {
            m.se = layers::SeParams::init(cfg.concat_width(), cfg.se_ratio, rng);
        }
    }
    const int cin = cfg.fused_width();
    m.input_proj = Tensor::randn({1, cin, cfg.tab_filters}, rng, std::sqrt(2.0 / cin), true);
    auto make_tab = [&]() {
        Tab t;
        const double stddev = std::sqrt(2.0 / (cfg.tab_kernel * cfg.tab_filters));
        t.sb1.kernel = Tensor::randn({cfg.tab_kernel, cfg.tab_filters, cfg.tab_filters}, rng,
                                     stddev, true);
        t.sb1.bn = layers::BatchNormParams::init(cfg.tab_filters);
        t.sb2.kernel = Tensor::randn({cfg.tab_kernel, cfg.tab_filters, cfg.tab_filters}, rng,
                                     stddev, true);
        t.sb2.bn = layers::BatchNormParams::init(cfg.tab_filters);
        return t;
    };
    for (int j = 0; j < cfg.n_tab; ++j) m.fwd_tabs.push_back(make_tab());
    for (int j = 0; j < cfg.n_tab; ++j) m.bwd_tabs.push_back(make_tab());
    m.w_drf = Tensor::full({cfg.n_tab}, 1.0 / cfg.n_tab, true);
    m.cls_w = Tensor::randn({cfg.n_classes, cfg.tab_filters}, rng,
                            std::sqrt(1.0 / cfg.tab_filters), true);
    m.cls_b = Tensor::full({cfg.n_classes}, 0.0, true);
    return m;
}

Model build_variant(const ModelConfig& cfg, Rng& rng) { return Model::init(cfg, rng); }

TffOut Model::tff_forward(const TensorPtr& mfcc, Rng& rng, bool training) {
    if (!cfg.uses_tff()) {
        throw ConfigError("variant '" + variant_name(cfg.variant) + "' has no tff stage");
    }
    if (mfcc->ndim() != 3 || mfcc->shape[0] != cfg.n_mfcc || mfcc->shape[2] != 1) {
        throw DimensionError("tff_forward expects [" + std::to_string(cfg.n_mfcc) +
                             " x T x 1], got " + shape_str(mfcc->shape));
    }
    const int T = mfcc->shape[1];
    std::vector<TensorPtr> path_outs;
    for (auto& path : tff_paths) {
        auto y = conv2d_same(mfcc, path.kernel, path.bias);
        y = layers::batch_norm(y, path.bn, training);
        y = relu(y);
        if (cfg.variant == Variant::avgpool_instead_of_sd) {
            y = upsample2x_nn(avgpool2x2(y), cfg.n_mfcc, T);
        } else {
            y = layers::spatial_dropout(y, layers::DropoutSpec(cfg.tff_dropout), rng, training);
        }
        path_outs.push_back(y);
    }
    auto cat = concat_last(path_outs);
    auto gated = cfg.uses_se() ? layers::se_forward(cat, se).first : cat;
    auto pooled = mean_axis0(gated);  // collapse the coefficient axis -> [T x concat_width]
    auto skip = transpose2d(reshape(mfcc, {cfg.n_mfcc, T}));
    return {concat_last({pooled, skip}), pooled};
}

TensorPtr Model::tab_forward(const TensorPtr& f, Tab& tab, int dilation, Rng& rng, bool training) {
    auto sub = [&](const TensorPtr& in, SubBlock& sb) {
        auto h = conv1d_causal_dilated(in, sb.kernel, dilation);
        h = layers::batch_norm(h, sb.bn, training);
        h = relu(h);
        return layers::spatial_dropout(h, layers::DropoutSpec(cfg.tab_dropout), rng, training);
    };
    auto a = sigmoid(sub(sub(f, tab.sb1), tab.sb2));
    return mul(a, f);
}

TimOut Model::tim_forward(const TensorPtr& x, Rng& rng, bool training) {
    if (x->ndim() != 2 || x->shape[1] != cfg.fused_width()) {
        throw DimensionError("tim_forward expects [T x " + std::to_string(cfg.fused_width()) +
                             "], got " + shape_str(x->shape));
    }
    auto f_fwd = conv1d_causal_dilated(x, input_proj, 1);
    auto f_bwd = conv1d_causal_dilated(reverse_axis0(x), input_proj, 1);
    TimOut out;
    for (int j = 1; j <= cfg.n_tab; ++j) {
        const int dilation = 1 << (j - 1);
        f_fwd = tab_forward(f_fwd, fwd_tabs[j - 1], dilation, rng, training);
        f_bwd = tab_forward(f_bwd, bwd_tabs[j - 1], dilation, rng, training);
        out.g.push_back(layers::global_temporal_pool(add(f_fwd, f_bwd)));
    }
    out.g_drf = scale_by_weight(out.g[0], w_drf, 0);
    for (int j = 1; j < cfg.n_tab; ++j) {
        out.g_drf = add(out.g_drf, scale_by_weight(out.g[j], w_drf, j));
    }
    return out;
}

ForwardOut Model::forward(const TensorPtr& mfcc, Rng& rng, bool training) {
    TensorPtr x;
    if (cfg.uses_tff()) {
        x = tff_forward(mfcc, rng, training).fused;
    } else {
        if (mfcc->ndim() != 3 || mfcc->shape[0] != cfg.n_mfcc || mfcc->shape[2] != 1) {
            throw DimensionError("forward expects [" + std::to_string(cfg.n_mfcc) +
                                 " x T x 1], got " + shape_str(mfcc->shape));
        }
        x = transpose2d(reshape(mfcc, {cfg.n_mfcc, mfcc->shape[1]}));
    }
    auto tim = tim_forward(x, rng, training);
    auto probs = layers::dense_softmax(tim.g_drf, cls_w, cls_b);
    return {probs, tim.g_drf};
}

std::vector<std::pair<std::string, TensorPtr>> Model::named_params() {
    std::vector<std::pair<std::string, TensorPtr>> out;
    for (std::size_t i = 0; i < tff_paths.size(); ++i) {
        const std::string base = "tff.path" + std::to_string(i);
        out.emplace_back(base + ".kernel", tff_paths[i].kernel);
        out.emplace_back(base + ".bias", tff_paths[i].bias);
        out.emplace_back(base + ".bn.gamma", tff_paths[i].bn.gamma);
        out.emplace_back(base + ".bn.beta", tff_paths[i].bn.beta);
    }
    if (cfg.uses_se()) {
        out.emplace_back("se.w1", se.w1);
        out.emplace_back("se.w2", se.w2);
    }
    out.emplace_back("input_proj", input_proj);
    auto add_tabs = [&](const std::string& dir, std::vector<Tab>& tabs) {
        for (std::size_t j = 0; j < tabs.size(); ++j) {
            const std::string base = dir + ".tab" + std::to_string(j);
            out.emplace_back(base + ".sb1.kernel", tabs[j].sb1.kernel);
            out.emplace_back(base + ".sb1.bn.gamma", tabs[j].sb1.bn.gamma);
            out.emplace_back(base + ".sb1.bn.beta", tabs[j].sb1.bn.beta);
            out.emplace_back(base + ".sb2.kernel", tabs[j].sb2.kernel);
            out.emplace_back(base + ".sb2.bn.gamma", tabs[j].sb2.bn.gamma);
            out.emplace_back(base + ".sb2.bn.beta", tabs[j].sb2.bn.beta);
        }
    };
    add_tabs("fwd", fwd_tabs);
    add_tabs("bwd", bwd_tabs);
    out.emplace_back("w_drf", w_drf);
    out.emplace_back("cls.w", cls_w);
    out.emplace_back("cls.b", cls_b);
    return out;
}

std::vector<std::pair<std::string, layers::BatchNormParams*>> Model::named_bn() {
    std::vector<std::pair<std::string, layers::BatchNormParams*>> out;
    for (std::size_t i = 0; i < tff_paths.size(); ++i) {
        out.emplace_back("tff.path" + std::to_string(i) + ".bn", &tff_paths[i].bn);
    }
    auto add_tabs = [&](const std::string& dir, std::vector<Tab>& tabs) {
        for (std::size_t j = 0; j < tabs.size(); ++j) {
            const std::string base = dir + ".tab" + std::to_string(j);
            out.emplace_back(base + ".sb1.bn", &tabs[j].sb1.bn);
            out.emplace_back(base + ".sb2.bn", &tabs[j].sb2.bn);
        }
    };
    add_tabs("fwd", fwd_tabs);
    add_tabs("bwd", bwd_tabs);
    return out;
}

}  // namespace msse::model
