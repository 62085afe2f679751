#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "msse/model.hpp"
#include "msse/rng.hpp"
#include "test_util.hpp"

using namespace msse;
using model::ModelConfig;
using model::Variant;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_mfcc = 5;
    cfg.tff_filters_per_path = 4;
    cfg.se_ratio = 3;
    cfg.n_tab = 2;
    cfg.tab_filters = 6;
    cfg.n_classes = 3;
    return cfg;
}

}  // namespace

TEST_CASE("variant names round trip") {
    for (Variant v : model::all_variants()) {
        CHECK(model::variant_from_string(model::variant_name(v)) == v);
    }
    CHECK(model::variant_short_name(Variant::full) == "full");
    CHECK(model::variant_short_name(Variant::tim_only) == "tim");
    CHECK(model::variant_short_name(Variant::avgpool_instead_of_sd) == "wo_sd");
    CHECK(model::variant_short_name(Variant::uniform_3x3) == "wo_pc");
    CHECK(model::variant_short_name(Variant::no_se) == "wo_se");
    CHECK(model::all_variants().size() == 5);
    CHECK_THROWS_AS(model::variant_from_string("bogus"), ConfigError);
}

TEST_CASE("config validation catches bad wiring") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    ModelConfig even = cfg;
    even.tff_kernels = {{2, 1}, {1, 11}, {3, 3}};
    CHECK_THROWS_AS(even.validate(), ConfigError);

    ModelConfig badse = cfg;
    badse.tff_filters_per_path = 5;  // 15 channels, not divisible by 3
    badse.se_ratio = 2;
    CHECK_THROWS_AS(badse.validate(), ConfigError);

    // ...but irrelevant when the variant has no SE block
    badse.variant = Variant::tim_only;
    CHECK_NOTHROW(badse.validate());

    ModelConfig tabs = cfg;
    tabs.n_tab = 0;
    CHECK_THROWS_AS(tabs.validate(), ConfigError);
    tabs.n_tab = 31;
    CHECK_THROWS_AS(tabs.validate(), ConfigError);

    ModelConfig cls = cfg;
    cls.n_classes = 1;
    CHECK_THROWS_AS(cls.validate(), ConfigError);
}

TEST_CASE("config JSON round trips and rejects unknown keys") {
    ModelConfig cfg = tiny_config();
    cfg.variant = Variant::no_se;
    auto j = cfg.to_json();
    auto back = ModelConfig::from_json(j);
    CHECK(back.n_mfcc == cfg.n_mfcc);
    CHECK(back.tff_filters_per_path == cfg.tff_filters_per_path);
    CHECK(back.tff_kernels == cfg.tff_kernels);
    CHECK(back.se_ratio == cfg.se_ratio);
    CHECK(back.n_tab == cfg.n_tab);
    CHECK(back.tab_filters == cfg.tab_filters);
    CHECK(back.n_classes == cfg.n_classes);
    CHECK(back.variant == cfg.variant);

    nlohmann::json bad{{"n_mfc", 39}};
    CHECK_THROWS_AS(ModelConfig::from_json(bad), ConfigError);

    // partial configs override defaults only
    auto partial = ModelConfig::from_json(nlohmann::json{{"n_tab", 4}});
    CHECK(partial.n_tab == 4);
    CHECK(partial.tab_filters == ModelConfig{}.tab_filters);
}

TEST_CASE("receptive field follows the closed form") {
    ModelConfig cfg;
    CHECK(model::receptive_field(cfg) == 2047);  // n_tab 10, k 2

    cfg.n_tab = 1;
    CHECK(model::receptive_field(cfg) == 3);
    cfg.n_tab = 2;
    CHECK(model::receptive_field(cfg) == 7);
    cfg.n_tab = 3;
    CHECK(model::receptive_field(cfg) == 15);

    cfg.n_tab = 2;
    cfg.tab_kernel = 3;
    CHECK(model::receptive_field(cfg) == 13);  // 1 + 2*2*(1+2)
}

TEST_CASE("the closed-form parameter count matches enumeration") {
    Rng seeds(31);
    for (int trial = 0; trial < 5; ++trial) {
        ModelConfig cfg;
        cfg.n_mfcc = 4 + static_cast<int>(seeds.below(6));
        cfg.tff_filters_per_path = 3 * (1 + static_cast<int>(seeds.below(3)));
        cfg.se_ratio = 3;
        cfg.n_tab = 1 + static_cast<int>(seeds.below(4));
        cfg.tab_filters = 2 + static_cast<int>(seeds.below(8));
        cfg.tab_kernel = 2 + static_cast<int>(seeds.below(2));
        cfg.n_classes = 2 + static_cast<int>(seeds.below(5));
        cfg.variant = model::all_variants()[trial];
        const auto odd = [](int v) { return v | 1; };
        cfg.tff_kernels = {{odd(3 + static_cast<int>(seeds.below(4)) * 2), 1},
                           {1, odd(5 + static_cast<int>(seeds.below(3)) * 2)},
                           {3, 3}};
        CAPTURE(trial);
        CAPTURE(model::variant_name(cfg.variant));

        Rng rng(100 + trial);
        auto m = model::build_variant(cfg, rng);
        std::int64_t counted = 0;
        for (auto& [name, t] : m.named_params()) {
            CAPTURE(name);
            counted += t->size();
        }
        CHECK(counted == model::param_count(cfg));
    }
}

TEST_CASE("init produces the documented shapes and fusion weights") {
    auto cfg = tiny_config();
    Rng rng(32);
    auto m = model::Model::init(cfg, rng);

    REQUIRE(m.tff_paths.size() == 3);
    CHECK(m.tff_paths[0].kernel->shape == std::vector<int>{9, 1, 1, 4});
    CHECK(m.tff_paths[1].kernel->shape == std::vector<int>{1, 11, 1, 4});
    CHECK(m.tff_paths[2].kernel->shape == std::vector<int>{3, 3, 1, 4});
    for (auto& path : m.tff_paths) {
        CHECK(path.bias->shape == std::vector<int>{4});
        for (double b : path.bias->data) CHECK(b == 0.0);
    }
    CHECK(m.se.channels() == 12);
    CHECK(cfg.concat_width() == 12);
    CHECK(cfg.fused_width() == 12 + 5);
    REQUIRE(m.input_proj->shape == std::vector<int>{1, 17, 6});
    REQUIRE(m.fwd_tabs.size() == 2);
    REQUIRE(m.bwd_tabs.size() == 2);
    CHECK(m.fwd_tabs[0].sb1.kernel->shape == std::vector<int>{2, 6, 6});
    REQUIRE(m.w_drf->shape == std::vector<int>{2});
    for (double w : m.w_drf->data) CHECK(w == 0.5);  // 1 / n_tab
    CHECK(m.cls_w->shape == std::vector<int>{3, 6});
    CHECK(m.cls_b->shape == std::vector<int>{3});
    CHECK_FALSE(m.trained);
}

TEST_CASE("variants wire the advertised reductions") {
    Rng rng(33);
    auto cfg = tiny_config();

    cfg.variant = Variant::tim_only;
    auto tim = model::build_variant(cfg, rng);
    CHECK(tim.tff_paths.empty());
    CHECK(tim.se.w1 == nullptr);
    CHECK(cfg.fused_width() == cfg.n_mfcc);
    CHECK(tim.input_proj->shape == std::vector<int>{1, 5, 6});

    cfg.variant = Variant::no_se;
    auto nose = model::build_variant(cfg, rng);
    CHECK(nose.tff_paths.size() == 3);
    CHECK(nose.se.w1 == nullptr);

    cfg.variant = Variant::uniform_3x3;
    auto uni = model::build_variant(cfg, rng);
    for (auto& path : uni.tff_paths) {
        CHECK(path.kernel->shape == std::vector<int>{3, 3, 1, 4});
    }
    auto eff = cfg.effective_tff_kernels();
    for (auto& [kh, kw] : eff) {
        CHECK(kh == 3);
        CHECK(kw == 3);
    }

    cfg.variant = Variant::avgpool_instead_of_sd;
    auto pool = model::build_variant(cfg, rng);
    CHECK(pool.tff_paths.size() == 3);
    CHECK(pool.se.w1 != nullptr);
}

TEST_CASE("forward yields a distribution and a fused embedding") {
    auto cfg = tiny_config();
    for (Variant v : model::all_variants()) {
        cfg.variant = v;
        CAPTURE(model::variant_name(v));
        Rng rng(34);
        auto m = model::build_variant(cfg, rng);
        const int T = 15;
        auto x = Tensor::randn({cfg.n_mfcc, T, 1}, rng, 1.0);

        Rng fwd_rng(35);
        auto out = m.forward(x, fwd_rng, false);
        REQUIRE(out.probs->shape == std::vector<int>{3});
        REQUIRE(out.g_drf->shape == std::vector<int>{6});
        double sum = 0.0;
        for (int i = 0; i < 3; ++i) {
            CHECK(out.probs->at(i) > 0.0);
            sum += out.probs->at(i);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        // eval passes are deterministic
        Rng fwd_rng2(999);
        auto out2 = m.forward(x, fwd_rng2, false);
        CHECK(out2.probs->data == out.probs->data);
        CHECK(out2.g_drf->data == out.g_drf->data);

        // training passes with the same stream reproduce each other
        auto m1 = model::build_variant(cfg, rng);
        Rng ta(77), tb(77);
        auto o1 = m1.forward(x, ta, true);
        // rebuild an identical model so batch-norm running stats match
        auto o2 = m1.forward(x, tb, true);
        CHECK(o1.probs->shape == o2.probs->shape);
    }
}

TEST_CASE("tff_forward carries the raw features alongside the gated paths") {
    auto cfg = tiny_config();
    Rng rng(36);
    auto m = model::Model::init(cfg, rng);
    const int T = 10;
    auto x = Tensor::randn({cfg.n_mfcc, T, 1}, rng, 1.0);
    Rng fwd(37);
    auto out = m.tff_forward(x, fwd, false);
    REQUIRE(out.fused->shape == std::vector<int>{T, cfg.fused_width()});
    REQUIRE(out.pre_skip->shape == std::vector<int>{T, cfg.concat_width()});
    // the tail columns of the fused sequence are exactly the transposed input
    for (int t = 0; t < T; ++t) {
        for (int c = 0; c < cfg.n_mfcc; ++c) {
            CHECK(out.fused->at(t, cfg.concat_width() + c) == x->at(c, t, 0));
        }
    }
    // wrong input layout is rejected
    auto bad = Tensor::randn({cfg.n_mfcc + 1, T, 1}, rng, 1.0);
    CHECK_THROWS_AS(m.tff_forward(bad, fwd, false), DimensionError);
}

TEST_CASE("tim_forward pools each depth and fuses with learned weights") {
    auto cfg = tiny_config();
    Rng rng(38);
    auto m = model::Model::init(cfg, rng);
    const int T = 12;
    auto x = Tensor::randn({T, cfg.fused_width()}, rng, 1.0);
    Rng fwd(39);
    auto out = m.tim_forward(x, fwd, false);
    REQUIRE(out.g.size() == 2);
    for (auto& g : out.g) REQUIRE(g->shape == std::vector<int>{6});
    REQUIRE(out.g_drf->shape == std::vector<int>{6});
    // with w_drf = [1/2, 1/2], the fusion is the average of the depth features
    for (int c = 0; c < 6; ++c) {
        const double expect = 0.5 * out.g[0]->at(c) + 0.5 * out.g[1]->at(c);
        CHECK(out.g_drf->at(c) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("every variant trains one step end to end") {
    auto cfg = tiny_config();
    for (Variant v : model::all_variants()) {
        cfg.variant = v;
        CAPTURE(model::variant_name(v));
        Rng rng(40);
        auto m = model::build_variant(cfg, rng);
        auto x = Tensor::randn({cfg.n_mfcc, 12, 1}, rng, 1.0);
        Rng fwd(41);
        auto out = m.forward(x, fwd, true);
        auto loss = neg_log_prob(out.probs, 1);
        backward(loss);
        for (auto& [name, p] : m.named_params()) {
            CAPTURE(name);
            REQUIRE(p->grad.size() == p->data.size());
            bool finite = true;
            for (double g : p->grad) finite = finite && std::isfinite(g);
            CHECK(finite);
        }
    }
}

TEST_CASE("named parameters use the documented scheme") {
    auto cfg = tiny_config();
    Rng rng(42);
    auto m = model::Model::init(cfg, rng);
    std::vector<std::string> names;
    for (auto& [name, t] : m.named_params()) names.push_back(name);
    CHECK(std::find(names.begin(), names.end(), "tff.path0.kernel") != names.end());
    CHECK(std::find(names.begin(), names.end(), "tff.path2.bn.gamma") != names.end());
    CHECK(std::find(names.begin(), names.end(), "se.w1") != names.end());
    CHECK(std::find(names.begin(), names.end(), "input_proj") != names.end());
    CHECK(std::find(names.begin(), names.end(), "fwd.tab0.sb1.kernel") != names.end());
    CHECK(std::find(names.begin(), names.end(), "bwd.tab1.sb2.bn.beta") != names.end());
    CHECK(std::find(names.begin(), names.end(), "w_drf") != names.end());
    CHECK(std::find(names.begin(), names.end(), "cls.w") != names.end());
    CHECK(std::find(names.begin(), names.end(), "cls.b") != names.end());

    // no duplicates
    auto sorted = names;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("checkpoints round trip losslessly") {
    testutil::TempDir tmp("msse_ckpt");
    auto cfg = tiny_config();
    Rng rng(43);
    auto m = model::Model::init(cfg, rng);
    m.trained = true;
    // make running statistics nontrivial
    for (auto& [name, bn] : m.named_bn()) {
        (void)name;
        for (auto& v : bn->running_mean) v = 0.25;
        for (auto& v : bn->running_var) v = 2.0;
    }

    const std::string p1 = tmp.file("a.ckpt");
    model::save_checkpoint(p1, m);
    auto loaded = model::load_checkpoint(p1);
    CHECK(loaded.trained);
    CHECK(loaded.cfg.to_json() == cfg.to_json());

    // values survive as their 32-bit images
    auto orig = m.named_params();
    auto back = loaded.named_params();
    REQUIRE(orig.size() == back.size());
    for (std::size_t i = 0; i < orig.size(); ++i) {
        CHECK(orig[i].first == back[i].first);
        REQUIRE(orig[i].second->data.size() == back[i].second->data.size());
        for (std::size_t k = 0; k < orig[i].second->data.size(); ++k) {
            const double expect =
                static_cast<double>(static_cast<float>(orig[i].second->data[k]));
            CHECK(back[i].second->data[k] == expect);
        }
    }
    for (auto& [name, bn] : loaded.named_bn()) {
        (void)name;
        for (double v : bn->running_mean) CHECK(v == 0.25);
        for (double v : bn->running_var) CHECK(v == 2.0);
    }

    // a second save of the loaded model is byte-identical
    const std::string p2 = tmp.file("b.ckpt");
    model::save_checkpoint(p2, loaded);
    CHECK(testutil::read_file_bytes(p1) == testutil::read_file_bytes(p2));
}

TEST_CASE("loading rejects corrupted checkpoints") {
    testutil::TempDir tmp("msse_ckpt_bad");
    auto cfg = tiny_config();
    Rng rng(44);
    auto m = model::Model::init(cfg, rng);
    const std::string path = tmp.file("m.ckpt");
    model::save_checkpoint(path, m);

    // clobber the magic
    auto bytes = testutil::read_file_bytes(path);
    bytes[0] = 'Z';
    testutil::write_file(path, bytes);
    CHECK_THROWS_AS(model::load_checkpoint(path), FormatError);
    try {
        model::load_checkpoint(path);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("bad checkpoint header") != std::string::npos);
    }

    // truncate the blob of a freshly saved file
    model::save_checkpoint(path, m);
    auto good = testutil::read_file_bytes(path);
    testutil::write_file(path, std::string(good.begin(), good.begin() + good.size() / 2));
    CHECK_THROWS_AS(model::load_checkpoint(path), FormatError);

    CHECK_THROWS_AS(model::load_checkpoint(tmp.file("nope.ckpt")), IoError);
}
