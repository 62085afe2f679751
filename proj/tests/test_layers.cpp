#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "msse/grad_check.hpp"
#include "msse/layers.hpp"
#include "msse/rng.hpp"
#include "msse/tensor.hpp"
#include "oracles.hpp"

using namespace msse;

TEST_CASE("SE init enforces the channel/ratio contract") {
    Rng rng(20);
    auto p = layers::SeParams::init(12, 3, rng);
    CHECK(p.channels() == 12);
    REQUIRE(p.w1->shape == std::vector<int>{4, 12});
    REQUIRE(p.w2->shape == std::vector<int>{12, 4});
    CHECK(p.w1->requires_grad);
    CHECK(p.w2->requires_grad);
    CHECK_THROWS_AS(layers::SeParams::init(10, 4, rng), ConfigError);
    CHECK_THROWS_AS(layers::SeParams::init(12, 0, rng), ConfigError);
}

TEST_CASE("se_forward matches the direct formula and gates stay in (0,1)") {
    Rng rng(21);
    const int T = 9, C = 12, ratio = 3;
    auto p = layers::SeParams::init(C, ratio, rng);
    auto u = Tensor::randn({T, C}, rng, 1.5);
    auto [gated, gates] = layers::se_forward(u, p);
    REQUIRE(gates->shape == std::vector<int>{C});
    REQUIRE(gated->shape == u->shape);

    std::vector<double> ref_gates, ref_gated;
    oracles::se_direct(u->data, T, C, p.w1->data, C / ratio, p.w2->data, ref_gates, ref_gated);
    for (int c = 0; c < C; ++c) {
        CHECK(gates->at(c) > 0.0);
        CHECK(gates->at(c) < 1.0);
        CHECK(std::fabs(gates->at(c) - ref_gates[c]) < 1e-10);
    }
    for (std::size_t i = 0; i < ref_gated.size(); ++i) {
        CHECK(std::fabs(gated->data[i] - ref_gated[i]) < 1e-10);
    }

    // the rescale itself is exact: y = u * s with no extra arithmetic
    for (int t = 0; t < T; ++t) {
        for (int c = 0; c < C; ++c) {
            CHECK(gated->at(t, c) == u->at(t, c) * gates->at(c));
        }
    }
}

TEST_CASE("se_forward squeezes over every non-channel axis of a 3-D map") {
    Rng rng(22);
    const int H = 5, W = 7, C = 6;
    auto p = layers::SeParams::init(C, 3, rng);
    auto u = Tensor::randn({H, W, C}, rng, 1.0);
    auto [gated, gates] = layers::se_forward(u, p);
    REQUIRE(gated->shape == u->shape);

    std::vector<double> ref_gates, ref_gated;
    oracles::se_direct(u->data, H * W, C, p.w1->data, C / 3, p.w2->data, ref_gates, ref_gated);
    for (int c = 0; c < C; ++c) CHECK(std::fabs(gates->at(c) - ref_gates[c]) < 1e-10);
}

TEST_CASE("se_forward is differentiable") {
    Rng rng(23);
    const int T = 6, C = 6;
    auto p = layers::SeParams::init(C, 3, rng);
    auto u = Tensor::randn({T, C}, rng, 1.0, true);
    auto rep = grad_check(
        [&] {
            auto [gated, gates] = layers::se_forward(u, p);
            (void)gates;
            return sum_all(gated);
        },
        {{"u", u}, {"w1", p.w1}, {"w2", p.w2}}, 1e-5);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("spatial dropout zeroes whole channels with inverted scaling") {
    Rng rng(24);
    const int T = 10, C = 40;
    auto x = Tensor::randn({T, C}, rng, 1.0);
    const double p = 0.5;
    layers::DropoutSpec spec(p);

    Rng mask_rng(7);
    auto y = layers::spatial_dropout(x, spec, mask_rng, true);
    REQUIRE(y->shape == x->shape);
    const double scale = 1.0 / (1.0 - p);
    int dropped = 0, kept = 0;
    for (int c = 0; c < C; ++c) {
        const bool zero_first = y->at(0, c) == 0.0;
        if (zero_first) ++dropped;
        else ++kept;
        for (int t = 0; t < T; ++t) {
            if (zero_first) {
                CHECK(y->at(t, c) == 0.0);  // whole channel gone
            } else {
                CHECK(y->at(t, c) == x->at(t, c) * scale);  // exact inverted scaling
            }
        }
    }
    CHECK(dropped > 0);
    CHECK(kept > 0);

    // eval mode and rate 0 are identities
    Rng r2(7);
    auto ey = layers::spatial_dropout(x, spec, r2, false);
    CHECK(ey->data == x->data);
    layers::DropoutSpec none(0.0);
    Rng r3(7);
    auto ny = layers::spatial_dropout(x, none, r3, true);
    CHECK(ny->data == x->data);

    // same seed, same mask
    Rng r4(7), r5(7);
    auto y1 = layers::spatial_dropout(x, spec, r4, true);
    auto y2 = layers::spatial_dropout(x, spec, r5, true);
    CHECK(y1->data == y2->data);

    CHECK_THROWS_AS(layers::DropoutSpec(-0.1), ConfigError);
    CHECK_THROWS_AS(layers::DropoutSpec(1.0), ConfigError);
}

TEST_CASE("spatial dropout keeps roughly the right fraction of channels") {
    Rng rng(25);
    auto x = Tensor::full({2, 200}, 1.0);
    layers::DropoutSpec spec(0.3);
    int dropped = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Rng mr(100 + trial);
        auto y = layers::spatial_dropout(x, spec, mr, true);
        for (int c = 0; c < 200; ++c) {
            if (y->at(0, c) == 0.0) ++dropped;
        }
    }
    const double frac = dropped / 2000.0;
    CHECK(frac > 0.2);
    CHECK(frac < 0.4);
}

TEST_CASE("spatial dropout differentiates through frozen masks") {
    Rng rng(26);
    auto x = Tensor::randn({6, 8}, rng, 1.0, true);
    layers::DropoutSpec spec(0.4);
    auto rep = grad_check(
        [&] {
            Rng frozen(999);  // identical mask on every finite-difference probe
            auto y = layers::spatial_dropout(x, spec, frozen, true);
            return sum_all(mul(y, y));
        },
        {{"x", x}}, 1e-5);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("batch_norm layer folds batch statistics into running averages") {
    Rng rng(27);
    const int T = 16, C = 4;
    auto bn = layers::BatchNormParams::init(C);
    CHECK(bn.momentum == 0.9);
    CHECK(bn.epsilon == 1e-5);
    REQUIRE(static_cast<int>(bn.running_mean.size()) == C);
    for (int c = 0; c < C; ++c) {
        CHECK(bn.running_mean[c] == 0.0);
        CHECK(bn.running_var[c] == 1.0);
        CHECK(bn.gamma->at(c) == 1.0);
        CHECK(bn.beta->at(c) == 0.0);
    }

    auto x = Tensor::randn({T, C}, rng, 3.0);
    std::vector<double> mu(C), var(C);
    for (int c = 0; c < C; ++c) {
        double m = 0.0;
        for (int t = 0; t < T; ++t) m += x->at(t, c);
        m /= T;
        double v = 0.0;
        for (int t = 0; t < T; ++t) v += (x->at(t, c) - m) * (x->at(t, c) - m);
        v /= T;
        mu[c] = m;
        var[c] = v;
    }

    auto y = layers::batch_norm(x, bn, true);
    REQUIRE(y->shape == x->shape);
    for (int c = 0; c < C; ++c) {
        CHECK(bn.running_mean[c] == doctest::Approx(0.9 * 0.0 + 0.1 * mu[c]).epsilon(1e-12));
        CHECK(bn.running_var[c] == doctest::Approx(0.9 * 1.0 + 0.1 * var[c]).epsilon(1e-12));
    }

    // eval mode normalizes by the running averages, exactly like the raw op
    auto ye = layers::batch_norm(x, bn, false);
    auto ref = batch_norm_eval(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.epsilon);
    CHECK(ye->data == ref->data);

    // eval mode must not move the statistics
    const auto frozen_mean = bn.running_mean;
    layers::batch_norm(x, bn, false);
    CHECK(bn.running_mean == frozen_mean);
}

TEST_CASE("batch_norm layer is differentiable in training mode") {
    Rng rng(28);
    auto x = Tensor::randn({12, 3}, rng, 1.0, true);
    auto bn = layers::BatchNormParams::init(3);
    // nontrivial affine parameters
    for (int c = 0; c < 3; ++c) {
        bn.gamma->at(c) = 0.5 + 0.3 * c;
        bn.beta->at(c) = -0.2 + 0.1 * c;
    }
    auto rep = grad_check(
        [&] {
            auto bn_copy = bn;  // keep running stats fixed across probes
            auto y = layers::batch_norm(x, bn_copy, true);
            return sum_all(mul(y, y));
        },
        {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}}, 1e-5);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("global_temporal_pool averages over time") {
    auto x = Tensor::from_data({3, 2}, {1.0, 10.0, 2.0, 20.0, 3.0, 30.0});
    auto y = layers::global_temporal_pool(x);
    REQUIRE(y->shape == std::vector<int>{2});
    CHECK(y->at(0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(y->at(1) == doctest::Approx(20.0).epsilon(1e-15));
    auto bad = Tensor::full({3, 2, 2}, 1.0);
    CHECK_THROWS_AS(layers::global_temporal_pool(bad), DimensionError);
}

TEST_CASE("dense_softmax matches a long-double oracle and normalizes") {
    Rng rng(29);
    const int C = 7, K = 4;
    auto x = Tensor::randn({C}, rng, 1.0);
    auto w = Tensor::randn({K, C}, rng, 1.0);
    auto b = Tensor::randn({K}, rng, 1.0);
    auto probs = layers::dense_softmax(x, w, b);
    REQUIRE(probs->shape == std::vector<int>{K});

    std::vector<double> logits(K, 0.0);
    for (int i = 0; i < K; ++i) {
        double acc = b->at(i);
        for (int c = 0; c < C; ++c) acc += w->at(i, c) * x->at(c);
        logits[i] = acc;
    }
    auto ref = oracles::softmax_longdouble(logits);
    double sum = 0.0;
    for (int i = 0; i < K; ++i) {
        CHECK(std::fabs(probs->at(i) - ref[i]) < 1e-12);
        CHECK(probs->at(i) > 0.0);
        sum += probs->at(i);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));

    auto wrong = Tensor::randn({K, C + 1}, rng, 1.0);
    CHECK_THROWS_AS(layers::dense_softmax(x, wrong, b), DimensionError);
}

TEST_CASE("dense_softmax is differentiable through the loss") {
    Rng rng(30);
    const int C = 5, K = 3;
    auto x = Tensor::randn({C}, rng, 1.0, true);
    auto w = Tensor::randn({K, C}, rng, 1.0, true);
    auto b = Tensor::randn({K}, rng, 1.0, true);
    auto rep = grad_check(
        [&] { return neg_log_prob(layers::dense_softmax(x, w, b), 1); },
        {{"x", x}, {"w", w}, {"b", b}}, 1e-5);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err < 1e-6);
}
