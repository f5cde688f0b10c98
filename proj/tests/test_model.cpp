#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "neurosleep/model.hpp"

using namespace nsn;

namespace {

Tensor random_input(std::size_t c, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    Tensor t({c, w});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channels = 2;
    cfg.samples_per_epoch = 144;
    cfg.base_kernel = 5;
    cfg.pool_factor = 3;
    cfg.filters_per_block = 2;
    cfg.ff_width = 8;
    return cfg;  // d_h = 4, d_w = 16
}

}  // namespace

TEST_CASE("default bivariate shape chain matches the published layer table") {
    ModelConfig cfg;
    cfg.validate_or_throw();
    auto params = build_model(cfg, 1);
    ForwardTrace trace;
    predict_probs(random_input(2, 3000, 11), params, &trace);

    std::map<std::string, std::vector<std::size_t>> got(trace.begin(), trace.end());
    CHECK(got.at("spatial") == std::vector<std::size_t>{2, 1, 3000});
    CHECK(got.at("virtual") == std::vector<std::size_t>{1, 2, 3000});
    CHECK(got.at("mtcl1_conv") == std::vector<std::size_t>{8, 2, 3000});
    CHECK(got.at("mtcl2_conv") == std::vector<std::size_t>{8, 2, 3000});
    CHECK(got.at("mtcl3_conv") == std::vector<std::size_t>{8, 2, 3000});
    CHECK(got.at("mtcl1_pool") == std::vector<std::size_t>{8, 2, 250});
    CHECK(got.at("concat") == std::vector<std::size_t>{24, 2, 250});
    CHECK(got.at("pcc_conv") == std::vector<std::size_t>{8, 2, 250});
    CHECK(got.at("pcc_pool") == std::vector<std::size_t>{8, 2, 20});
    CHECK(got.at("fused") == std::vector<std::size_t>{16, 20});
    CHECK(got.at("encoder_in") == std::vector<std::size_t>{20, 16});
    CHECK(got.at("encoder_out") == std::vector<std::size_t>{20, 16});
    CHECK(got.at("pooled") == std::vector<std::size_t>{16});
    CHECK(got.at("probs") == std::vector<std::size_t>{5});
}

TEST_CASE("univariate chain: no spatial layer, d_h=8, d_w=20") {
    ModelConfig cfg;
    cfg.channels = 1;
    CHECK(cfg.d_h() == 8);
    CHECK(cfg.d_w() == 20);
    auto params = build_model(cfg, 2);
    for (const auto& def : param_registry(cfg))
        CHECK(def.name.find("spatial") == std::string::npos);

    ForwardTrace trace;
    auto probs = predict_probs(random_input(1, 3000, 12), params, &trace);
    std::map<std::string, std::vector<std::size_t>> got(trace.begin(), trace.end());
    CHECK(got.at("concat") == std::vector<std::size_t>{24, 1, 250});
    CHECK(got.at("fused") == std::vector<std::size_t>{8, 20});
    CHECK(got.at("encoder_in") == std::vector<std::size_t>{20, 8});
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) sum += probs[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sequence mode S=5 pools to d_w=104") {
    ModelConfig cfg;
    cfg.sequence_length = 5;
    CHECK(cfg.input_width() == 15000);
    CHECK(cfg.d_w() == 104);
    auto params = build_model(cfg, 3);
    auto probs = predict_probs(random_input(2, 15000, 13), params);
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) sum += probs[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("build_model is deterministic per seed") {
    ModelConfig cfg = tiny_config();
    auto a = build_model(cfg, 42);
    auto b = build_model(cfg, 42);
    auto c = build_model(cfg, 43);
    REQUIRE(a.values.size() == b.values.size());
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i].vec() != b.values[i].vec()) all_equal = false;
        if (a.values[i].vec() != c.values[i].vec()) any_diff_seed = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
}

TEST_CASE("eval forward is deterministic") {
    ModelConfig cfg = tiny_config();
    auto params = build_model(cfg, 7);
    auto x = random_input(2, 144, 14);
    auto p1 = predict_probs(x, params);
    auto p2 = predict_probs(x, params);
    CHECK(p1.vec() == p2.vec());
}

TEST_CASE("param_count equals the sum of tensor sizes and the linear-layer closed form") {
    ModelConfig cfg = tiny_config();
    auto params = build_model(cfg, 5);
    std::size_t total = 0;
    for (const auto& t : params.values) total += t.size();
    CHECK(param_count(cfg) == total);

    // out_w [d_h, Y] plus out_b [Y]: D*Y + Y.
    const auto reg = param_registry(cfg);
    std::size_t head = 0;
    for (const auto& def : reg)
        if (def.name == "out_w" || def.name == "out_b")
            head += Tensor::count(def.shape);
    CHECK(head == cfg.d_h() * cfg.class_count + cfg.class_count);
}

TEST_CASE("invalid configurations are rejected with field diagnostics") {
    ModelConfig cfg;
    cfg.heads = 3;  // 16 % 3 != 0
    auto problems = cfg.validate();
    CHECK(!problems.empty());
    CHECK_THROWS(cfg.validate_or_throw());

    ModelConfig cfg2;
    cfg2.scales = 0;
    CHECK_THROWS(cfg2.validate_or_throw());

    ModelConfig cfg3;
    cfg3.pool_factor = 4000;  // d_w = 0
    CHECK_THROWS(cfg3.validate_or_throw());
}

TEST_CASE("layer-norm gains initialize to one, biases to zero, weights bounded") {
    ModelConfig cfg = tiny_config();
    auto params = build_model(cfg, 9);
    const auto reg = param_registry(cfg);
    for (std::size_t i = 0; i < reg.size(); ++i) {
        const auto& name = reg[i].name;
        const auto& t = params.values[i];
        if (name.find("_ln") != std::string::npos && name.back() == 'g') {
            for (std::size_t j = 0; j < t.size(); ++j) CHECK(t[j] == 1.0);
        } else if (!reg[i].weight_decay) {
            for (std::size_t j = 0; j < t.size(); ++j) CHECK(t[j] == 0.0);
        }
    }
}

TEST_CASE("encoder is row-permutation equivariant, so the pooled vector is invariant") {
    ModelConfig cfg = tiny_config();
    auto params = build_model(cfg, 21);
    const std::size_t S = cfg.d_w(), D = cfg.d_h();

    // Run the encoder stack (same op sequence as the model, eval mode) on a
    // sequence and on a row permutation of it; outputs must be the same
    // permutation of each other, and the row mean identical.
    std::mt19937_64 rng(0);
    auto encode = [&](const Tensor& seq_in) {
        Var seq = make_leaf(seq_in, false);
        for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
            const std::string p = "enc" + std::to_string(l);
            auto P = [&](const std::string& n) {
                return make_leaf(params.at(p + n), false);
            };
            Var att = multi_head_self_attention(seq, cfg.heads, P("_wq"), P("_bq"), P("_wk"),
                                                P("_bk"), P("_wv"), P("_bv"), P("_wo"),
                                                P("_bo"));
            seq = layer_norm(add(seq, att), P("_ln1_g"), P("_ln1_b"));
            Var h = relu(linear(seq, P("_ff1_w"), P("_ff1_b")));
            h = dropout(h, cfg.dropout_rate, false, rng);
            Var ff = linear(h, P("_ff2_w"), P("_ff2_b"));
            seq = layer_norm(add(seq, ff), P("_ln2_g"), P("_ln2_b"));
        }
        return seq->value;
    };

    std::mt19937_64 data_rng(33);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor seq({S, D});
    for (std::size_t i = 0; i < seq.size(); ++i) seq[i] = dist(data_rng);

    std::vector<std::size_t> perm(S);
    for (std::size_t i = 0; i < S; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), data_rng);
    Tensor permuted({S, D});
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < D; ++j) permuted.at2(i, j) = seq.at2(perm[i], j);

    Tensor out = encode(seq);
    Tensor out_p = encode(permuted);
    for (std::size_t i = 0; i < S; ++i)
        for (std::size_t j = 0; j < D; ++j)
            CHECK(std::abs(out_p.at2(i, j) - out.at2(perm[i], j)) < 1e-9);

    for (std::size_t j = 0; j < D; ++j) {
        double m = 0.0, mp = 0.0;
        for (std::size_t i = 0; i < S; ++i) {
            m += out.at2(i, j);
            mp += out_p.at2(i, j);
        }
        CHECK(std::abs(m - mp) / double(S) < 1e-9);
    }
}

TEST_CASE("end-to-end loss gradient matches finite differences on the tiny config") {
    ModelConfig cfg = tiny_config();
    auto params = build_model(cfg, 51);
    const Tensor x = random_input(2, 144, 52);
    const auto reg = param_registry(cfg);

    double err = grad_check(
        [&](const std::vector<Var>& leaves) {
            std::mt19937_64 rng(0);
            Var input = make_leaf(x, false);
            Var logits = forward_logits(input, leaves, cfg, false, rng);
            return weighted_cross_entropy(logits, {3}, {1.0, 0.7, 1.3, 2.0, 0.5});
        },
        params.values);
    CHECK(err <= 1e-4);
}

TEST_CASE("wrong input geometry is rejected") {
    ModelConfig cfg = tiny_config();
    auto params = build_model(cfg, 4);
    CHECK_THROWS(predict_probs(random_input(2, 100, 16), params));
    CHECK_THROWS(predict_probs(random_input(3, 144, 17), params));
}
