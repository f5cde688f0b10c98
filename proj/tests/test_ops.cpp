#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "neurosleep/ops.hpp"

using namespace nsn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

}  // namespace

TEST_CASE("conv2d spatial geometry: (1,2,3000), 2 filters kernel (2,1) -> (2,1,3000)") {
    std::mt19937_64 rng(1);
    auto x = make_leaf(random_tensor({1, 2, 3000}, rng));
    ConvSpec spec;
    spec.num_filters = 2;
    spec.kernel_h = 2;
    auto w = make_leaf(random_tensor({2, 1, 2, 1}, rng));
    auto b = make_leaf(Tensor({2}));
    auto y = conv2d(x, spec, w, b);
    CHECK(y->value.shape() == std::vector<std::size_t>{2, 1, 3000});
}

TEST_CASE("conv2d 1x1 identity kernel copies the input") {
    std::mt19937_64 rng(2);
    auto x = make_leaf(random_tensor({1, 3, 7}, rng));
    ConvSpec spec;  // 1 filter, 1x1 kernel
    auto w = make_leaf(Tensor({1, 1, 1, 1}, {1.0}));
    auto b = make_leaf(Tensor({1}));
    auto y = conv2d(x, spec, w, b);
    REQUIRE(y->value.shape() == std::vector<std::size_t>{1, 3, 7});
    for (std::size_t i = 0; i < x->value.size(); ++i) CHECK(y->value[i] == x->value[i]);
}

TEST_CASE("conv2d hand example: ones (1,3) kernel, pad (1,1)") {
    auto x = make_leaf(Tensor({1, 1, 6}, {1, 2, 3, 4, 5, 6}));
    ConvSpec spec;
    spec.kernel_w = 3;
    spec.pad_left = 1;
    spec.pad_right = 1;
    auto w = make_leaf(Tensor({1, 1, 1, 3}, {1, 1, 1}));
    auto b = make_leaf(Tensor({1}));
    auto y = conv2d(x, spec, w, b);
    const std::vector<double> expect = {3, 6, 9, 12, 15, 11};
    REQUIRE(y->value.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(y->value[i] == doctest::Approx(expect[i]));
}

TEST_CASE("conv2d is linear in the input (bias 0)") {
    std::mt19937_64 rng(3);
    ConvSpec spec = ConvSpec::same_width(3, 5);
    auto w = make_leaf(random_tensor({3, 2, 1, 5}, rng));
    auto b = make_leaf(Tensor({3}));
    auto xa = random_tensor({2, 2, 17}, rng);
    auto xb = random_tensor({2, 2, 17}, rng);
    const double ca = 1.7, cb = -0.4;
    Tensor mix({2, 2, 17});
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = ca * xa[i] + cb * xb[i];
    auto ya = conv2d(make_leaf(xa), spec, w, b);
    auto yb = conv2d(make_leaf(xb), spec, w, b);
    auto ym = conv2d(make_leaf(mix), spec, w, b);
    for (std::size_t i = 0; i < ym->value.size(); ++i)
        CHECK(std::abs(ym->value[i] - (ca * ya->value[i] + cb * yb->value[i])) < 1e-9);
}

TEST_CASE("same-width padding splits k-1 as ceil/floor") {
    auto even = ConvSpec::same_width(1, 50);
    CHECK(even.pad_left == 25);
    CHECK(even.pad_right == 24);
    CHECK(even.out_w(3000) == 3000);
    auto odd = ConvSpec::same_width(1, 25);
    CHECK(odd.pad_left == 12);
    CHECK(odd.pad_right == 12);
    CHECK(odd.out_w(3000) == 3000);
}

TEST_CASE("maxpool2d examples") {
    std::mt19937_64 rng(4);
    auto big = make_leaf(random_tensor({8, 2, 3000}, rng));
    CHECK(maxpool2d(big, 12)->value.shape() == std::vector<std::size_t>{8, 2, 250});

    auto x = make_leaf(Tensor({1, 1, 8}, {3, 1, 4, 1, 5, 9, 2, 6}));
    auto y = maxpool2d(x, 3);
    REQUIRE(y->value.size() == 2);
    CHECK(y->value[0] == 4);
    CHECK(y->value[1] == 9);

    auto same = maxpool2d(x, 1);
    for (std::size_t i = 0; i < 8; ++i) CHECK(same->value[i] == x->value[i]);

    CHECK_THROWS(maxpool2d(x, 9));
}

TEST_CASE("maxpool2d equals brute force on 1000 random tensors") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> fd(1, 3), hd(1, 3), wd(1, 20), rd(1, 6);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t F = fd(rng), H = hd(rng), W = wd(rng);
        std::size_t r = rd(rng);
        if (r > W) r = W;
        auto x = random_tensor({F, H, W}, rng);
        auto y = maxpool2d(make_leaf(x), r);
        const std::size_t Wo = W / r;
        REQUIRE(y->value.shape() == std::vector<std::size_t>{F, H, Wo});
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t o = 0; o < Wo; ++o) {
                    double m = x.at3(f, h, o * r);
                    for (std::size_t j = 1; j < r; ++j)
                        m = std::max(m, x.at3(f, h, o * r + j));
                    CHECK(y->value.at3(f, h, o) == m);
                }
    }
}

TEST_CASE("relu forward and gradient") {
    auto x = make_leaf(Tensor({3}, {-1, 0, 2}));
    auto y = relu(x);
    CHECK(y->value[0] == 0);
    CHECK(y->value[1] == 0);
    CHECK(y->value[2] == 2);

    auto pos = make_leaf(Tensor({3}, {0.5, 1.0, 2.5}));
    auto same = relu(pos);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same->value[i] == pos->value[i]);

    // d/dx sum(relu(x)) at [-1, 2] is [0, 1]: sum = 2 * mean over the column.
    auto x3 = make_leaf(Tensor({1, 2}, {-1, 2}));
    auto root = scale(mean_over_rows(transpose2d(relu(x3))), 2.0);
    REQUIRE(root->value.size() == 1);
    backward(root);
    CHECK(x3->grad[0] == 0.0);
    CHECK(x3->grad[1] == 1.0);
}

TEST_CASE("softmax examples and properties") {
    auto u = softmax(make_leaf(Tensor({1, 5}, {0, 0, 0, 0, 0})));
    for (std::size_t i = 0; i < 5; ++i) CHECK(u->value[i] == doctest::Approx(0.2).epsilon(1e-12));

    auto p = softmax(make_leaf(Tensor({1, 2}, {std::log(2.0), 0.0})));
    CHECK(p->value[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p->value[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor({3, 5}, rng, -30.0, 30.0);
        Tensor shifted = x;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j) shifted.at2(i, j) += 17.5;
        auto a = softmax(make_leaf(x));
        auto b = softmax(make_leaf(shifted));
        for (std::size_t i = 0; i < 3; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(a->value.at2(i, j) > 0.0);
                CHECK(std::abs(a->value.at2(i, j) - b->value.at2(i, j)) < 1e-12);
                row += a->value.at2(i, j);
            }
            CHECK(std::abs(row - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("layer_norm examples") {
    auto gain = make_leaf(Tensor({2}, {1, 1}));
    auto offset = make_leaf(Tensor({2}, {0, 0}));

    auto c = layer_norm(make_leaf(Tensor({1, 2}, {3, 3})), gain, offset);
    CHECK(std::abs(c->value[0]) < 1e-9);
    CHECK(std::abs(c->value[1]) < 1e-9);

    auto r = layer_norm(make_leaf(Tensor({1, 2}, {1, 3})), gain, offset, 1e-12);
    CHECK(r->value[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(r->value[1] == doctest::Approx(1.0).epsilon(1e-5));

    auto zero_gain = make_leaf(Tensor({2}, {0, 0}));
    auto off = make_leaf(Tensor({2}, {0.3, -0.7}));
    auto o = layer_norm(make_leaf(Tensor({1, 2}, {5, 9})), zero_gain, off);
    CHECK(o->value[0] == doctest::Approx(0.3));
    CHECK(o->value[1] == doctest::Approx(-0.7));
}

TEST_CASE("linear examples") {
    auto x = make_leaf(Tensor({1, 2}, {1, 2}));
    auto w = make_leaf(Tensor({2, 1}, {1, 1}));
    auto b = make_leaf(Tensor({1}, {1}));
    auto y = linear(x, w, b);
    CHECK(y->value[0] == doctest::Approx(4.0));

    auto id_w = make_leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    auto zero_b = make_leaf(Tensor({2}));
    auto same = linear(x, id_w, zero_b);
    CHECK(same->value[0] == 1.0);
    CHECK(same->value[1] == 2.0);
}

TEST_CASE("dropout semantics") {
    std::mt19937_64 rng(7);
    auto x = make_leaf(Tensor({4}, {1, 1, 1, 1}));
    auto eval_out = dropout(x, 0.5, false, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(eval_out->value[i] == 1.0);
    auto p0 = dropout(x, 0.0, true, rng);
    for (std::size_t i = 0; i < 4; ++i) CHECK(p0->value[i] == 1.0);
    CHECK_THROWS(dropout(x, 1.0, true, rng));

    std::mt19937_64 r1(42), r2(42);
    auto a = dropout(x, 0.5, true, r1);
    auto b = dropout(x, 0.5, true, r2);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a->value[i] == b->value[i]);
        CHECK((a->value[i] == 0.0 || a->value[i] == 2.0));
    }
}

TEST_CASE("dropout preserves expectation within 1% over 1e5 trials") {
    double acc = 0.0;
    const int trials = 100000;
    auto x = make_leaf(Tensor({1}, {1.0}));
    std::mt19937_64 rng(99);
    for (int t = 0; t < trials; ++t) {
        auto y = dropout(x, 0.25, true, rng);
        acc += y->value[0];
    }
    CHECK(std::abs(acc / trials - 1.0) < 0.01);
}

TEST_CASE("attention: single row, identical rows, and the S=2 hand example") {
    std::mt19937_64 rng(8);
    const std::size_t D = 4;
    auto wq = make_leaf(random_tensor({D, D}, rng));
    auto wk = make_leaf(random_tensor({D, D}, rng));
    auto wv = make_leaf(random_tensor({D, D}, rng));
    auto wo = make_leaf(random_tensor({D, D}, rng));
    auto bq = make_leaf(Tensor({D})), bk = make_leaf(Tensor({D}));
    auto bv = make_leaf(Tensor({D})), bo = make_leaf(Tensor({D}));

    // S=1: attention weight is 1, output = O(V(x)).
    auto x1 = make_leaf(random_tensor({1, D}, rng));
    auto y1 = multi_head_self_attention(x1, 2, wq, bq, wk, bk, wv, bv, wo, bo);
    auto direct = linear(linear(x1, wv, bv), wo, bo);
    for (std::size_t i = 0; i < D; ++i)
        CHECK(y1->value[i] == doctest::Approx(direct->value[i]).epsilon(1e-12));

    // Identical rows -> identical output rows.
    Tensor rep({3, D});
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t j = 0; j < D; ++j) rep.at2(s, j) = x1->value[j];
    auto yr = multi_head_self_attention(make_leaf(rep), 2, wq, bq, wk, bk, wv, bv, wo, bo);
    for (std::size_t s = 1; s < 3; ++s)
        for (std::size_t j = 0; j < D; ++j)
            CHECK(std::abs(yr->value.at2(s, j) - yr->value.at2(0, j)) < 1e-12);

    // S=2, D=1, one head, identity projections.
    auto iw = make_leaf(Tensor({1, 1}, {1.0}));
    auto ib = make_leaf(Tensor({1}));
    auto x2 = make_leaf(Tensor({2, 1}, {1.0, 0.0}));
    auto y2 = multi_head_self_attention(x2, 1, iw, ib, iw, ib, iw, ib, iw, ib);
    const double e = std::exp(1.0);
    CHECK(y2->value[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
    CHECK(y2->value[1] == doctest::Approx(0.5).epsilon(1e-12));

    auto bad = random_tensor({2, 3}, rng);
    CHECK_THROWS(multi_head_self_attention(make_leaf(bad), 2, wq, bq, wk, bk, wv, bv, wo, bo));
}

TEST_CASE("mean_over_rows") {
    auto one = mean_over_rows(make_leaf(Tensor({1, 3}, {4, 5, 6})));
    CHECK(one->value[0] == 4);
    CHECK(one->value[1] == 5);
    CHECK(one->value[2] == 6);

    auto two = mean_over_rows(make_leaf(Tensor({2, 2}, {1, 3, 3, 1})));
    CHECK(two->value[0] == 2);
    CHECK(two->value[1] == 2);

    std::mt19937_64 rng(9);
    auto big = mean_over_rows(make_leaf(random_tensor({20, 16}, rng)));
    CHECK(big->value.shape() == std::vector<std::size_t>{16});
}

TEST_CASE("weighted cross entropy worked examples") {
    auto logits = make_leaf(Tensor({1, 5}, {0, 0, 0, 0, 0}));
    auto l1 = weighted_cross_entropy(logits, {2}, std::vector<double>(5, 1.0));
    CHECK(l1->value[0] == doctest::Approx(-std::log(0.2)).epsilon(1e-12));

    auto logits2 = make_leaf(Tensor({1, 5}, {0, 0, 0, 0, 0}));
    std::vector<double> w(5, 1.0);
    w[2] = 2.0;
    auto l2 = weighted_cross_entropy(logits2, {2}, w);
    CHECK(l2->value[0] == doctest::Approx(-2.0 * std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("gradient checks per op") {
    std::mt19937_64 rng(10);

    SUBCASE("linear map is exact") {
        auto w0 = random_tensor({3, 2}, rng);
        double err = grad_check(
            [](const std::vector<Var>& leaves) {
                auto x = make_leaf(Tensor({1, 3}, {0.3, -0.8, 1.2}), false);
                auto b = make_leaf(Tensor({2}), false);
                auto y = linear(x, leaves[0], b);
                return mean_over_rows(transpose2d(y));
            },
            {w0});
        CHECK(err <= 1e-9);
    }

    SUBCASE("conv2d") {
        auto x0 = random_tensor({2, 2, 9}, rng);
        auto w0 = random_tensor({2, 2, 1, 3}, rng);
        auto b0 = random_tensor({2}, rng);
        ConvSpec spec = ConvSpec::same_width(2, 3);
        double err = grad_check(
            [&](const std::vector<Var>& leaves) {
                auto y = conv2d(leaves[0], spec, leaves[1], leaves[2]);
                auto flat = reshape(y, {1, 2 * 2 * 9});
                return mean_over_rows(transpose2d(flat));
            },
            {x0, w0, b0});
        CHECK(err <= 1e-6);
    }

    SUBCASE("softmax cross entropy") {
        auto logits = random_tensor({4, 5}, rng, -2.0, 2.0);
        double err = grad_check(
            [](const std::vector<Var>& leaves) {
                return weighted_cross_entropy(leaves[0], {0, 2, 4, 1},
                                              {1.0, 0.5, 2.0, 1.5, 3.0});
            },
            {logits});
        CHECK(err <= 1e-6);
    }

    SUBCASE("layer norm") {
        auto x0 = random_tensor({3, 4}, rng);
        auto g0 = random_tensor({4}, rng, 0.5, 1.5);
        auto o0 = random_tensor({4}, rng);
        double err = grad_check(
            [](const std::vector<Var>& leaves) {
                auto y = layer_norm(leaves[0], leaves[1], leaves[2]);
                auto sq = matmul_transb(y, y);  // [3,3]
                auto flat = reshape(sq, {1, 9});
                return mean_over_rows(transpose2d(flat));
            },
            {x0, g0, o0});
        CHECK(err <= 1e-4);
    }

    SUBCASE("attention") {
        const std::size_t D = 4;
        std::vector<Tensor> pts;
        pts.push_back(random_tensor({3, D}, rng));
        for (int i = 0; i < 4; ++i) pts.push_back(random_tensor({D, D}, rng, -0.7, 0.7));
        for (int i = 0; i < 4; ++i) pts.push_back(random_tensor({D}, rng, -0.3, 0.3));
        double err = grad_check(
            [&](const std::vector<Var>& L) {
                auto y = multi_head_self_attention(L[0], 2, L[1], L[5], L[2], L[6], L[3], L[7],
                                                   L[4], L[8]);
                auto flat = reshape(y, {1, 3 * D});
                return mean_over_rows(transpose2d(flat));
            },
            pts);
        CHECK(err <= 1e-5);
    }

    SUBCASE("maxpool + relu away from kinks") {
        Tensor x0({1, 1, 6}, {0.9, 0.2, -0.8, 0.4, 1.7, 0.6});
        double err = grad_check(
            [](const std::vector<Var>& leaves) {
                auto y = maxpool2d(relu(leaves[0]), 3);
                auto flat = reshape(y, {1, 2});
                return mean_over_rows(transpose2d(flat));
            },
            {x0});
        CHECK(err <= 1e-6);
    }
}
