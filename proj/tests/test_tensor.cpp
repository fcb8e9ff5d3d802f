#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "calvin/adam.hpp"
#include "calvin/checkpoint.hpp"
#include "calvin/gradcheck.hpp"
#include "calvin/graph.hpp"
#include "calvin/rng.hpp"

using namespace calvin;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_pm(scale);
    return t;
}

// Independent quadruple-loop convolution oracle (zero padding, stride 1).
Tensor conv2d_naive(const Tensor& x, const Tensor& k, const Tensor* bias) {
    const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const int O = k.extent(0), K = k.extent(2), P = (K - 1) / 2;
    Tensor out({O, H, W});
    for (int o = 0; o < O; ++o)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                double acc = bias ? (*bias)[o] : 0.0;
                for (int c = 0; c < C; ++c)
                    for (int u = 0; u < K; ++u)
                        for (int v = 0; v < K; ++v) {
                            const int yy = y + u - P, xc = xx + v - P;
                            if (yy < 0 || yy >= H || xc < 0 || xc >= W) continue;
                            acc += static_cast<double>(x.at({c, yy, xc})) * k.at({o, c, u, v});
                        }
                out.at({o, y, xx}) = static_cast<float>(acc);
            }
    return out;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Graph g;
    Rng rng(7);
    Tensor x = random_tensor({1, 5, 5}, rng);
    Tensor k({1, 1, 3, 3});
    k.at({0, 0, 1, 1}) = 1.0f;
    Val out = g.conv2d(g.input(x), g.input(k));
    for (size_t i = 0; i < x.numel(); ++i) CHECK(out.value()[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d impulse response spreads an all-ones kernel") {
    Graph g;
    Tensor x({1, 5, 5});
    x.at({0, 2, 2}) = 1.0f;
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f);
    Val out = g.conv2d(g.input(x), g.input(k));
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c) {
            const float expect = (std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1) ? 1.0f : 0.0f;
            CHECK(out.value().at({0, r, c}) == expect);
        }
}

TEST_CASE("conv2d matches the naive quadruple-loop oracle") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 7, 7}, rng);
        Tensor k = random_tensor({3, 2, 3, 3}, rng);
        Tensor b = random_tensor({3}, rng);
        Graph g;
        Val out = g.conv2d(g.input(x), g.input(k), g.input(b));
        const Tensor expect = conv2d_naive(x, k, &b);
        for (size_t i = 0; i < expect.numel(); ++i)
            CHECK(std::abs(out.value()[i] - expect[i]) < 1e-6);
    }
}

TEST_CASE("conv2d rejects bad shapes") {
    Graph g;
    Rng rng(1);
    CHECK_THROWS_AS(g.conv2d(g.input(random_tensor({2, 5, 5}, rng)),
                             g.input(random_tensor({3, 1, 3, 3}, rng))),
                    std::invalid_argument);
    CHECK_THROWS_AS(g.conv2d(g.input(random_tensor({1, 5, 5}, rng)),
                             g.input(random_tensor({1, 1, 2, 2}, rng))),
                    std::invalid_argument);
}

TEST_CASE("conv2d is deterministic bit for bit") {
    Rng rng(3);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor k = random_tensor({4, 2, 3, 3}, rng);
    Graph g1, g2;
    Val a = g1.conv2d(g1.input(x), g1.input(k));
    Val b = g2.conv2d(g2.input(x), g2.input(k));
    for (size_t i = 0; i < a.value().numel(); ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("channel_max picks the max with lowest-index ties") {
    Graph g;
    Tensor q({3, 1, 1}, {1.0f, 3.0f, 2.0f});
    auto out = g.channel_max(g.input(q));
    CHECK(out.v.value()[0] == 3.0f);
    CHECK(out.argmax()[0] == 1);

    Tensor tie = Tensor::full({4, 2}, 0.75f);
    auto out2 = g.channel_max(g.input(tie));
    CHECK(out2.argmax()[0] == 0);
    CHECK(out2.argmax()[1] == 0);

    CHECK_THROWS_AS(g.channel_max(Val{}), std::exception);
}

TEST_CASE("channel_max gradient is one-hot at the argmax per location") {
    Rng rng(11);
    Tensor q = random_tensor({4, 3, 3}, rng);
    Graph g;
    Val leaf = g.leaf(q);
    auto out = g.channel_max(leaf);
    g.backward(g.sum(out.v));
    const size_t rest = 9;
    for (size_t r = 0; r < rest; ++r) {
        int ones = 0;
        for (int a = 0; a < 4; ++a) {
            const float gv = leaf.grad()[a * rest + r];
            if (a == out.argmax()[r]) {
                CHECK(gv == 1.0f);
                ++ones;
            } else {
                CHECK(gv == 0.0f);
            }
        }
        CHECK(ones == 1);
    }
}

TEST_CASE("softmax_cross_entropy on uniform logits is ln(n)") {
    Graph g;
    Val loss = g.softmax_ce(g.input(Tensor({9})), 4, 1.0f);
    CHECK(loss.value()[0] == doctest::Approx(std::log(9.0)).epsilon(1e-6));

    // weight 0: zero loss and zero gradient
    Graph g2;
    Rng rng(5);
    Val leaf = g2.leaf(random_tensor({6}, rng));
    Val wl = g2.softmax_ce(leaf, 2, 0.0f);
    CHECK(wl.value()[0] == 0.0f);
    g2.backward(wl);
    for (size_t i = 0; i < 6; ++i) CHECK(leaf.grad()[i] == 0.0f);
}

TEST_CASE("softmax_cross_entropy rejects out-of-range targets") {
    Graph g;
    CHECK_THROWS_AS(g.softmax_ce(g.input(Tensor({4})), 4, 1.0f), std::invalid_argument);
    CHECK_THROWS_AS(g.softmax_ce(g.input(Tensor({4})), -1, 1.0f), std::invalid_argument);
}

TEST_CASE("cross-entropy is non-negative on random logits") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Graph g;
        Tensor logits = random_tensor({7}, rng, 4.0f);
        const int target = static_cast<int>(rng.uniform_int(7));
        Val loss = g.softmax_ce(g.input(logits), target, 1.0f);
        CHECK(loss.value()[0] >= 0.0f);
    }
    // Zero only in the degenerate one-class limit.
    Graph g;
    CHECK(g.softmax_ce(g.input(Tensor::scalar(3.2f)), 0, 1.0f).value()[0] == 0.0f);
}

TEST_CASE("sigmoid(0) = 0.5 and softmax groups sum to 1") {
    Graph g;
    CHECK(g.sigmoid(g.input(Tensor({1}))).value()[0] == 0.5f);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Graph g2;
        Tensor x = random_tensor({3, 4, 5}, rng, 5.0f);
        Val sm = g2.softmax_tail(g2.input(x), 1);
        for (int grp = 0; grp < 3; ++grp) {
            double sum = 0.0;
            for (int i = 0; i < 20; ++i) sum += sm.value()[grp * 20 + i];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax is invariant to adding a constant to a slice") {
    Rng rng(23);
    Tensor x = random_tensor({2, 3, 3}, rng);
    Graph g;
    Val s1 = g.softmax_tail(g.input(x), 1);
    Tensor shifted = x;
    for (size_t i = 0; i < 9; ++i) shifted[i] += 5.0f; // first slice only
    Val s2 = g.softmax_tail(g.input(shifted), 1);
    for (size_t i = 0; i < x.numel(); ++i)
        CHECK(s1.value()[i] == doctest::Approx(s2.value()[i]).epsilon(1e-5));
}

TEST_CASE("op gradient suite passes finite differences over 20 seeds") {
    for (const OpCheck& c : run_op_gradient_suite(20)) {
        INFO(c.name, " worst_abs=", c.worst_abs_err, " worst_rel=", c.worst_rel_err);
        CHECK(c.ok);
    }
}

TEST_CASE("backward of sum gives all-ones; unrelated leaves get zero") {
    Rng rng(2);
    Graph g;
    Val a = g.leaf(random_tensor({3, 3}, rng));
    Val b = g.leaf(random_tensor({3, 3}, rng));
    g.backward(g.sum(a));
    for (size_t i = 0; i < 9; ++i) {
        CHECK(a.grad()[i] == 1.0f);
        CHECK(b.grad()[i] == 0.0f);
    }
}

TEST_CASE("backward rejects non-scalar losses and detached graphs") {
    Graph g;
    Rng rng(4);
    Val a = g.leaf(random_tensor({2, 2}, rng));
    CHECK_THROWS_AS(g.backward(a), std::invalid_argument);

    Graph g2;
    Val c = g2.input(random_tensor({2, 2}, rng));
    Val s = g2.sum(c);
    CHECK_THROWS_AS(g2.backward(s), std::invalid_argument);
}

TEST_CASE("non-finite op outputs raise") {
    Graph g;
    Tensor big = Tensor::full({4}, 3.0e38f);
    CHECK_THROWS_AS(g.add(g.input(big), g.input(big)), std::runtime_error);
}

TEST_CASE("adam first step moves each coordinate by about lr") {
    Adam adam({0.01f, 0.9f, 0.999f, 1e-8f});
    Tensor p({4}, {1.0f, -2.0f, 0.5f, 3.0f});
    Tensor grad({4}, {0.3f, -0.7f, 2.0f, 0.001f});
    Tensor before = p;
    adam.step_param("p", p, grad);
    adam.advance();
    for (size_t i = 0; i < 4; ++i) {
        const float step = before[i] - p[i];
        // Bias-corrected first step is lr·sign(g) up to epsilon effects.
        CHECK(std::abs(std::abs(step) - 0.01f) < 1e-3f);
        CHECK(step * grad[i] > 0.0f);
    }
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
    Adam adam({0.01f, 0.9f, 0.999f, 1e-8f});
    Tensor p({3}, {1.0f, 2.0f, 3.0f});
    // Build some momentum first, then feed zero gradients.
    adam.step_param("p", p, Tensor({3}, {1.0f, 1.0f, 1.0f}));
    adam.advance();
    Tensor after_first = p;
    for (int i = 0; i < 50; ++i) {
        adam.step_param("p", p, Tensor({3}));
        adam.advance();
    }
    // Momentum decays toward zero so the parameters settle.
    for (size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - after_first[i]) < 0.05f);

    Adam fresh({0.01f, 0.9f, 0.999f, 1e-8f});
    Tensor q({2}, {5.0f, -5.0f});
    fresh.step_param("q", q, Tensor({2}));
    CHECK(q[0] == 5.0f);
    CHECK(q[1] == -5.0f);
}

TEST_CASE("adam minimizes a quadratic to the target within 1e-2") {
    const Tensor target({4}, {0.3f, -1.2f, 0.8f, 2.0f});
    Tensor x({4});
    Adam adam({0.01f, 0.9f, 0.999f, 1e-8f});
    for (int it = 0; it < 600; ++it) {
        Graph g;
        Val leaf = g.leaf(x);
        Val diff = g.sub(leaf, g.input(target));
        Val loss = g.sum(g.mul(diff, diff));
        g.backward(loss);
        adam.step_param("x", x, leaf.grad());
        adam.advance();
    }
    for (size_t i = 0; i < 4; ++i) CHECK(std::abs(x[i] - target[i]) < 1e-2f);
}

TEST_CASE("adam rejects mismatched gradient shapes") {
    Adam adam;
    Tensor p({3});
    CHECK_THROWS_AS(adam.step_param("p", p, Tensor({4})), std::invalid_argument);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    Rng rng(9);
    std::map<std::string, Tensor> params;
    params.emplace("alpha", random_tensor({3, 4}, rng));
    params.emplace("beta.w", random_tensor({2, 2, 3, 3}, rng));
    params.emplace("gamma", Tensor::scalar(-1.5f));

    const std::string path1 = "ckpt_test_1.bin";
    const std::string path2 = "ckpt_test_2.bin";
    checkpoint_save(path1, params);
    const auto loaded = checkpoint_load(path1);
    CHECK(loaded.size() == params.size());
    for (const auto& [name, t] : params) {
        REQUIRE(loaded.count(name));
        CHECK(loaded.at(name).shape() == t.shape());
        for (size_t i = 0; i < t.numel(); ++i) CHECK(loaded.at(name)[i] == t[i]);
    }
    checkpoint_save(path2, loaded);

    // save -> load -> save produces identical bytes
    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint rejects a bad magic string") {
    const std::string path = "ckpt_bad_magic.bin";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTCALV" << std::string(64, '\0');
    }
    CHECK_THROWS_AS(checkpoint_load(path), std::runtime_error);
    std::filesystem::remove(path);
}
