#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "vtck/autodiff.hpp"

using vtck::Graph;
using vtck::Rng;
using vtck::Shape;
using vtck::Tensor;

namespace {

// Max relative error between autodiff and central differences over every
// coordinate of every listed parameter, for an arbitrary scalar-producing
// program. The oracle side recomputes the program value from scratch.
double max_grad_err(const std::vector<Tensor<double>>& params,
                    const std::function<double()>& eval,
                    const std::function<void()>& run_backward) {
    for (auto p : params) const_cast<Tensor<double>&>(p).zero_grad();
    run_backward();
    double worst = 0.0;
    for (auto p : params) {
        auto& t = const_cast<Tensor<double>&>(p);
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double fd = testsup::central_diff(eval, &t[i]);
            worst = std::max(worst, testsup::rel_err(t.grad()[static_cast<size_t>(i)], fd));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("matmul identity and hand-checked product") {
    Graph<double> g;
    auto i2 = g.input(Tensor<double>::from({2, 2}, {1, 0, 0, 1}));
    auto m = g.input(Tensor<double>::from({2, 2}, {3, -1, 2, 7}));
    auto prod = g.matmul(i2, m);
    CHECK(g.value(prod).same_values(g.value(m)));

    auto a = g.input(Tensor<double>::from({2, 2}, {1, 2, 3, 4}));
    auto b = g.input(Tensor<double>::from({2, 1}, {0, 1}));
    auto c = g.matmul(a, b);
    CHECK(g.value(c)[0] == 2.0);
    CHECK(g.value(c)[1] == 4.0);
}

TEST_CASE("matmul rejects mismatched inner dims") {
    Graph<double> g;
    auto a = g.input(Tensor<double>::zeros({2, 3}));
    auto b = g.input(Tensor<double>::zeros({2, 2}));
    CHECK_THROWS_AS(g.matmul(a, b), vtck::DimError);
}

TEST_CASE("gradient of sum(A*B) wrt A equals ones * B^T") {
    Rng rng(7);
    auto ta = Tensor<double>::randn({3, 4}, rng).set_requires_grad(true);
    auto tb = Tensor<double>::randn({4, 2}, rng);
    Graph<double> g;
    auto loss = g.sum(g.matmul(g.input(ta), g.input(tb)));
    g.backward(loss);
    // d sum(AB) / dA[i,k] = sum_j B[k,j]
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t k = 0; k < 4; ++k) {
            double expect = 0.0;
            for (int64_t j = 0; j < 2; ++j) expect += tb[k * 2 + j];
            CHECK(testsup::rel_err(ta.grad()[static_cast<size_t>(i * 4 + k)], expect) < 1e-12);
        }
    }
    // and against the finite-difference oracle directly
    auto eval = [&] {
        Graph<double> h;
        return h.value(h.sum(h.matmul(h.input(ta), h.input(tb))))[0];
    };
    for (int64_t i = 0; i < ta.numel(); ++i) {
        const double fd = testsup::central_diff(eval, &ta[i]);
        CHECK(testsup::rel_err(ta.grad()[static_cast<size_t>(i)], fd) < 1e-8);
    }
}

TEST_CASE("backward of sum gives ones, of sum of squares gives 2x") {
    auto x = Tensor<double>::from({3}, {5, -1, 2}).set_requires_grad(true);
    {
        Graph<double> g;
        auto loss = g.sum(g.input(x));
        g.backward(loss);
        CHECK(x.grad() == std::vector<double>{1, 1, 1});
    }
    auto y = Tensor<double>::from({2}, {1, 2}).set_requires_grad(true);
    {
        Graph<double> g;
        auto yi = g.input(y);
        auto loss = g.sum(g.mul(yi, yi));
        g.backward(loss);
        CHECK(y.grad() == std::vector<double>{2, 4});
    }
}

TEST_CASE("backward requires a scalar loss and accumulates across calls") {
    auto x = Tensor<double>::from({2}, {1, 1}).set_requires_grad(true);
    Graph<double> g;
    auto xi = g.input(x);
    CHECK_THROWS_AS(g.backward(xi), vtck::ContractError);
    auto loss = g.sum(xi);
    g.backward(loss);
    g.backward(loss);
    CHECK(x.grad() == std::vector<double>{2, 2});
}

TEST_CASE("softmax values: symmetry and closed form") {
    Graph<double> g;
    auto flat = g.softmax(g.input(Tensor<double>::from({2}, {0, 0})));
    CHECK(g.value(flat)[0] == doctest::Approx(0.5));
    CHECK(g.value(flat)[1] == doctest::Approx(0.5));

    auto lg = g.softmax(g.input(Tensor<double>::from({2}, {std::log(2.0), std::log(1.0)})));
    CHECK(g.value(lg)[0] == doctest::Approx(2.0 / 3.0));
    CHECK(g.value(lg)[1] == doctest::Approx(1.0 / 3.0));

    // rows sum to 1
    Rng rng(3);
    auto r = g.softmax(g.input(Tensor<double>::randn({5, 7}, rng)));
    for (int64_t row = 0; row < 5; ++row) {
        double s = 0;
        for (int64_t c = 0; c < 7; ++c) s += g.value(r)[row * 7 + c];
        CHECK(s == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(g.softmax(g.input(Tensor<double>::zeros({0}))), vtck::DimError);
}

TEST_CASE("layer_norm: constant row maps to bias") {
    Graph<double> g;
    auto x = g.input(Tensor<double>::full({2, 4}, 3.7));
    auto gain = g.input(Tensor<double>::full({4}, 1.0));
    auto bias = g.input(Tensor<double>::zeros({4}));
    auto y = g.layer_norm(x, gain, bias, 1e-5);
    for (int64_t i = 0; i < 8; ++i) CHECK(g.value(y)[i] == doctest::Approx(0.0));
}

TEST_CASE("layer_norm rows have zero mean, unit variance pre-affine") {
    Rng rng(11);
    Graph<double> g;
    auto x = g.input(Tensor<double>::randn({3, 16}, rng));
    auto gain = g.input(Tensor<double>::full({16}, 1.0));
    auto bias = g.input(Tensor<double>::zeros({16}));
    auto y = g.layer_norm(x, gain, bias, 1e-5);
    for (int64_t r = 0; r < 3; ++r) {
        double mean = 0, var = 0;
        for (int64_t c = 0; c < 16; ++c) mean += g.value(y)[r * 16 + c];
        mean /= 16;
        for (int64_t c = 0; c < 16; ++c) {
            const double d = g.value(y)[r * 16 + c] - mean;
            var += d * d;
        }
        var /= 16;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shifts variance slightly
    }
}

TEST_CASE("broadcasting matches the explicit loop oracle") {
    Rng rng(5);
    const std::vector<std::pair<Shape, Shape>> cases = {
        {{2, 3}, {3}},      {{4, 1, 3}, {2, 1}}, {{1}, {4, 4, 4}}, {{4, 4, 4}, {4, 4, 4}},
        {{3, 1}, {1, 4}},   {{2, 2}, {1}},       {{4, 4}, {4, 1}},
    };
    for (const auto& [sa, sb] : cases) {
        auto a = Tensor<double>::randn(sa, rng);
        auto b = Tensor<double>::randn(sb, rng);
        Graph<double> g;
        auto sum_t = g.add(g.input(a), g.input(b));
        auto prod_t = g.mul(g.input(a), g.input(b));
        auto oracle_sum = testsup::broadcast_oracle(a, b, [](double x, double y) { return x + y; });
        auto oracle_prod = testsup::broadcast_oracle(a, b, [](double x, double y) { return x * y; });
        CHECK(g.value(sum_t).same_values(oracle_sum));
        CHECK(g.value(prod_t).same_values(oracle_prod));
    }
}

TEST_CASE("gradients of a mixed op chain beat 1e-4 against central differences") {
    Rng rng(17);
    auto w1 = Tensor<double>::randn({6, 5}, rng, 0, 0.5).set_requires_grad(true);
    auto b1 = Tensor<double>::randn({6}, rng, 0, 0.5).set_requires_grad(true);
    auto w2 = Tensor<double>::randn({3, 6}, rng, 0, 0.5).set_requires_grad(true);
    auto gain = Tensor<double>::randn({6}, rng, 1, 0.1).set_requires_grad(true);
    auto bias = Tensor<double>::randn({6}, rng, 0, 0.1).set_requires_grad(true);
    auto x = Tensor<double>::randn({4, 5}, rng);

    auto build = [&](Graph<double>& g) {
        auto h = g.matmul_nt(g.input(x), g.input(w1));          // [4,6]
        h = g.add(h, g.input(b1));                              // bias broadcast
        h = g.layer_norm(h, g.input(gain), g.input(bias), 1e-5);
        h = g.gelu(h);
        auto attnish = g.softmax(g.matmul_nt(h, h));            // [4,4]
        auto mixed = g.matmul(attnish, h);                      // [4,6]
        auto out = g.matmul_nt(mixed, g.input(w2));             // [4,3]
        out = g.tanh_op(out);
        auto left = g.slice_cols(out, 0, 2);
        auto right = g.slice_cols(out, 1, 3);
        auto cat = g.concat_cols({left, right});
        return g.mean(g.mul(cat, cat));
    };

    const double err = max_grad_err(
        {w1, b1, w2, gain, bias},
        [&] {
            Graph<double> g;
            return g.value(build(g))[0];
        },
        [&] {
            Graph<double> g;
            g.backward(build(g));
        });
    CHECK(err < 1e-4);
}

TEST_CASE("slice/concat round trip and scale/sub/mean behave") {
    Graph<double> g;
    auto x = g.input(Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto parts = g.concat_cols({g.slice_cols(x, 0, 1), g.slice_cols(x, 1, 3)});
    CHECK(g.value(parts).same_values(g.value(x)));

    auto halved = g.scale(x, 0.5);
    CHECK(g.value(halved)[3] == 2.0);
    auto diff = g.sub(x, x);
    CHECK(g.value(g.sum(diff))[0] == 0.0);
    CHECK(g.value(g.mean(x))[0] == doctest::Approx(3.5));
}
