#include <catch2/catch_amalgamated.hpp>

#include <hrgn/autodiff.hpp>
#include <hrgn/params.hpp>

#include "test_util.hpp"

#include <random>

using namespace hrgn;
using ad::Var;

TEST_CASE("elementwise basics") {
    Var z = Var::constant(Matrix::Zero(4, 1));
    CHECK(ad::sigmoid(z).value().isApproxToConstant(0.5));
    CHECK(ad::tanh(z).value().isZero());

    Vector v(20);
    for (int i = 0; i < 20; ++i) v[i] = 0.1 * i - 1.0;
    auto [a, b] = ad::split_half(Var::constant(v));
    CHECK(ad::concat_rows(a, b).value() == v);

    CHECK_THROWS_AS(ad::split_half(Var::constant(Vector::Zero(5))), DimError);
}

TEST_CASE("shape mismatches are reported with both shapes") {
    Var a = Var::constant(Matrix::Zero(3, 1));
    Var b = Var::constant(Matrix::Zero(4, 1));
    CHECK_THROWS_WITH(ad::add(a, b), Catch::Matchers::ContainsSubstring("3x1") &&
                                         Catch::Matchers::ContainsSubstring("4x1"));
    CHECK_THROWS_AS(ad::matmul(a, b), DimError);
}

TEST_CASE("sum(W x) gradient matches x structure") {
    Matrix w = Matrix::Random(3, 4);
    Vector x = Vector::LinSpaced(4, 1.0, 4.0);
    Var wv = Var::constant(w);
    Var loss = ad::sum(ad::matmul(wv, Var::constant(x)));
    ad::backward(loss);
    // d(sum(Wx))/dW_ij = x_j for every row i.
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(wv.grad()(i, j) == Catch::Approx(x[j]));
}

TEST_CASE("parameter off the path gets zero gradient") {
    Var used = Var::constant(Matrix::Ones(2, 1));
    Var unused = Var::constant(Matrix::Ones(2, 1));
    Var loss = ad::sum(ad::tanh(used));
    ad::backward(loss);
    CHECK(used.has_grad());
    CHECK_FALSE(unused.has_grad());
}

TEST_CASE("backward requires a scalar loss") {
    Var v = Var::constant(Matrix::Zero(3, 1));
    CHECK_THROWS_AS(ad::backward(v), std::invalid_argument);
}

TEST_CASE("random 3-layer composition matches finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ParameterStore store;
        std::mt19937_64 rng(seed);
        store.add_uniform("W1", 6, 5, 5, rng);
        store.add_uniform("b1", 6, 1, 5, rng);
        store.add_uniform("W2", 6, 6, 6, rng);
        store.add_uniform("b2", 6, 1, 6, rng);
        store.add_uniform("W3", 1, 6, 6, rng);
        store.add_uniform("scale", 6, 1, 6, rng);

        Vector x = Vector::Random(5);
        auto eval_var = [&]() {
            auto L = store.make_leaves();
            Var h1 = ad::tanh(ad::affine(L.at("W1"), Var::constant(x), L.at("b1")));
            Var h2 = ad::sigmoid(ad::affine(L.at("W2"), h1, L.at("b2")));
            Var h3 = ad::cmul(h2, ad::exp_clamped(L.at("scale"), 5.0));
            Var h4 = ad::cdiv(h1, ad::add(h2, Var::constant(Matrix::Ones(6, 1))));
            Var out = ad::sum(ad::matmul(L.at("W3"), ad::add(h3, h4)));
            return std::make_pair(out, std::move(L));
        };
        auto [loss, leaves] = eval_var();
        ad::backward(loss);
        auto grads = ParameterStore::collect_grads(leaves);
        const double err = testutil::max_fd_rel_error(
            store, [&]() { return eval_var().first.value()(0, 0); }, grads);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("adam first step moves by about lr in the gradient direction") {
    ParameterStore store;
    store.insert("w", Matrix::Constant(3, 1, 1.0));
    Matrix g(3, 1);
    g << 0.3, -2.0, 5.0;
    store.adam_step({{"w", g}}, 0.01);
    for (int i = 0; i < 3; ++i)
        CHECK(store.at("w")(i, 0) ==
              Catch::Approx(1.0 - 0.01 * (g(i, 0) > 0 ? 1.0 : -1.0)).margin(1e-5));
    CHECK(store.step == 1);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
    ParameterStore store;
    store.insert("w", Matrix::Constant(2, 2, 0.7));
    for (int s = 0; s < 5; ++s) store.adam_step({{"w", Matrix::Zero(2, 2)}}, 0.1);
    CHECK(store.at("w").isApproxToConstant(0.7));
}

TEST_CASE("adam minimizes (theta-3)^2 from zero") {
    ParameterStore store;
    store.insert("theta", Matrix::Zero(1, 1));
    for (int s = 0; s < 100; ++s) {
        const double theta = store.at("theta")(0, 0);
        store.adam_step({{"theta", Matrix::Constant(1, 1, 2.0 * (theta - 3.0))}}, 0.1);
    }
    CHECK(std::abs(store.at("theta")(0, 0) - 3.0) < 0.1);
}

TEST_CASE("adam rejects missing gradient entries") {
    ParameterStore store;
    store.insert("a", Matrix::Zero(1, 1));
    store.insert("b", Matrix::Zero(1, 1));
    CHECK_THROWS_AS(store.adam_step({{"a", Matrix::Zero(1, 1)}}, 0.01),
                    std::invalid_argument);
}

TEST_CASE("adam is deterministic") {
    auto run = []() {
        ParameterStore store;
        store.insert("w", Matrix::Constant(4, 1, 0.25));
        Matrix g(4, 1);
        g << 1.0, -0.5, 0.25, 2.0;
        for (int s = 0; s < 20; ++s) store.adam_step({{"w", g}}, 0.002);
        return store.at("w");
    };
    CHECK(run() == run());
}

TEST_CASE("ops do not mutate their inputs") {
    Matrix a0 = Matrix::Random(4, 1);
    Matrix b0 = Matrix::Random(4, 1);
    Var a = Var::constant(a0), b = Var::constant(b0);
    (void)ad::add(a, b);
    (void)ad::cmul(a, b);
    (void)ad::tanh(a);
    CHECK(a.value() == a0);
    CHECK(b.value() == b0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    ParameterStore store;
    std::mt19937_64 rng(7);
    store.add_uniform("W", 5, 3, 3, rng);
    store.add_zeros("b", 5);
    store.meta["y_mean"] = 12.3456789012345678;
    store.meta["y_std"] = 0.000123456789;
    store.step = 42;
    const std::string path = "/tmp/hrgn_test_ckpt.txt";
    store.save(path);
    ParameterStore back = ParameterStore::load(path);
    CHECK(back.step == 42);
    CHECK(back.at("W") == store.at("W"));
    CHECK(back.at("b") == store.at("b"));
    CHECK(back.meta.at("y_mean") == store.meta.at("y_mean"));
    CHECK(back.meta.at("y_std") == store.meta.at("y_std"));
}
