#include <catch2/catch_amalgamated.hpp>

#include "ktan/gradcheck.hpp"

using namespace ktan;

TEST_CASE("backward of sum gives all-ones") {
    Tape<double> tape;
    Rng rng(1);
    Tensor<double> x({3, 4});
    rng.fill_uniform(x, -2, 2);
    Var leaf = tape.leaf(x, true);
    Var root = ops::sum_all(tape, leaf);
    tape.backward(root);
    auto g = tape.grad(leaf);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("backward of sum(x*x)/2 gives x") {
    Tape<double> tape;
    Rng rng(2);
    Tensor<double> x({5});
    rng.fill_uniform(x, -2, 2);
    Var leaf = tape.leaf(x, true);
    Var root = ops::scale(tape, ops::sum_all(tape, ops::mul(tape, leaf, leaf)), 0.5);
    tape.backward(root);
    auto g = tape.grad(leaf);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(g[i] == Catch::Approx(x[i]).margin(1e-15));
}

TEST_CASE("unreachable leaf receives a zero gradient") {
    Tape<double> tape;
    Var a = tape.leaf(Tensor<double>::ones({2}), true);
    Var b = tape.leaf(Tensor<double>::ones({2}), true);
    Var root = ops::sum_all(tape, a);
    tape.backward(root);
    auto gb = tape.grad(b);
    REQUIRE(gb.shape() == Shape{2});
    CHECK(gb[0] == 0.0);
    CHECK(gb[1] == 0.0);
}

TEST_CASE("backward rejects non-scalar roots") {
    Tape<double> tape;
    Var a = tape.leaf(Tensor<double>::ones({2, 2}), true);
    Var r = ops::relu(tape, a);
    CHECK_THROWS_AS(tape.backward(r), ShapeError);
}

TEST_CASE("pick gathers one entry per row") {
    Tape<double> tape;
    Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
    Var leaf = tape.leaf(x, true);
    Var picked = ops::pick(tape, leaf, {2, 0});
    CHECK(tape.value(picked)[0] == 3.0);
    CHECK(tape.value(picked)[1] == 4.0);
    tape.backward(ops::sum_all(tape, picked));
    auto g = tape.grad(leaf);
    CHECK(g.vec() == std::vector<double>{0, 0, 1, 1, 0, 0});

    CHECK_THROWS_AS(ops::pick(tape, leaf, {3, 0}), ShapeError);
}

TEST_CASE("finite differences recover the gradient of a quadratic") {
    Tensor<double> x({4}, {0.5, -1.0, 2.0, 0.25});
    auto f = [](const Tensor<double>& v) {
        double s = 0;
        for (int64_t i = 0; i < v.numel(); ++i) s += v[i] * v[i];
        return 0.5 * s;
    };
    auto fd = gradcheck::finite_difference_grad<double>(f, x, 1e-5);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(fd[i] == Catch::Approx(x[i]).epsilon(1e-8));

    CHECK_THROWS_AS(gradcheck::finite_difference_grad<double>(f, x, 0.0), ShapeError);
}

TEST_CASE("every differentiable operation passes the finite-difference check") {
    auto rows = gradcheck::run_all();
    REQUIRE(rows.size() == 14);
    for (const auto& r : rows) {
        INFO(r.op << " max rel err " << r.max_rel_err);
        CHECK(r.max_rel_err < 1e-4);
    }
    // each op reported exactly once
    std::set<std::string> names;
    for (const auto& r : rows) names.insert(r.op);
    CHECK(names.size() == rows.size());
}

TEST_CASE("a deliberately broken backward rule is caught") {
    // relu forward with a sign error in its backward rule
    auto broken_eval = [](const Tensor<double>& x, Tensor<double>* analytic) {
        Tape<double> t;
        Var leaf = t.leaf(x, true);
        Var bad = t.emit(kernels::relu_forward(t.value(leaf)), {leaf}, [](Tape<double>& tp, int32_t self) {
            const auto& par = tp.parents(self);
            auto d = kernels::relu_backward(tp.grad_buffer(self), tp.node_value(par[0].id));
            for (int64_t i = 0; i < d.numel(); ++i) d[i] = -d[i];
            ops::accumulate(tp.grad_buffer(par[0].id), d);
        });
        Var root = ops::sum_all(t, bad);
        double v = t.value(root).item();
        if (analytic) {
            t.backward(root);
            *analytic = t.grad(leaf);
        }
        return v;
    };
    Tensor<double> x({6}, {0.7, -0.3, 1.2, 0.5, -0.9, 0.4});
    Tensor<double> analytic;
    broken_eval(x, &analytic);
    auto fd = gradcheck::finite_difference_grad<double>(
        [&](const Tensor<double>& v) { return broken_eval(v, nullptr); }, x, 1e-5);
    CHECK(gradcheck::max_rel_error(analytic, fd) > 1e-2);
}
