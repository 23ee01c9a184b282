#include <catch2/catch_amalgamated.hpp>

#include "ktan/kernels.hpp"
#include "ktan/rng.hpp"
#include "oracles.hpp"

using namespace ktan;

TEST_CASE("tensor shape and data invariants") {
    Tensor<double> t({2, 3});
    REQUIRE(t.numel() == 6);
    REQUIRE(t[5] == 0.0);

    CHECK_THROWS_AS(Tensor<double>({2, 3}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor<double>({0, 3}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);

    Tensor<double> nan_t({2}, {1.0, std::nan("")});
    CHECK_FALSE(nan_t.all_finite());
    CHECK_THROWS_AS(nan_t.check_finite("unit"), NanError);
}

TEST_CASE("rng streams are deterministic and purpose-separated") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng s1 = Rng::stream(7, RngStream::student_init);
    Rng s2 = Rng::stream(7, RngStream::teacher_init);
    CHECK(s1.next_u64() != s2.next_u64());

    Rng p(3);
    auto perm = p.permutation(50);
    std::vector<bool> seen(50, false);
    for (auto i : perm) {
        REQUIRE(i >= 0);
        REQUIRE(i < 50);
        REQUIRE_FALSE(seen[static_cast<size_t>(i)]);
        seen[static_cast<size_t>(i)] = true;
    }

    Rng n(5);
    double mean = 0;
    for (int i = 0; i < 10000; ++i) mean += n.normal();
    CHECK(std::abs(mean / 10000) < 0.05);
}

TEST_CASE("conv geometry output extents") {
    CHECK(ConvGeometry::out_extent(5, 3, 2, 1) == 3);
    CHECK(ConvGeometry::out_extent(4, 3, 1, 0) == 2);
    CHECK(ConvGeometry::out_extent(7, 1, 1, 0) == 7);
    CHECK_THROWS_AS(ConvGeometry::out_extent(5, 2, 2, 0), GeometryError);  // non-integer
    CHECK_THROWS_AS(ConvGeometry::out_extent(2, 5, 1, 0), GeometryError);  // negative span

    PoolGeometry pg{2, 2};
    CHECK(pg.out_extent(4) == 2);
    CHECK(pg.out_extent(3) == 1);
    CHECK_THROWS_AS(pg.out_extent(1), GeometryError);
}

TEST_CASE("conv2d identity and constant cases") {
    // 1x1 identity filter passes the input through
    Tensor<double> in({1, 1, 1, 1}, {3.5});
    Tensor<double> flt({1, 1, 1, 1}, {1.0});
    Tensor<double> bias({1});
    ConvGeometry g{1, 1, 1, 1, 1, 1, 0, 0};
    auto out = kernels::conv2d_forward(in, flt, bias, g);
    CHECK(out.item() == 3.5);

    // 4x4 ones through a 3x3 ones filter: every output is the sum of 9 ones
    Tensor<double> in2 = Tensor<double>::ones({1, 1, 4, 4});
    Tensor<double> flt2 = Tensor<double>::ones({1, 1, 3, 3});
    ConvGeometry g2{1, 1, 3, 3, 1, 1, 0, 0};
    auto out2 = kernels::conv2d_forward(in2, flt2, bias, g2);
    REQUIRE(out2.shape() == Shape{1, 1, 2, 2});
    for (int64_t i = 0; i < out2.numel(); ++i) CHECK(out2[i] == 9.0);
}

TEST_CASE("conv2d matches the nested-loop reference") {
    Rng rng(2024);
    Tensor<double> in({2, 3, 5, 5});
    Tensor<double> flt({4, 3, 3, 3});
    Tensor<double> bias({4});
    rng.fill_uniform(in, -1, 1);
    rng.fill_uniform(flt, -1, 1);
    rng.fill_uniform(bias, -0.5, 0.5);
    ConvGeometry g{3, 4, 3, 3, 2, 2, 1, 1};

    auto fast = kernels::conv2d_forward(in, flt, bias, g);
    auto ref = oracles::conv2d_reference(in, flt, bias, g);
    CHECK(max_abs_diff(fast, ref) < 1e-10);
}

TEST_CASE("conv2d randomized geometry property") {
    Rng rng(99);
    int accepted = 0;
    while (accepted < 60) {
        const int64_t N = 1 + rng.uniform_int(3), C = 1 + rng.uniform_int(4);
        const int64_t H = 1 + rng.uniform_int(8), W = 1 + rng.uniform_int(8);
        const int64_t O = 1 + rng.uniform_int(4);
        const int64_t kh = 1 + rng.uniform_int(3), kw = 1 + rng.uniform_int(3);
        const int64_t sh = 1 + rng.uniform_int(2), sw = 1 + rng.uniform_int(2);
        const int64_t ph = rng.uniform_int(2), pw = rng.uniform_int(2);
        ConvGeometry g{C, O, kh, kw, sh, sw, ph, pw};
        try {
            g.out_h(H);
            g.out_w(W);
        } catch (const GeometryError&) {
            continue;  // infeasible draw
        }
        Tensor<double> in({N, C, H, W}), flt({O, C, kh, kw}), bias({O});
        rng.fill_uniform(in, -1, 1);
        rng.fill_uniform(flt, -1, 1);
        rng.fill_uniform(bias, -1, 1);

        auto fast = kernels::conv2d_forward(in, flt, bias, g);
        auto ref = oracles::conv2d_reference(in, flt, bias, g);
        REQUIRE(fast.extent(2) == g.out_h(H));
        REQUIRE(fast.extent(3) == g.out_w(W));
        REQUIRE(max_abs_diff(fast, ref) < 1e-10);
        ++accepted;
    }
}

TEST_CASE("conv2d rejects mismatched operands") {
    Tensor<double> in({1, 2, 4, 4}), flt({1, 3, 3, 3}), bias({1});
    ConvGeometry g{3, 1, 3, 3, 1, 1, 0, 0};
    CHECK_THROWS_AS(kernels::conv2d_forward(in, flt, bias, g), ShapeError);
}

TEST_CASE("dense identity, bias broadcast and reference") {
    // identity weights, zero bias
    Tensor<double> in({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor<double> eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1.0;
    Tensor<double> zero_b({3});
    CHECK(kernels::dense_forward(in, eye, zero_b) == in);

    // zero weights: every row equals the bias
    Tensor<double> zero_w({3, 2});
    Tensor<double> b({2}, {0.25, -0.75});
    auto out = kernels::dense_forward(in, zero_w, b);
    for (int64_t n = 0; n < 2; ++n) {
        CHECK(out.at2(n, 0) == 0.25);
        CHECK(out.at2(n, 1) == -0.75);
    }

    Rng rng(7);
    Tensor<double> rin({4, 6}), rw({6, 5}), rb({5});
    rng.fill_uniform(rin, -1, 1);
    rng.fill_uniform(rw, -1, 1);
    rng.fill_uniform(rb, -1, 1);
    CHECK(max_abs_diff(kernels::dense_forward(rin, rw, rb), oracles::dense_reference(rin, rw, rb)) < 1e-10);

    Tensor<double> bad_w({4, 5});
    CHECK_THROWS_AS(kernels::dense_forward(rin, bad_w, rb), ShapeError);
}

TEST_CASE("elementwise activations") {
    Tensor<double> nonneg({4}, {0.0, 1.0, 2.5, 0.1});
    CHECK(kernels::relu_forward(nonneg) == nonneg);

    Tensor<double> mixed({3}, {-1.0, 0.0, 2.0});
    auto r = kernels::relu_forward(mixed);
    CHECK(r[0] == 0.0);
    CHECK(r[2] == 2.0);

    Tensor<double> zero({1, 1}, {0.0});
    CHECK(kernels::sigmoid_forward(zero).item() == 0.5);

    // equal logits -> uniform distribution
    Tensor<double> logits = Tensor<double>::full({2, 8}, 1.7);
    auto sm = kernels::softmax_forward(logits);
    for (int64_t i = 0; i < sm.numel(); ++i) CHECK(std::abs(sm[i] - 0.125) < 1e-12);

    Rng rng(13);
    Tensor<double> rl({5, 9});
    rng.fill_uniform(rl, -4, 4);
    auto p = kernels::softmax_forward(rl);
    for (int64_t n = 0; n < 5; ++n) {
        double s = 0;
        for (int64_t k = 0; k < 9; ++k) s += p.at2(n, k);
        CHECK(std::abs(s - 1.0) < 1e-9);
    }
    auto lp = kernels::log_softmax_forward(rl);
    for (int64_t i = 0; i < lp.numel(); ++i) CHECK(std::abs(std::exp(lp[i]) - p[i]) < 1e-12);
}

TEST_CASE("max pool routing breaks ties to the lowest flat index") {
    Tensor<double> flat = Tensor<double>::full({1, 1, 2, 2}, 3.0);
    auto [out, argmax] = kernels::maxpool_forward(flat, PoolGeometry{2, 2});
    REQUIRE(out.numel() == 1);
    CHECK(out[0] == 3.0);
    CHECK(argmax[0] == 0);

    Tensor<double> plane({1, 1, 2, 4}, {1, 5, 2, 2, 9, 0, 2, 2});
    auto [out2, arg2] = kernels::maxpool_forward(plane, PoolGeometry{2, 2});
    CHECK(out2[0] == 9.0);
    CHECK(arg2[0] == 4);
    CHECK(out2[1] == 2.0);
    CHECK(arg2[1] == 2);  // four-way tie resolves to the first element scanned
}
