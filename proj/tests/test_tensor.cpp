#include "doctest.h"

#include <cmath>
#include <vector>

#include "depthmatch/tensor.hpp"

using namespace dm;

namespace {

std::vector<float> vec(const Tensor& t) {
    return std::vector<float>(t.values().begin(), t.values().end());
}

std::vector<float> gvec(const Tensor& t) {
    return std::vector<float>(t.grad().begin(), t.grad().end());
}

}  // namespace

TEST_CASE("tensor construction and validation") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    for (float v : z.values()) CHECK(v == 0.f);

    Tensor f = Tensor::full({2}, 3.5f);
    CHECK(f.value_at(0) == 3.5f);
    CHECK(f.value_at(1) == 3.5f);

    CHECK_THROWS_WITH_AS(Tensor::from_data({2, 2}, {1.f, 2.f, 3.f}), doctest::Contains("does not match shape"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(Tensor::zeros({0, 3}), doctest::Contains("positive dimensions"),
                         std::runtime_error);

    Tensor s = Tensor::scalar(4.f);
    CHECK(s.item() == 4.f);
    CHECK_THROWS_WITH_AS(z.item(), doctest::Contains("single-element"), std::runtime_error);
}

TEST_CASE("elementwise add and mul oracles") {
    Tensor a = Tensor::from_data({2}, {1.f, 2.f});
    Tensor b = Tensor::from_data({2}, {3.f, 4.f});
    CHECK(vec(add(a, b)) == std::vector<float>{4.f, 6.f});

    Tensor x = Tensor::from_data({2, 2}, {1.f, -2.f, 0.5f, 7.f});
    Tensor ones = Tensor::full({2, 2}, 1.f);
    CHECK(vec(mul(x, ones)) == vec(x));

    CHECK(vec(sub(b, a)) == std::vector<float>{2.f, 2.f});
    CHECK(vec(div(b, a)) == std::vector<float>{3.f, 2.f});
    CHECK_THROWS_WITH_AS(div(a, Tensor::from_data({2}, {1.f, 0.f})),
                         doctest::Contains("zero divisor"), std::runtime_error);
}

TEST_CASE("broadcast is right-aligned and rejects incompatible shapes") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row = Tensor::from_data({3}, {10, 20, 30});
    CHECK(vec(add(a, row)) == std::vector<float>{11, 22, 33, 14, 25, 36});

    Tensor col = Tensor::from_data({2, 1}, {100, 200});
    CHECK(vec(add(a, col)) == std::vector<float>{101, 102, 103, 204, 205, 206});

    CHECK_THROWS_WITH_AS(add(a, Tensor::from_data({2}, {1, 2})),
                         doctest::Contains("not broadcastable"), std::runtime_error);
}

TEST_CASE("matmul oracles") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(vec(matmul(eye, m)) == vec(m));

    Tensor a = Tensor::from_data({1, 2}, {1, 0});
    Tensor b = Tensor::from_data({2, 1}, {0, 5});
    CHECK(vec(matmul(a, b)) == std::vector<float>{0.f});

    CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("inner dimensions"), std::runtime_error);

    // bmm equals per-slice matmul
    Tensor ba = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor bb = Tensor::from_data({2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2});
    Tensor r = bmm(ba, bb);
    CHECK(vec(r) == std::vector<float>{1, 2, 3, 4, 10, 12, 14, 16});
}

TEST_CASE("conv2d identity, constant sum, and output sizing") {
    // 1x1 identity kernel
    Tensor x = Tensor::from_data({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1.f});
    CHECK(vec(conv2d(x, k1, 1, 0)) == vec(x));

    // all-ones 3x3 on a constant field: every interior-window output is 9c
    const float c = 0.75f;
    Tensor cx = Tensor::full({1, 1, 5, 6}, c);
    Tensor k3 = Tensor::full({1, 1, 3, 3}, 1.f);
    Tensor y = conv2d(cx, k3, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 4});
    for (float v : y.values()) CHECK(v == doctest::Approx(9 * c));

    // H' = floor((H + 2p - kh)/s) + 1
    Tensor big = Tensor::zeros({1, 1, 11, 9});
    CHECK(conv2d(big, k3, 2, 1).shape() == Shape{1, 1, (11 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1});
    CHECK(conv2d(big, k3, 1, 0).shape() == Shape{1, 1, 9, 7});

    CHECK_THROWS_WITH_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), k3, 1, 0),
                         doctest::Contains("channels"), std::runtime_error);
}

TEST_CASE("softmax oracles") {
    Tensor u = Tensor::from_data({1, 3}, {0, 0, 0});
    Tensor su = softmax(u, 1);
    for (float v : su.values()) CHECK(v == doctest::Approx(1.0 / 3));

    Tensor hot = Tensor::from_data({1, 2}, {1000.f, 0.f});
    Tensor sh = softmax(hot, 1);
    CHECK(all_finite(sh));
    CHECK(sh.value_at(0) == doctest::Approx(1.0));
    CHECK(sh.value_at(1) == doctest::Approx(0.0));

    Rng rng(7);
    Tensor r = Tensor::randn({4, 5, 3}, rng, 2.0);
    Tensor s = softmax(r, 1);
    for (std::int64_t o = 0; o < 4; ++o)
        for (std::int64_t i = 0; i < 3; ++i) {
            double sum = 0;
            for (std::int64_t a = 0; a < 5; ++a) sum += s.value_at((o * 5 + a) * 3 + i);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }

    // log_softmax is the log of softmax
    Tensor ls = log_softmax(r, 1);
    for (std::int64_t i = 0; i < r.numel(); ++i)
        CHECK(std::exp(double(ls.value_at(i))) == doctest::Approx(double(s.value_at(i))).epsilon(1e-5));
}

TEST_CASE("bilinear resize identity and constant preservation") {
    Rng rng(11);
    Tensor x = Tensor::rand_uniform({1, 2, 5, 7}, rng, 0, 1);
    CHECK(vec(bilinear_resize(x, 5, 7)) == vec(x));

    Tensor c = Tensor::full({1, 1, 4, 4}, 0.37f);
    Tensor up = bilinear_resize(c, 9, 5), down = bilinear_resize(c, 2, 3);
    for (float v : up.values()) CHECK(v == doctest::Approx(0.37f));
    for (float v : down.values()) CHECK(v == doctest::Approx(0.37f));
}

TEST_CASE("reductions and argmax") {
    Tensor x = Tensor::from_data({2, 3}, {1, 5, 2, 4, 0, 3});
    CHECK(reduce_sum(x).item() == 15.f);
    CHECK(reduce_mean(x).item() == doctest::Approx(2.5f));
    CHECK(vec(reduce_sum_axis(x, 1)) == std::vector<float>{8, 7});
    CHECK(vec(reduce_sum_axis(x, 0)) == std::vector<float>{5, 5, 5});
    Tensor mx = reduce_mean_axis(x, 1);
    CHECK(mx.value_at(0) == doctest::Approx(8.0 / 3));
    CHECK(mx.value_at(1) == doctest::Approx(7.0 / 3));
    CHECK(vec(reduce_max_axis(x, 1)) == std::vector<float>{5, 4});
    CHECK(reduce_max_axis(x, 1, true).shape() == Shape{2, 1});
    CHECK(vec(reduce_max_detached(x, 0)) == std::vector<float>{4, 5, 3});

    Tensor ties = Tensor::from_data({1, 3}, {2, 2, 1});
    CHECK(argmax(ties, 1).value_at(0) == 0.f);  // ties resolve to the lowest index
    CHECK(vec(argmax(x, 1)) == std::vector<float>{1, 0});
}

TEST_CASE("shape ops round trip") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = reshape(x, {3, 2});
    CHECK(r.shape() == Shape{3, 2});
    CHECK(vec(r) == vec(x));
    CHECK_THROWS_WITH_AS(reshape(x, {4, 2}), doctest::Contains("cannot view"), std::runtime_error);

    Tensor p = permute(x, {1, 0});
    CHECK(p.shape() == Shape{3, 2});
    CHECK(vec(p) == std::vector<float>{1, 4, 2, 5, 3, 6});
    CHECK(vec(permute(p, {1, 0})) == vec(x));
    CHECK_THROWS_WITH_AS(permute(x, {0, 0}), doctest::Contains("permutation"), std::runtime_error);

    Tensor s = slice(x, 1, 1, 3);
    CHECK(vec(s) == std::vector<float>{2, 3, 5, 6});
    CHECK_THROWS_WITH_AS(slice(x, 1, 2, 2), doctest::Contains("invalid range"), std::runtime_error);

    Tensor c = concat<float>({slice(x, 1, 0, 1), slice(x, 1, 1, 3)}, 1);
    CHECK(vec(c) == vec(x));
}

TEST_CASE("backward of sum yields ones; multiple uses accumulate") {
    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    reduce_sum(x).backward();
    CHECK(gvec(x) == std::vector<float>{1, 1, 1, 1});

    Tensor y = Tensor::from_data({2}, {1, 2}, true);
    reduce_sum(add(y, y)).backward();
    CHECK(gvec(y) == std::vector<float>{2, 2});
}

TEST_CASE("unused inputs receive no gradient") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = Tensor::from_data({2}, {3, 4}, true);
    reduce_sum(mul_scalar(x, 2.f)).backward();
    CHECK(gvec(x) == std::vector<float>{2, 2});
    CHECK_FALSE(y.has_grad());  // never touched by the graph

    // zero_grad then reuse: gradients reset, not stacked
    x.zero_grad();
    reduce_sum(x).backward();
    CHECK(gvec(x) == std::vector<float>{1, 1});
}

TEST_CASE("backward requires a scalar loss") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_WITH_AS(add(x, x).backward(), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("detach cuts the graph") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor d = detach(x);
    CHECK_FALSE(d.requires_grad());
    CHECK(vec(d) == vec(x));
}

TEST_CASE("straight-through threshold: hard forward, identity backward") {
    Tensor x = Tensor::from_data({4}, {0.05f, 0.1f, 0.5f, 0.09f}, true);
    Tensor h = ste_threshold(x, 0.1f);
    CHECK(vec(h) == std::vector<float>{0, 1, 1, 0});  // >= comparison
    Tensor coef = Tensor::from_data({4}, {1, 2, 3, 4});
    reduce_sum(mul(h, coef)).backward();
    CHECK(gvec(x) == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("relu and sqrt basics") {
    Tensor x = Tensor::from_data({4}, {-1, 0, 2, -3}, true);
    Tensor y = relu(x);
    CHECK(vec(y) == std::vector<float>{0, 0, 2, 0});
    reduce_sum(y).backward();
    CHECK(gvec(x) == std::vector<float>{0, 0, 1, 0});

    Tensor q = Tensor::from_data({2}, {4, 9});
    CHECK(vec(sqrt_t(q)) == std::vector<float>{2, 3});
    CHECK_THROWS_WITH_AS(sqrt_t(Tensor::from_data({1}, {-1.f})), doctest::Contains("negative"),
                         std::runtime_error);
}

TEST_CASE("reflect_pad2d mirrors without repeating the edge") {
    Tensor x = Tensor::from_data({1, 1, 1, 3}, {1, 2, 3});
    Tensor p = reflect_pad2d(x, 0);
    CHECK(vec(p) == vec(x));
    // width line 1 2 3 -> pad 1: 2 1 2 3 2 (no height pad possible at H=1 with pad>0)
    Tensor x2 = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor p2 = reflect_pad2d(x2, 1);
    CHECK(p2.shape() == Shape{1, 1, 5, 5});
    // center row of the padded result mirrors the middle input row
    std::vector<float> row;
    for (int i = 0; i < 5; ++i) row.push_back(p2.value_at(2 * 5 + i));
    CHECK(row == std::vector<float>{5, 4, 5, 6, 5});
    CHECK_THROWS_WITH_AS(reflect_pad2d(x2, 3), doctest::Contains("too large"), std::runtime_error);
}

TEST_CASE("rng streams are deterministic") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(124);
    bool any_diff = false;
    Rng a2(123);
    for (int i = 0; i < 10; ++i) any_diff = any_diff || (a2.next_u64() != c.next_u64());
    CHECK(any_diff);

    // derive_seed separates sites and indices
    CHECK(derive_seed(1, "a", 0, 0) != derive_seed(1, "b", 0, 0));
    CHECK(derive_seed(1, "a", 0, 0) != derive_seed(1, "a", 1, 0));
    CHECK(derive_seed(1, "a", 0, 0) != derive_seed(1, "a", 0, 1));
    CHECK(derive_seed(1, "a", 2, 3) == derive_seed(1, "a", 2, 3));
}
