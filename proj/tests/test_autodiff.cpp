#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "phantom/autodiff.hpp"
#include "test_util.hpp"

using namespace phantom;
using namespace phantom::testutil;

TEST_CASE("elementwise arithmetic") {
    Tape t;
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {1, 1, 1, 1});
    Tensor c = t.add(a, b);
    CHECK(c.vec() == std::vector<real>{2, 3, 4, 5});

    auto g = rng(3);
    Tensor x = random_tensor({3, 4}, g);
    Tensor one = Tensor::scalar(1);
    Tensor y = t.mul(x, one);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("shape mismatch names both shapes") {
    Tape t;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    CHECK_THROWS_WITH_AS(t.add(a, b), "cannot broadcast [2,3] with [4,5]", ShapeError);
}

TEST_CASE("grad of sum(a*b) w.r.t. a equals b") {
    auto g = rng(7);
    Tensor a = random_tensor({5}, g);
    Tensor b = random_tensor({5}, g);
    a.set_requires_grad(true);
    Tape t;
    Tensor loss = t.sum(t.mul(a, b));
    t.backward(loss);
    for (std::size_t i = 0; i < a.numel(); ++i)
        CHECK(a.grad()[i] == doctest::Approx(double(b.at(i))).epsilon(1e-6));
}

TEST_CASE("sigmoid and leaky_relu analytic values") {
    Tape t;
    CHECK(t.sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5));
    CHECK(t.leaky_relu(Tensor::scalar(-2), real(0.1)).item() == doctest::Approx(-0.2));

    Tensor x = Tensor::scalar(0).set_requires_grad(true);
    Tensor y = t.sigmoid(x);
    t.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("broadcast add/mul agree with explicit tiling") {
    auto g = rng(11);
    // [2,1,3] against [4,1], broadcast to [2,4,3]
    Tensor a = random_tensor({2, 1, 3}, g);
    Tensor b = random_tensor({4, 1}, g);
    Tape t;
    Tensor c = t.add(a, b);
    Tensor d = t.mul(a, b);
    REQUIRE(c.shape() == Shape{2, 4, 3});
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 3; ++k) {
                const real av = a.at(std::size_t(i) * 3 + k);
                const real bv = b.at(std::size_t(j));
                CHECK(c.at((std::size_t(i) * 4 + j) * 3 + k) == av + bv);
                CHECK(d.at((std::size_t(i) * 4 + j) * 3 + k) == av * bv);
            }
}

TEST_CASE("conv2d identity and zero cases") {
    Tape t;
    auto g = rng(13);
    Tensor img = random_tensor({1, 1, 5, 5}, g);
    Tensor k1({1, 1, 1, 1}, {1});
    Tensor out = t.conv2d(img, k1, 1, 0);
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(out.at(i) == img.at(i));

    Tensor zeros = Tensor::zeros({1, 2, 6, 6});
    Tensor k({3, 2, 3, 3}, std::vector<real>(3 * 2 * 9, real(0.7)));
    Tensor z = t.conv2d(zeros, k, 1, 1);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == 0);

    Tensor bad({1, 3, 5, 5}, std::vector<real>(75, 0));
    CHECK_THROWS_AS(t.conv2d(bad, k1, 1, 0), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
    auto g = rng(17);
    Tensor img = random_tensor({1, 2, 5, 5}, g);
    Tensor ker = random_tensor({3, 2, 3, 3}, g);
    Tensor wsum = random_tensor({1, 3, 5, 5}, g); // random projection to scalar

    auto f_img = [&](const Tensor& x) {
        Tape t;
        return t.sum(t.mul(t.conv2d(x, ker, 1, 1), wsum)).item();
    };
    auto f_ker = [&](const Tensor& k) {
        Tape t;
        return t.sum(t.mul(t.conv2d(img, k, 1, 1), wsum)).item();
    };

    Tensor xi = img.clone();
    xi.set_requires_grad(true);
    Tensor ki = ker.clone();
    ki.set_requires_grad(true);
    Tape t;
    t.backward(t.sum(t.mul(t.conv2d(xi, ki, 1, 1), wsum)));

    auto fd_img = finite_diff(img, f_img, kFdStep);
    auto fd_ker = finite_diff(ker, f_ker, kFdStep);
    CHECK(max_rel_err(std::vector<real>(xi.grad(), xi.grad() + xi.numel()), fd_img) <
          kFdTol);
    CHECK(max_rel_err(std::vector<real>(ki.grad(), ki.grad() + ki.numel()), fd_ker) <
          kFdTol);
}

TEST_CASE("reductions") {
    Tape t;
    Tensor v({3}, {1, 2, 3});
    CHECK(t.mean(v).item() == doctest::Approx(2));

    Tensor m({2, 2}, {1, 5, 7, 2});
    Tensor mx = t.max_over_axis(m, 1);
    CHECK(mx.vec() == std::vector<real>{5, 7});

    // gradient routes 1.0 to the winning element only
    Tensor m2 = m.clone().set_requires_grad(true);
    Tape t2;
    t2.backward(t2.sum(t2.max_over_axis(m2, 1)));
    CHECK(m2.grad()[0] == 0);
    CHECK(m2.grad()[1] == 1);
    CHECK(m2.grad()[2] == 1);
    CHECK(m2.grad()[3] == 0);

    // tie breaks to the lowest flat index
    Tensor tie({1, 3}, {4, 4, 4});
    tie.set_requires_grad(true);
    Tape t3;
    t3.backward(t3.sum(t3.max_over_axis(tie, 1)));
    CHECK(tie.grad()[0] == 1);
    CHECK(tie.grad()[1] == 0);
    CHECK(tie.grad()[2] == 0);
}

TEST_CASE("backward basics") {
    Tensor x({2, 3}, {1, -1, 2, 0, 3, -2});
    x.set_requires_grad(true);
    Tape t;
    t.backward(t.sum(x));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1);

    Tensor y({2}, {1, 2});
    y.set_requires_grad(true);
    Tape t2;
    t2.backward(t2.sum(t2.mul(y, y)));
    CHECK(y.grad()[0] == doctest::Approx(2));
    CHECK(y.grad()[1] == doctest::Approx(4));
}

TEST_CASE("backward misuse raises") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tape t;
    Tensor v = t.mul(x, x);
    CHECK_THROWS_AS(t.backward(v), TapeError); // non-scalar loss

    Tensor s = t.sum(v);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), TapeError); // consumed tape

    Tape empty;
    CHECK_THROWS_AS(empty.backward(Tensor::scalar(1)), TapeError);
}

TEST_CASE("gradient check, smooth composite on random seeds") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        auto g = rng(seed);
        Tensor a = random_tensor({2, 4}, g, real(0.2), real(1.5));
        Tensor b = random_tensor({2, 4}, g, real(0.3), real(2.0));

        auto f = [&](const Tensor& x) {
            Tape t;
            Tensor u = t.div(t.mul(x, b), t.add(b, Tensor::scalar(real(0.5))));
            Tensor v = t.sigmoid(t.sub(u, b));
            return t.add(t.mean(t.mul(v, u)), t.mean(t.mul(x, x))).item();
        };

        Tensor xi = a.clone();
        xi.set_requires_grad(true);
        {
            Tape t;
            Tensor u = t.div(t.mul(xi, b), t.add(b, Tensor::scalar(real(0.5))));
            Tensor v = t.sigmoid(t.sub(u, b));
            t.backward(t.add(t.mean(t.mul(v, u)), t.mean(t.mul(xi, xi))));
        }
        auto fd = finite_diff(a, f, kFdStep);
        CHECK(max_rel_err(std::vector<real>(xi.grad(), xi.grad() + xi.numel()), fd) <
              kFdTol);
    }
}

TEST_CASE("gradient check, piecewise ops away from their kinks") {
    // values kept > 10 FD steps from every branch point
    Tensor x({6}, {-2, -1, real(0.5), 1, 2, 3});
    Tensor other({6}, {0, real(0.5), real(-0.5), real(2.5), 1, real(3.5)});

    auto run = [&](auto make_loss) {
        Tensor xi = x.clone();
        xi.set_requires_grad(true);
        Tape t;
        t.backward(make_loss(t, xi));
        auto f = [&](const Tensor& xx) {
            Tape tp;
            return make_loss(tp, xx).item();
        };
        auto fd = finite_diff(x, f, kFdStep);
        CHECK(max_rel_err(std::vector<real>(xi.grad(), xi.grad() + xi.numel()), fd) <
              kFdTol);
    };

    run([&](Tape& t, const Tensor& v) { return t.sum(t.leaky_relu(v, real(0.1))); });
    run([&](Tape& t, const Tensor& v) { return t.sum(t.clamp_min(v, real(0.25))); });
    run([&](Tape& t, const Tensor& v) { return t.sum(t.clamp(v, real(-1.5), real(2.5))); });
    run([&](Tape& t, const Tensor& v) { return t.sum(t.maximum(v, other)); });
    run([&](Tape& t, const Tensor& v) { return t.sum(t.minimum(v, other)); });
    run([&](Tape& t, const Tensor& v) {
        return t.sum(t.max_over_axis(t.reshape(v, {2, 3}), 1));
    });
}

TEST_CASE("take, reshape, concat0") {
    Tensor x({2, 3}, {10, 11, 12, 13, 14, 15});
    x.set_requires_grad(true);
    Tape t;
    Tensor col = t.take(x, {1, 4}, {2});
    CHECK(col.vec() == std::vector<real>{11, 14});
    Tensor r = t.reshape(col, {2, 1});
    Tensor cat = t.concat0({r, r});
    REQUIRE(cat.shape() == Shape{4, 1});
    t.backward(t.sum(cat));
    CHECK(x.grad()[1] == 2);
    CHECK(x.grad()[4] == 2);
    CHECK(x.grad()[0] == 0);
}

TEST_CASE("bce_with_logits value and gradient") {
    // z=0, t=1, w=1: loss = log(2)
    Tape t;
    Tensor z = Tensor::scalar(0).set_requires_grad(true);
    Tensor loss = t.bce_with_logits(z, Tensor::scalar(1), Tensor::scalar(1));
    CHECK(loss.item() == doctest::Approx(std::log(2.0)));
    t.backward(loss);
    CHECK(z.grad()[0] == doctest::Approx(-0.5)); // sigmoid(0) - 1

    auto g = rng(21);
    Tensor logits = random_tensor({6}, g, -2, 2);
    Tensor targets = random_tensor({6}, g, 0, 1);
    Tensor weights = random_tensor({6}, g, real(0.5), real(2));
    auto f = [&](const Tensor& zz) {
        Tape tp;
        return tp.bce_with_logits(zz, targets, weights).item();
    };
    Tensor zi = logits.clone();
    zi.set_requires_grad(true);
    Tape tp;
    tp.backward(tp.bce_with_logits(zi, targets, weights));
    auto fd = finite_diff(logits, f, kFdStep);
    CHECK(max_rel_err(std::vector<real>(zi.grad(), zi.grad() + zi.numel()), fd) < kFdTol);
}

TEST_CASE("forward ops keep finite inputs finite") {
    auto g = rng(31);
    Tensor a = random_tensor({4, 4}, g, -50, 50);
    Tape t;
    CHECK(t.sigmoid(a).all_finite());
    CHECK(t.leaky_relu(a, real(0.1)).all_finite());
    CHECK(t.mul(a, a).all_finite());
    CHECK(t.mean(a).all_finite());
}
