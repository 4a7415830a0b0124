#include <doctest.h>

#include <cmath>

#include "grad_cases.hpp"
#include "hsr/tensor.hpp"

using namespace hsr;
using namespace hsr::ad;
using gradcases::randv;

TEST_CASE("conv2d against a nested-loop oracle") {
    Tape t;
    const auto xv = randv(3 * 4 * 4, 1), wv = randv(2 * 3 * 3 * 3, 2), bv = randv(2, 3);
    const Tensor x = Tensor::constant({3, 4, 4}, xv), w = Tensor::constant({2, 3, 3, 3}, wv), b = Tensor::constant({2}, bv);
    const Tensor y = conv2d(t, x, w, b);
    REQUIRE(y.shape() == Shape{2, 4, 4});
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                double acc = bv[o];
                for (int c = 0; c < 3; ++c)
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int r = i + di, s = j + dj;
                            if (r < 0 || r >= 4 || s < 0 || s >= 4) continue;
                            acc += xv[(c * 4 + r) * 4 + s] * wv[((o * 3 + c) * 3 + di + 1) * 3 + dj + 1];
                        }
                CHECK(std::abs(y.values()[(o * 4 + i) * 4 + j] - acc) < 1e-12);
            }
    const Tensor v = conv2d(t, x, w, b, Padding::Valid);
    CHECK(v.shape() == Shape{2, 2, 2});
    CHECK(std::abs(v.values()[0] - y.values()[5]) < 1e-12);  // interior of "same" equals "valid"
}

TEST_CASE("conv2d trivial kernels") {
    Tape t;
    const auto xv = randv(2 * 3 * 3, 4);
    const Tensor x = Tensor::constant({2, 3, 3}, xv);
    std::vector<double> id(4, 0.0);
    id[0] = id[3] = 1.0;  // [2,2,1,1] identity
    CHECK(conv2d(t, x, Tensor::constant({2, 2, 1, 1}, id), Tensor::zeros({2})).values() == xv);
    const Tensor z = conv2d(t, Tensor::zeros({2, 3, 3}), Tensor::constant({2, 2, 3, 3}, randv(36, 5)),
                            Tensor::constant({2}, {0.5, -2.0}));
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(z.values()[i] == 0.5);
        CHECK(z.values()[9 + i] == -2.0);
    }
    CHECK_THROWS_AS(conv2d(t, x, Tensor::zeros({2, 2, 2, 2}), Tensor()), Error);
    CHECK_THROWS_AS(conv2d(t, x, Tensor::zeros({2, 3, 1, 1}), Tensor()), Error);
}

TEST_CASE("concat and slice") {
    Tape t;
    const auto a = randv(2 * 2 * 2, 6), b = randv(3 * 2 * 2, 7);
    const Tensor A = Tensor::constant({2, 2, 2}, a), B = Tensor::constant({3, 2, 2}, b);
    CHECK(concat_channels(t, {A}).values() == a);
    const Tensor c = concat_channels(t, {A, B});
    CHECK(c.shape() == Shape{5, 2, 2});
    std::vector<double> expect = a;
    expect.insert(expect.end(), b.begin(), b.end());
    CHECK(c.values() == expect);
    CHECK(slice_channels(t, c, 2, 3).values() == b);
    CHECK_THROWS_AS(concat_channels(t, {A, Tensor::zeros({1, 3, 2})}), Error);
}

TEST_CASE("concat gradient splits back to parts") {
    Tape t;
    const Tensor a = Tensor::parameter({2, 2, 2}, randv(8, 8)), b = Tensor::parameter({1, 2, 2}, randv(4, 9));
    const auto r = randv(12, 10);
    t.backward(sum(t, mul(t, concat_channels(t, {a, b}), Tensor::constant({3, 2, 2}, r))));
    CHECK(a.grad() == std::vector<double>(r.begin(), r.begin() + 8));
    CHECK(b.grad() == std::vector<double>(r.begin() + 8, r.end()));
}

TEST_CASE("pixel shuffle and unshuffle") {
    Tape t;
    std::vector<double> ramp(16);
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
    const Tensor x = Tensor::constant({1, 4, 4}, ramp);
    const Tensor u = pixel_unshuffle(t, x, 2);
    REQUIRE(u.shape() == Shape{4, 2, 2});
    for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j)
                    CHECK(u.values()[((dy * 2 + dx) * 2 + i) * 2 + j] == ramp[(i * 2 + dy) * 4 + j * 2 + dx]);
    CHECK(pixel_shuffle(t, u, 2).values() == ramp);
    CHECK(pixel_unshuffle(t, x, 1).values() == ramp);
    CHECK(pixel_shuffle(t, x, 1).values() == ramp);
    const Tensor big = Tensor::constant({3, 8, 4}, randv(96, 11));
    CHECK(pixel_shuffle(t, pixel_unshuffle(t, big, 2), 2).values() == big.values());
    CHECK(pixel_unshuffle(t, pixel_shuffle(t, Tensor::constant({8, 2, 3}, randv(48, 12)), 2), 2).values() ==
          randv(48, 12));
    CHECK_THROWS_AS(pixel_unshuffle(t, Tensor::zeros({1, 3, 4}), 2), Error);
}

TEST_CASE("matmul, transpose and softmax") {
    Tape t;
    const auto av = randv(12, 13), bv = randv(6, 14);
    const Tensor a = Tensor::constant({4, 3}, av), b = Tensor::constant({3, 2}, bv);
    const Tensor c = matmul(t, a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += av[i * 3 + k] * bv[k * 2 + j];
            CHECK(std::abs(c.values()[i * 2 + j] - acc) < 1e-12);
        }
    std::vector<double> eye(9, 0.0);
    eye[0] = eye[4] = eye[8] = 1.0;
    CHECK(matmul(t, a, Tensor::constant({3, 3}, eye)).values() == av);
    const Tensor at = transpose(t, a);
    CHECK(at.shape() == Shape{3, 4});
    CHECK(at.values()[1 * 4 + 2] == av[2 * 3 + 1]);

    const Tensor s = softmax_last_axis(t, Tensor::constant({2, 4}, std::vector<double>(8, 3.0)));
    for (double v : s.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    const Tensor big = softmax_last_axis(t, Tensor::constant({1, 3}, {1000.0, 1001.0, 1002.0}));
    double total = 0;
    for (double v : big.values()) {
        CHECK(std::isfinite(v));
        total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(matmul(t, a, a), Error);
}

TEST_CASE("gelu values") {
    Tape t;
    const Tensor y = gelu(t, Tensor::constant({3}, {0.0, 1.0, -1.0}));
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-14));
    CHECK(y.values()[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
}

TEST_CASE("backward basics") {
    Tape t;
    const auto xv = randv(6, 15);
    const Tensor x = Tensor::parameter({2, 3}, xv);
    t.backward(sum(t, x));
    CHECK(x.grad() == std::vector<double>(6, 1.0));

    Tape t2;
    Tensor y = Tensor::parameter({2, 3}, xv);
    t2.backward(scale(t2, sum(t2, mul(t2, y, y)), 0.5));
    for (std::size_t i = 0; i < 6; ++i) CHECK(y.grad()[i] == doctest::Approx(xv[i]).epsilon(1e-15));
    CHECK_THROWS_AS(t2.backward(sum(t2, y)), Error);

    // gradients accumulate across tapes until cleared
    Tape t3;
    t3.backward(sum(t3, y));
    for (std::size_t i = 0; i < 6; ++i) CHECK(y.grad()[i] == doctest::Approx(xv[i] + 1.0));
    y.zero_grad();
    CHECK(y.grad().empty());
}

TEST_CASE("finite-difference agreement for every primitive") {
    for (const auto& c : gradcases::primitive_cases()) {
        CAPTURE(c.name);
        const auto r = grad_check(c.fn, c.params, 1e-5, c.max_coords);
        CHECK(r.coordinates > 0);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("linear graph gradient error is at rounding level") {
    const Tensor a = Tensor::parameter({3, 4}, randv(12, 16));
    const Tensor w = Tensor::constant({3, 4}, randv(12, 17));
    const auto r = grad_check([&](Tape& t) { return sum(t, mul(t, a, w)); }, std::vector<Tensor>{a}, 1e-5);
    CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("shape-only tapes count MACs without values") {
    Tape t(true);
    const Tensor x = Tensor::placeholder({3, 16, 16});
    const Tensor w = Tensor::placeholder({8, 3, 3, 3});
    const Tensor y = conv2d(t, x, w, Tensor::placeholder({8}));
    CHECK(y.shape() == Shape{8, 16, 16});
    CHECK(t.macs() == 8u * 3u * 9u * 16u * 16u);
    CHECK(y.values().empty());
}

TEST_CASE("parameter sets save and load") {
    const auto path = std::filesystem::temp_directory_path() / "hsr_test_tensor" / "p.txt";
    Rng rng(3);
    ParamSet p;
    p.add_glorot("a.w", {2, 3}, 3, 2, rng);
    p.add_constant("a.b", {2}, 0.25);
    CHECK(p.scalar_count() == 8);
    const double limit = std::sqrt(6.0 / 5.0);
    for (double v : p.get("a.w").values()) CHECK(std::abs(v) <= limit);
    p.save(path);
    ParamSet q;
    Rng other(4);
    q.add_glorot("a.w", {2, 3}, 3, 2, other);
    q.add_constant("a.b", {2}, 0.0);
    q.load(path);
    CHECK(q.get("a.w").values() == p.get("a.w").values());
    CHECK(q.get("a.b").values() == p.get("a.b").values());
    ParamSet wrong;
    wrong.add_constant("a.w", {3, 2}, 0.0);
    CHECK_THROWS_AS(wrong.load(path), Error);
}
