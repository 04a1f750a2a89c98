#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "tsg/common/error.hpp"
#include "tsg/nn/ops.hpp"

using namespace tsg;
using namespace tsg::nn;
using tsg::testing::gradcheck;
using tsg::testing::random_tensor;

namespace {

constexpr double kTol = 2e-2;

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor y({n, o, oh, ow});
    for (int in = 0; in < n; ++in)
        for (int oc = 0; oc < o; ++oc)
            for (int yy = 0; yy < oh; ++yy)
                for (int xx = 0; xx < ow; ++xx) {
                    double s = b ? (*b)[oc] : 0.0;
                    for (int ic = 0; ic < c; ++ic)
                        for (int i = 0; i < kh; ++i)
                            for (int j = 0; j < kw; ++j) {
                                const int sy = yy * stride - pad + i, sx = xx * stride - pad + j;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                                s += double(x[((in * c + ic) * h + sy) * wd + sx]) * w[((oc * c + ic) * kh + i) * kw + j];
                            }
                    y[((in * o + oc) * oh + yy) * ow + xx] = static_cast<float>(s);
                }
    return y;
}

}  // namespace

TEST_CASE("conv2d forward matches direct summation") {
    std::mt19937_64 rng(1);
    for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {7, 2, 3}, {1, 2, 0}}) {
        Tensor x = random_tensor({2, 3, 9, 8}, rng), w = random_tensor({5, 3, k, k}, rng), b = random_tensor({5}, rng);
        Tensor y = conv2d(Var(x), Var(w), Var(b), s, p).value();
        Tensor ref = naive_conv(x, w, &b, s, p);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-4));
    }
}

TEST_CASE("conv2d with column chunks that split output rows") {
    std::mt19937_64 rng(12);
    for (auto [c, hw, k, s, p] : {std::tuple{512, 32, 3, 1, 1}, {100, 64, 7, 2, 3}}) {
        Tensor x = random_tensor({1, c, hw, hw}, rng), w = random_tensor({2, c, k, k}, rng);
        Tensor y = conv2d(Var(x), Var(w), Var(), s, p).value();
        Tensor ref = naive_conv(x, w, nullptr, s, p);
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == doctest::Approx(ref[i]).epsilon(1e-3));
        GradGuard on(true);
        Var xv(x, true), wv(w, true);
        Var out = conv2d(xv, wv, Var(), s, p);
        Tensor seed(out.shape(), 1.0f);
        backward(out, seed);
        // d(sum y)/dx[ci, iy, ix] = sum over output pixels touching it of the matching weights.
        const int ho = out.shape()[2];
        for (int probe : {0, 1, hw * hw / 2 + 3, hw * hw - 1}) {
            const int iy = probe / hw, ix = probe % hw;
            double expect = 0;
            for (int oc = 0; oc < 2; ++oc)
                for (int ki = 0; ki < k; ++ki)
                    for (int kj = 0; kj < k; ++kj) {
                        const int ny = iy + p - ki, nx = ix + p - kj;
                        if (ny < 0 || nx < 0 || ny % s || nx % s || ny / s >= ho || nx / s >= ho) continue;
                        expect += w[((oc * c + 5) * k + ki) * k + kj];
                    }
            CHECK(xv.grad()[5 * hw * hw + probe] == doctest::Approx(expect).epsilon(1e-4));
        }
    }
}

TEST_CASE("conv2d gradients") {
    std::mt19937_64 rng(2);
    for (auto [k, s, p] : {std::tuple{3, 1, 1}, {3, 2, 1}, {1, 1, 0}}) {
        auto r = gradcheck([&](auto& v) { return conv2d(v[0], v[1], v[2], s, p); },
                           {random_tensor({2, 3, 6, 5}, rng), random_tensor({4, 3, k, k}, rng), random_tensor({4}, rng)}, rng);
        CHECK(r.max_rel_error < kTol);
    }
    auto r = gradcheck([&](auto& v) { return conv2d(v[0], v[1], Var(), 1, 1); },
                       {random_tensor({1, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng)}, rng);
    CHECK(r.max_rel_error < kTol);
}

TEST_CASE("pointwise_conv equals a 1x1 conv2d and has correct gradients") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({2, 4, 3, 5}, rng), w = random_tensor({6, 4, 1, 1}, rng), b = random_tensor({6}, rng);
    Tensor a = pointwise_conv(Var(x), Var(w), Var(b)).value();
    Tensor c = conv2d(Var(x), Var(w), Var(b), 1, 0).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(c[i]).epsilon(1e-5));
    auto r = gradcheck([](auto& v) { return pointwise_conv(v[0], v[1], v[2]); },
                       {random_tensor({2, 4, 7}, rng), random_tensor({6, 4, 1}, rng), random_tensor({6}, rng)}, rng);
    CHECK(r.max_rel_error < kTol);
}

TEST_CASE("linear and activations") {
    std::mt19937_64 rng(4);
    CHECK(gradcheck([](auto& v) { return linear(v[0], v[1], v[2]); },
                    {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return silu(v[0]); }, {random_tensor({2, 3, 4}, rng)}, rng).max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return relu(v[0]); }, {random_tensor({2, 3, 4}, rng)}, rng, 12, 1e-3f).max_rel_error < kTol);
    Tensor y = relu(Var(Tensor({3}, std::vector<float>{-1.0f, 0.0f, 2.0f}))).value();
    CHECK(y == Tensor({3}, std::vector<float>{0.0f, 0.0f, 2.0f}));
}

TEST_CASE("group_norm normalises each group") {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({2, 4, 3, 3}, rng, 3.0f);
    Tensor g({4}, 1.0f), b({4}, 0.0f);
    Tensor y = group_norm(Var(x), 2, Var(g), Var(b)).value();
    for (int n = 0; n < 2; ++n)
        for (int gr = 0; gr < 2; ++gr) {
            double s = 0, q = 0;
            for (int i = 0; i < 18; ++i) {
                const double v = y[n * 36 + gr * 18 + i];
                s += v;
                q += v * v;
            }
            CHECK(s / 18 == doctest::Approx(0.0).scale(1.0).epsilon(1e-5));
            CHECK(q / 18 == doctest::Approx(1.0).epsilon(1e-3));
        }
    CHECK(gradcheck([](auto& v) { return group_norm(v[0], 2, v[1], v[2]); },
                    {random_tensor({2, 4, 3, 2}, rng), random_tensor({4}, rng), random_tensor({4}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK_THROWS_AS(group_norm(Var(x), 3, Var(g), Var(b)), ModelError);
}

TEST_CASE("batch_norm training statistics and gradients") {
    std::mt19937_64 rng(6);
    Tensor rm({3}, 0.0f), rv({3}, 1.0f);
    Tensor x = random_tensor({4, 3, 2, 2}, rng, 2.0f);
    Tensor g({3}, 1.0f), b({3}, 0.0f);
    batch_norm(Var(x), Var(g), Var(b), rm, rv, true);
    double mean0 = 0;
    for (int n = 0; n < 4; ++n)
        for (int i = 0; i < 4; ++i) mean0 += x[n * 12 + i];
    mean0 /= 16;
    CHECK(rm[0] == doctest::Approx(0.1 * mean0).epsilon(1e-5));
    Tensor rm2 = rm, rv2 = rv;
    auto r = gradcheck([&](auto& v) { return batch_norm(v[0], v[1], v[2], rm2, rv2, true); },
                       {random_tensor({4, 3, 2, 2}, rng), random_tensor({3}, rng), random_tensor({3}, rng)}, rng);
    CHECK(r.max_rel_error < kTol);
    auto e = gradcheck([&](auto& v) { return batch_norm(v[0], v[1], v[2], rm, rv, false); },
                       {random_tensor({2, 3, 2, 2}, rng), random_tensor({3}, rng), random_tensor({3}, rng)}, rng);
    CHECK(e.max_rel_error < kTol);
}

TEST_CASE("elementwise and structural ops") {
    std::mt19937_64 rng(7);
    CHECK(gradcheck([](auto& v) { return add(v[0], v[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return add_channelwise(v[0], v[1]); },
                    {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return scale_shift(v[0], v[1], v[2]); },
                    {random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return slice_channels(v[0], 1, 2); }, {random_tensor({2, 4, 2, 2}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return concat_channels(v[0], v[1]); },
                    {random_tensor({2, 1, 2, 3}, rng), random_tensor({2, 3, 2, 3}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return avg_pool2x2(v[0]); }, {random_tensor({2, 2, 4, 6}, rng)}, rng).max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return upsample_nearest2x(v[0]); }, {random_tensor({2, 2, 3, 2}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return max_pool2d(v[0], 3, 2, 1); }, {random_tensor({2, 2, 5, 5}, rng)}, rng, 12, 1e-3f)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return global_avg_pool(v[0]); }, {random_tensor({2, 3, 3, 2}, rng)}, rng)
              .max_rel_error < kTol);
    CHECK(gradcheck([](auto& v) { return reshape(v[0], {6, 2}); }, {random_tensor({2, 3, 2}, rng)}, rng).max_rel_error < kTol);
}

TEST_CASE("concat and slice are inverse") {
    std::mt19937_64 rng(8);
    Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
    Var c = concat_channels(Var(a), Var(b));
    CHECK(slice_channels(c, 0, 2).value() == a);
    CHECK(slice_channels(c, 2, 3).value() == b);
}

TEST_CASE("qkv attention forward and gradient") {
    std::mt19937_64 rng(9);
    // single head, ch = 2, L = 3: compare against explicit softmax attention
    Tensor qkv = random_tensor({1, 6, 3}, rng);
    Tensor out = qkv_attention(Var(qkv), 1).value();
    const double scale = 1.0 / std::sqrt(2.0);
    for (int t = 0; t < 3; ++t) {
        double w[3], z = 0;
        for (int s = 0; s < 3; ++s) {
            double d = 0;
            for (int c = 0; c < 2; ++c) d += double(qkv[c * 3 + t]) * qkv[(2 + c) * 3 + s];
            w[s] = std::exp(d * scale);
            z += w[s];
        }
        for (int c = 0; c < 2; ++c) {
            double acc = 0;
            for (int s = 0; s < 3; ++s) acc += w[s] / z * qkv[(4 + c) * 3 + s];
            CHECK(out[c * 3 + t] == doctest::Approx(acc).epsilon(1e-5));
        }
    }
    CHECK(gradcheck([](auto& v) { return qkv_attention(v[0], 2); }, {random_tensor({2, 12, 5}, rng)}, rng).max_rel_error <
          kTol);
}

TEST_CASE("losses") {
    std::mt19937_64 rng(10);
    Tensor target = random_tensor({2, 3}, rng);
    CHECK(gradcheck([&](auto& v) { return mse_loss(v[0], target); }, {random_tensor({2, 3}, rng)}, rng).max_rel_error < kTol);
    std::vector<int> labels{0, 2, 1};
    CHECK(gradcheck([&](auto& v) { return softmax_cross_entropy(v[0], labels); }, {random_tensor({3, 3}, rng)}, rng)
              .max_rel_error < kTol);
    Tensor logits({1, 2}, std::vector<float>{0.0f, 0.0f});
    std::vector<int> one{1};
    CHECK(softmax_cross_entropy(Var(logits), one).value()[0] == doctest::Approx(std::log(2.0)));
    std::vector<int> bad{2};
    CHECK_THROWS_AS(softmax_cross_entropy(Var(logits), bad), ModelError);
}

TEST_CASE("timestep embedding layout") {
    std::vector<float> ts{0.0f, 10.0f};
    Tensor e = timestep_embedding(ts, 6);
    REQUIRE(e.shape() == Shape{2, 6});
    for (int i = 0; i < 3; ++i) {
        CHECK(e[i] == doctest::Approx(1.0));
        CHECK(e[3 + i] == doctest::Approx(0.0));
        const double f = std::exp(-std::log(10000.0) * i / 3.0);
        CHECK(e[6 + i] == doctest::Approx(std::cos(10.0 * f)).epsilon(1e-5));
        CHECK(e[9 + i] == doctest::Approx(std::sin(10.0 * f)).epsilon(1e-5));
    }
}

TEST_CASE("no graph is recorded outside grad mode") {
    Var w(Tensor({2}, 1.0f), true);
    Var y = silu(w);
    CHECK_FALSE(y.requires_grad());
    GradGuard on(true);
    CHECK(silu(w).requires_grad());
}
