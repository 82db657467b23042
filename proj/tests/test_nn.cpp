#include <doctest.h>

#include "pstyle/errors.hpp"
#include "pstyle/nn.hpp"
#include "support.hpp"

using namespace pstyle;
using testing::random_tensor;

namespace {

// Direct 3x3 / 1x1 convolution with reflection padding.
template <typename T>
Tensor3<double> naive_conv(const nn::Conv2d<T>& conv, const Tensor3<T>& x) {
    const int h = x.height(), w = x.width(), k = conv.kernel, r = k / 2;
    Tensor3<double> out(conv.out_channels, h, w);
    for (int o = 0; o < conv.out_channels; ++o) {
        for (int y = 0; y < h; ++y) {
            for (int xx = 0; xx < w; ++xx) {
                double s = conv.bias[o];
                for (int c = 0; c < conv.in_channels; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int sy = nn::reflect_index(y + ky - r, h);
                            const int sx = nn::reflect_index(xx + kx - r, w);
                            s += static_cast<double>(conv.weight[((o * conv.in_channels + c) * k + ky) * k + kx]) *
                                 x.at(c, sy, sx);
                        }
                    }
                }
                out.at(o, y, xx) = s;
            }
        }
    }
    return out;
}

template <typename T>
double dot(const Tensor3<T>& a, const Tensor3<T>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data()[i]) * b.data()[i];
    return s;
}

}  // namespace

TEST_CASE("gemm matches a naive triple loop for every transpose combination") {
    std::mt19937_64 rng(1);
    const int m = 5, n = 7, k = 4;
    std::normal_distribution<double> nd;
    for (int ta = 0; ta < 2; ++ta) {
        for (int tb = 0; tb < 2; ++tb) {
            std::vector<double> a(m * k), b(k * n), c(m * n, 1.0);
            for (auto& v : a) v = nd(rng);
            for (auto& v : b) v = nd(rng);
            auto A = [&](int i, int p) { return ta ? a[p * m + i] : a[i * k + p]; };
            auto B = [&](int p, int j) { return tb ? b[j * k + p] : b[p * n + j]; };
            nn::gemm<double>(ta, tb, m, n, k, 2.0, a.data(), ta ? m : k, b.data(), tb ? k : n, 0.5, c.data(), n);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int p = 0; p < k; ++p) s += A(i, p) * B(p, j);
                    CHECK(c[i * n + j] == doctest::Approx(2.0 * s + 0.5).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("reflect_index mirrors without repeating the edge") {
    CHECK(nn::reflect_index(-1, 5) == 1);
    CHECK(nn::reflect_index(5, 5) == 3);
    CHECK(nn::reflect_index(2, 5) == 2);
    CHECK(nn::reflect_index(-1, 1) == 0);
    CHECK(nn::reflect_index(1, 1) == 0);
}

TEST_CASE("conv_forward agrees with the direct convolution") {
    std::mt19937_64 rng(2);
    for (int kernel : {1, 3}) {
        for (auto [h, w] : {std::pair{1, 1}, std::pair{2, 3}, std::pair{5, 4}, std::pair{7, 9}}) {
            auto conv = nn::Conv2d<double>::zeros(4, 3, kernel);
            nn::kaiming_uniform(conv, rng);
            const auto x = random_tensor<double>(3, h, w, rng);
            const auto got = nn::conv_forward(conv, x);
            const auto want = naive_conv(conv, x);
            REQUIRE(got.same_shape(want));
            for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv_forward rejects a channel mismatch") {
    auto conv = nn::Conv2d<float>::zeros(2, 3, 3);
    CHECK_THROWS_AS(nn::conv_forward(conv, Tensor3<float>(4, 3, 3)), ShapeError);
    CHECK_THROWS_AS(nn::Conv2d<float>::zeros(2, 3, 5), ShapeError);
}

TEST_CASE("conv_backward is the adjoint of conv_forward") {
    std::mt19937_64 rng(3);
    for (int kernel : {1, 3}) {
        auto conv = nn::Conv2d<double>::zeros(3, 2, kernel);
        nn::kaiming_uniform(conv, rng);
        const auto x = random_tensor<double>(2, 4, 5, rng);
        const auto g = random_tensor<double>(3, 4, 5, rng);
        auto zero_bias = conv;
        std::fill(zero_bias.bias.begin(), zero_bias.bias.end(), 0.0);
        const auto dx = nn::conv_backward<double>(zero_bias, x, g, nullptr, true);
        // <conv(x), g> == <x, conv^T(g)> for the linear part.
        CHECK(dot(nn::conv_forward(zero_bias, x), g) == doctest::Approx(dot(x, dx)).epsilon(1e-10));
    }
}

TEST_CASE("conv parameter gradients match central differences") {
    std::mt19937_64 rng(4);
    for (int kernel : {1, 3}) {
        auto conv = nn::Conv2d<double>::zeros(3, 2, kernel);
        nn::kaiming_uniform(conv, rng);
        const auto x = random_tensor<double>(2, 3, 4, rng);
        const auto g = random_tensor<double>(3, 3, 4, rng);
        auto grads = nn::Conv2d<double>::zeros(3, 2, kernel);
        nn::conv_backward(conv, x, g, &grads, false);
        auto loss = [&](const nn::Conv2d<double>& c) { return dot(nn::conv_forward(c, x), g); };
        const double eps = 1e-6;
        for (std::size_t i = 0; i < conv.weight.size(); ++i) {
            auto plus = conv, minus = conv;
            plus.weight[i] += eps;
            minus.weight[i] -= eps;
            CHECK(grads.weight[i] == doctest::Approx((loss(plus) - loss(minus)) / (2 * eps)).epsilon(1e-6));
        }
        for (std::size_t i = 0; i < conv.bias.size(); ++i) {
            auto plus = conv, minus = conv;
            plus.bias[i] += eps;
            minus.bias[i] -= eps;
            CHECK(grads.bias[i] == doctest::Approx((loss(plus) - loss(minus)) / (2 * eps)).epsilon(1e-6));
        }
    }
}

TEST_CASE("maxpool keeps the first maximum and routes gradients to it") {
    Tensor3<double> x(1, 2, 2, std::vector<double>{1.0, 3.0, 3.0, 2.0});
    std::vector<std::uint32_t> arg;
    const auto y = nn::maxpool2_forward(x, &arg);
    REQUIRE(y.size() == 1);
    CHECK(y.data()[0] == 3.0);
    const auto dx = nn::maxpool2_backward(Tensor3<double>(1, 1, 1, 5.0), arg, 2, 2);
    CHECK(dx.storage() == std::vector<double>{0.0, 5.0, 0.0, 0.0});
}

TEST_CASE("maxpool floors odd sizes; pooling and upsampling adjoints hold") {
    std::mt19937_64 rng(5);
    const auto x = random_tensor<double>(2, 5, 7, rng);
    std::vector<std::uint32_t> arg;
    const auto y = nn::maxpool2_forward(x, &arg);
    CHECK(y.height() == 2);
    CHECK(y.width() == 3);
    const auto g = random_tensor<double>(2, 2, 3, rng);
    const auto dx = nn::maxpool2_backward(g, arg, 5, 7);
    CHECK(dot(y, g) == doctest::Approx(dot(x, dx)));

    const auto u = nn::upsample2_forward(y);
    CHECK(u.height() == 4);
    CHECK(u.width() == 6);
    const auto gu = random_tensor<double>(2, 4, 6, rng);
    CHECK(dot(u, gu) == doctest::Approx(dot(y, nn::upsample2_backward(gu))));
}

TEST_CASE("relu backward masks by the forward output") {
    Tensor3<double> x(1, 1, 4, std::vector<double>{-1.0, 0.0, 2.0, 3.0});
    nn::relu_inplace(x);
    CHECK(x.storage() == std::vector<double>{0.0, 0.0, 2.0, 3.0});
    Tensor3<double> g(1, 1, 4, 1.0);
    nn::relu_backward_inplace(x, g);
    CHECK(g.storage() == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("normalize_channels yields zero mean, unit variance and a correct gradient") {
    std::mt19937_64 rng(6);
    const auto x = random_tensor<double>(3, 4, 4, rng, 2.0, 1.5);
    std::vector<double> inv;
    const auto y = nn::normalize_channels(x, nn::kNormEpsilon, &inv);
    const auto m = nn::channel_moments(y);
    for (int c = 0; c < 3; ++c) {
        CHECK(m.mean[c] == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
        CHECK(m.var[c] == doctest::Approx(1.0).epsilon(1e-5));
    }
    const auto g = random_tensor<double>(3, 4, 4, rng);
    const auto dx = nn::normalize_channels_backward(y, inv, g);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < x.size(); i += 5) {
        auto xp = x, xm = x;
        xp.data()[i] += eps;
        xm.data()[i] -= eps;
        const double fd = (dot(nn::normalize_channels(xp), g) - dot(nn::normalize_channels(xm), g)) / (2 * eps);
        CHECK(dx.data()[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("Sequential backward matches finite differences with injected gradients") {
    std::mt19937_64 rng(7);
    nn::Sequential<double> net;
    net.convs.push_back(nn::Conv2d<double>::zeros(3, 2, 3));
    net.convs.push_back(nn::Conv2d<double>::zeros(2, 3, 3));
    for (auto& c : net.convs) nn::kaiming_uniform(c, rng);
    net.conv_names = {"a", "b"};
    net.layers = {{nn::LayerKind::Conv, 0}, {nn::LayerKind::Relu}, {nn::LayerKind::MaxPool},
                  {nn::LayerKind::Conv, 1}, {nn::LayerKind::Upsample}};
    const auto x = random_tensor<double>(2, 6, 6, rng);
    const auto g_out = random_tensor<double>(2, 6, 6, rng);
    const auto g_mid = random_tensor<double>(3, 6, 6, rng);  // at the ReLU output

    auto loss = [&](const nn::Sequential<double>& n, const Tensor3<double>& in) {
        double extra = 0.0;
        const auto out = nn::forward<double>(n, in, nullptr, [&](std::size_t i, const Tensor3<double>& t) {
            if (i == 1) extra = dot(t, g_mid);
        });
        return dot(out, g_out) + extra;
    };

    nn::ForwardTrace<double> trace;
    nn::forward(net, x, &trace);
    auto grads = net.zeros_like();
    const auto dx = nn::backward<double>(net, trace, g_out, &grads, [&](std::size_t i, Tensor3<double>& g) {
        if (i == 1) {
            for (std::size_t j = 0; j < g.size(); ++j) g.data()[j] += g_mid.data()[j];
        }
    });
    const double eps = 1e-6;
    for (std::size_t i = 0; i < x.size(); i += 7) {
        auto xp = x, xm = x;
        xp.data()[i] += eps;
        xm.data()[i] -= eps;
        CHECK(dx.data()[i] == doctest::Approx((loss(net, xp) - loss(net, xm)) / (2 * eps)).epsilon(1e-5));
    }
    for (int ci = 0; ci < 2; ++ci) {
        for (std::size_t i = 0; i < net.convs[ci].weight.size(); i += 11) {
            auto p = net, m = net;
            p.convs[ci].weight[i] += eps;
            m.convs[ci].weight[i] -= eps;
            CHECK(grads.convs[ci].weight[i] == doctest::Approx((loss(p, x) - loss(m, x)) / (2 * eps)).epsilon(1e-5));
        }
    }
}
