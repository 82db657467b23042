#include "pstyle/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace pstyle::nn {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Stride = Eigen::OuterStride<>;
    Eigen::Map<Mat, 0, Stride> cm(c, m, n, Stride(ldc));
    const Eigen::Map<const Mat, 0, Stride> am(a, trans_a ? k : m, trans_a ? m : k, Stride(lda));
    const Eigen::Map<const Mat, 0, Stride> bm(b, trans_b ? n : k, trans_b ? k : n, Stride(ldb));
    if (beta == T(0)) {
        cm.setZero();
    } else if (beta != T(1)) {
        cm *= beta;
    }
    if (!trans_a && !trans_b) cm.noalias() += alpha * am * bm;
    else if (trans_a && !trans_b) cm.noalias() += alpha * am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() += alpha * am * bm.transpose();
    else cm.noalias() += alpha * am.transpose() * bm.transpose();
}

template void gemm<float>(bool, bool, int, int, int, float, const float*, int, const float*, int, float, float*, int);
template void gemm<double>(bool, bool, int, int, int, double, const double*, int, const double*, int, double, double*,
                           int);

template <typename T>
Conv2d<T> Conv2d<T>::zeros(int out_channels, int in_channels, int kernel) {
    if (kernel != 1 && kernel != 3) throw ShapeError("only 1x1 and 3x3 convolutions are supported");
    Conv2d c;
    c.out_channels = out_channels;
    c.in_channels = in_channels;
    c.kernel = kernel;
    c.weight.assign(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel, T(0));
    c.bias.assign(out_channels, T(0));
    return c;
}

template <typename T>
void kaiming_uniform(Conv2d<T>& conv, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(conv.fan_in());
    std::uniform_real_distribution<double> w(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<double> b(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (auto& v : conv.weight) v = static_cast<T>(w(rng));
    for (auto& v : conv.bias) v = static_cast<T>(b(rng));
}

namespace {

// Reflection-padded copy laid out as C planes of (H+2) x (W+2), followed by
// two spare elements so the last shifted view stays in bounds.
template <typename T>
std::vector<T> reflect_pad(const Tensor3<T>& x) {
    const int h = x.height(), w = x.width();
    const int wp = w + 2;
    const std::size_t plane = static_cast<std::size_t>(h + 2) * wp;
    std::vector<T> out(plane * x.channels() + 2, T(0));
    for (int c = 0; c < x.channels(); ++c) {
        T* dst = out.data() + plane * c;
        const T* src = x.data() + x.plane_size() * c;
        for (int py = 0; py < h + 2; ++py) {
            const T* row = src + static_cast<std::size_t>(reflect_index(py - 1, h)) * w;
            T* drow = dst + static_cast<std::size_t>(py) * wp;
            drow[0] = row[reflect_index(-1, w)];
            std::copy(row, row + w, drow + 1);
            drow[w + 1] = row[reflect_index(w, w)];
        }
    }
    return out;
}

// OIHW -> [tap][O][C]
template <typename T>
std::vector<T> tap_major(const Conv2d<T>& conv) {
    const int o = conv.out_channels, c = conv.in_channels;
    std::vector<T> taps(static_cast<std::size_t>(9) * o * c);
    for (int oi = 0; oi < o; ++oi) {
        for (int ci = 0; ci < c; ++ci) {
            const T* w = conv.weight.data() + (static_cast<std::size_t>(oi) * c + ci) * 9;
            for (int t = 0; t < 9; ++t) taps[(static_cast<std::size_t>(t) * o + oi) * c + ci] = w[t];
        }
    }
    return taps;
}

template <typename T>
void check_input(const Conv2d<T>& conv, const Tensor3<T>& x) {
    if (x.channels() != conv.in_channels) {
        throw ShapeError("convolution expects " + std::to_string(conv.in_channels) + " input channels, got " +
                         x.shape_string());
    }
    if (x.height() < 1 || x.width() < 1) throw DimensionError("convolution input has empty spatial extent");
}

}  // namespace

template <typename T>
Tensor3<T> conv_forward(const Conv2d<T>& conv, const Tensor3<T>& x) {
    check_input(conv, x);
    const int o = conv.out_channels, c = conv.in_channels;
    const int h = x.height(), w = x.width();
    Tensor3<T> out(o, h, w);

    if (conv.kernel == 1) {
        const int n = h * w;
        for (int oi = 0; oi < o; ++oi) std::fill_n(out.data() + static_cast<std::size_t>(oi) * n, n, conv.bias[oi]);
        gemm<T>(false, false, o, n, c, T(1), conv.weight.data(), c, x.data(), n, T(1), out.data(), n);
        return out;
    }

    // 3x3: each tap is a GEMM against a shifted view of the padded input,
    // evaluated on a (W+2)-wide grid whose last two columns are discarded.
    const int wp = w + 2;
    const int plane = (h + 2) * wp;
    const int n = h * wp;
    const auto padded = reflect_pad(x);
    const auto taps = tap_major(conv);
    std::vector<T> ext(static_cast<std::size_t>(o) * n);
    for (int oi = 0; oi < o; ++oi) std::fill_n(ext.data() + static_cast<std::size_t>(oi) * n, n, conv.bias[oi]);
    for (int t = 0; t < 9; ++t) {
        const int offset = (t / 3) * wp + (t % 3);
        gemm<T>(false, false, o, n, c, T(1), taps.data() + static_cast<std::size_t>(t) * o * c, c,
                padded.data() + offset, plane, T(1), ext.data(), n);
    }
    for (int oi = 0; oi < o; ++oi) {
        for (int y = 0; y < h; ++y) {
            const T* src = ext.data() + static_cast<std::size_t>(oi) * n + static_cast<std::size_t>(y) * wp;
            std::copy(src, src + w, &out.at(oi, y, 0));
        }
    }
    return out;
}

template <typename T>
Tensor3<T> conv_backward(const Conv2d<T>& conv, const Tensor3<T>& x, const Tensor3<T>& grad_out,
                         Conv2d<T>* param_grad, bool want_input_grad) {
    check_input(conv, x);
    const int o = conv.out_channels, c = conv.in_channels;
    const int h = x.height(), w = x.width();
    if (grad_out.channels() != o || grad_out.height() != h || grad_out.width() != w) {
        throw ShapeError("convolution gradient shape mismatch");
    }

    if (param_grad) {
        for (int oi = 0; oi < o; ++oi) {
            double s = 0.0;
            for (T v : grad_out.plane(oi)) s += v;
            param_grad->bias[oi] += static_cast<T>(s);
        }
    }

    if (conv.kernel == 1) {
        const int n = h * w;
        if (param_grad) {
            gemm<T>(false, true, o, c, n, T(1), grad_out.data(), n, x.data(), n, T(1), param_grad->weight.data(), c);
        }
        if (!want_input_grad) return {};
        Tensor3<T> dx(c, h, w);
        gemm<T>(true, false, c, n, o, T(1), conv.weight.data(), c, grad_out.data(), n, T(0), dx.data(), n);
        return dx;
    }

    const int wp = w + 2;
    const int plane = (h + 2) * wp;
    const int n = h * wp;
    std::vector<T> gext(static_cast<std::size_t>(o) * n, T(0));
    for (int oi = 0; oi < o; ++oi) {
        for (int y = 0; y < h; ++y) {
            const T* src = &grad_out.at(oi, y, 0);
            std::copy(src, src + w, gext.data() + static_cast<std::size_t>(oi) * n + static_cast<std::size_t>(y) * wp);
        }
    }

    if (param_grad) {
        const auto padded = reflect_pad(x);
        std::vector<T> dtap(static_cast<std::size_t>(o) * c);
        for (int t = 0; t < 9; ++t) {
            const int offset = (t / 3) * wp + (t % 3);
            gemm<T>(false, true, o, c, n, T(1), gext.data(), n, padded.data() + offset, plane, T(0), dtap.data(), c);
            for (int oi = 0; oi < o; ++oi) {
                T* wrow = param_grad->weight.data() + static_cast<std::size_t>(oi) * c * 9;
                const T* drow = dtap.data() + static_cast<std::size_t>(oi) * c;
                for (int ci = 0; ci < c; ++ci) wrow[ci * 9 + t] += drow[ci];
            }
        }
    }
    if (!want_input_grad) return {};

    const auto taps = tap_major(conv);
    std::vector<T> dpad(static_cast<std::size_t>(plane) * c + 2, T(0));
    for (int t = 0; t < 9; ++t) {
        const int offset = (t / 3) * wp + (t % 3);
        gemm<T>(true, false, c, n, o, T(1), taps.data() + static_cast<std::size_t>(t) * o * c, c, gext.data(), n,
                T(1), dpad.data() + offset, plane);
    }
    // Adjoint of the reflection padding.
    Tensor3<T> dx(c, h, w);
    for (int ci = 0; ci < c; ++ci) {
        const T* src = dpad.data() + static_cast<std::size_t>(plane) * ci;
        for (int py = 0; py < h + 2; ++py) {
            const int y = reflect_index(py - 1, h);
            for (int px = 0; px < wp; ++px) dx.at(ci, y, reflect_index(px - 1, w)) += src[py * wp + px];
        }
    }
    return dx;
}

template <typename T>
void relu_inplace(Tensor3<T>& x) {
    for (auto& v : x.storage()) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward_inplace(const Tensor3<T>& output, Tensor3<T>& grad) {
    const T* o = output.data();
    T* g = grad.data();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(o[i] > T(0))) g[i] = T(0);
    }
}

template <typename T>
Tensor3<T> maxpool2_forward(const Tensor3<T>& x, std::vector<std::uint32_t>* argmax) {
    const int oh = x.height() / 2, ow = x.width() / 2;
    Tensor3<T> out(x.channels(), oh, ow);
    if (argmax) argmax->assign(out.size(), 0);
    for (int c = 0; c < x.channels(); ++c) {
        for (int y = 0; y < oh; ++y) {
            for (int xo = 0; xo < ow; ++xo) {
                std::uint32_t best = static_cast<std::uint32_t>(2 * y * x.width() + 2 * xo);
                T best_v = x.plane(c)[best];
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const auto idx = static_cast<std::uint32_t>((2 * y + dy) * x.width() + 2 * xo + dx);
                        const T v = x.plane(c)[idx];
                        if (v > best_v) {
                            best_v = v;
                            best = idx;
                        }
                    }
                }
                out.at(c, y, xo) = best_v;
                if (argmax) (*argmax)[c * out.plane_size() + static_cast<std::size_t>(y) * ow + xo] = best;
            }
        }
    }
    return out;
}

template <typename T>
Tensor3<T> maxpool2_backward(const Tensor3<T>& grad_out, const std::vector<std::uint32_t>& argmax, int in_height,
                             int in_width) {
    Tensor3<T> dx(grad_out.channels(), in_height, in_width);
    for (int c = 0; c < grad_out.channels(); ++c) {
        auto dst = dx.plane(c);
        auto src = grad_out.plane(c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[argmax[c * grad_out.plane_size() + i]] += src[i];
    }
    return dx;
}

template <typename T>
Tensor3<T> upsample2_forward(const Tensor3<T>& x) {
    Tensor3<T> out(x.channels(), x.height() * 2, x.width() * 2);
    for (int c = 0; c < x.channels(); ++c) {
        for (int y = 0; y < out.height(); ++y) {
            for (int xo = 0; xo < out.width(); ++xo) out.at(c, y, xo) = x.at(c, y / 2, xo / 2);
        }
    }
    return out;
}

template <typename T>
Tensor3<T> upsample2_backward(const Tensor3<T>& grad_out) {
    Tensor3<T> dx(grad_out.channels(), grad_out.height() / 2, grad_out.width() / 2);
    for (int c = 0; c < grad_out.channels(); ++c) {
        for (int y = 0; y < grad_out.height(); ++y) {
            for (int x = 0; x < grad_out.width(); ++x) dx.at(c, y / 2, x / 2) += grad_out.at(c, y, x);
        }
    }
    return dx;
}

template <typename T>
Moments channel_moments(const Tensor3<T>& x) {
    Moments m;
    m.mean.resize(x.channels());
    m.var.resize(x.channels());
    const double n = static_cast<double>(x.plane_size());
    for (int c = 0; c < x.channels(); ++c) {
        double s = 0.0;
        for (T v : x.plane(c)) s += v;
        const double mean = s / n;
        double ss = 0.0;
        for (T v : x.plane(c)) ss += (v - mean) * (v - mean);
        m.mean[c] = mean;
        m.var[c] = ss / n;
    }
    return m;
}

template <typename T>
Tensor3<T> normalize_channels(const Tensor3<T>& x, double eps, std::vector<double>* inv_std) {
    const Moments m = channel_moments(x);
    Tensor3<T> out(x.channels(), x.height(), x.width());
    if (inv_std) inv_std->resize(x.channels());
    for (int c = 0; c < x.channels(); ++c) {
        const double inv = 1.0 / std::sqrt(m.var[c] + eps);
        if (inv_std) (*inv_std)[c] = inv;
        auto src = x.plane(c);
        auto dst = out.plane(c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>((src[i] - m.mean[c]) * inv);
    }
    return out;
}

template <typename T>
Tensor3<T> normalize_channels_backward(const Tensor3<T>& normalized, const std::vector<double>& inv_std,
                                       const Tensor3<T>& grad_out) {
    Tensor3<T> dx(normalized.channels(), normalized.height(), normalized.width());
    const double n = static_cast<double>(normalized.plane_size());
    for (int c = 0; c < normalized.channels(); ++c) {
        auto y = normalized.plane(c);
        auto g = grad_out.plane(c);
        double sum_g = 0.0, sum_gy = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            sum_g += g[i];
            sum_gy += static_cast<double>(g[i]) * y[i];
        }
        const double mg = sum_g / n, mgy = sum_gy / n;
        auto d = dx.plane(c);
        for (std::size_t i = 0; i < y.size(); ++i) d[i] = static_cast<T>(inv_std[c] * (g[i] - mg - y[i] * mgy));
    }
    return dx;
}

template <typename T>
Tensor3<T> forward(const Sequential<T>& net, Tensor3<T> x, ForwardTrace<T>* trace,
                   const std::function<void(std::size_t, const Tensor3<T>&)>& on_output) {
    if (trace) {
        trace->activations.clear();
        trace->argmax.assign(net.layers.size(), {});
        trace->activations.push_back(x);
    }
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& layer = net.layers[i];
        switch (layer.kind) {
            case LayerKind::Conv: x = conv_forward(net.convs[layer.conv_index], x); break;
            case LayerKind::Relu: relu_inplace(x); break;
            case LayerKind::MaxPool: x = maxpool2_forward(x, trace ? &trace->argmax[i] : nullptr); break;
            case LayerKind::Upsample: x = upsample2_forward(x); break;
        }
        if (trace) trace->activations.push_back(x);
        if (on_output) on_output(i, x);
    }
    return x;
}

template <typename T>
Tensor3<T> backward(const Sequential<T>& net, const ForwardTrace<T>& trace, Tensor3<T> grad, Sequential<T>* param_grads,
                    const std::function<void(std::size_t, Tensor3<T>&)>& inject) {
    if (trace.activations.size() != net.layers.size() + 1) throw ShapeError("forward trace does not match network");
    const auto& last = trace.activations.back();
    if (grad.empty()) grad = Tensor3<T>(last.channels(), last.height(), last.width());
    for (std::size_t idx = net.layers.size(); idx-- > 0;) {
        if (inject) inject(idx, grad);
        const LayerSpec& layer = net.layers[idx];
        const Tensor3<T>& input = trace.activations[idx];
        switch (layer.kind) {
            case LayerKind::Conv:
                grad = conv_backward(net.convs[layer.conv_index], input, grad,
                                     param_grads ? &param_grads->convs[layer.conv_index] : nullptr, true);
                break;
            case LayerKind::Relu: relu_backward_inplace(trace.activations[idx + 1], grad); break;
            case LayerKind::MaxPool:
                grad = maxpool2_backward(grad, trace.argmax[idx], input.height(), input.width());
                break;
            case LayerKind::Upsample: grad = upsample2_backward(grad); break;
        }
    }
    return grad;
}

#define PSTYLE_INSTANTIATE(T)                                                                                   \
    template struct Conv2d<T>;                                                                                  \
    template void kaiming_uniform<T>(Conv2d<T>&, std::mt19937_64&);                                             \
    template Tensor3<T> conv_forward<T>(const Conv2d<T>&, const Tensor3<T>&);                                   \
    template Tensor3<T> conv_backward<T>(const Conv2d<T>&, const Tensor3<T>&, const Tensor3<T>&, Conv2d<T>*,     \
                                         bool);                                                                 \
    template void relu_inplace<T>(Tensor3<T>&);                                                                 \
    template void relu_backward_inplace<T>(const Tensor3<T>&, Tensor3<T>&);                                     \
    template Tensor3<T> maxpool2_forward<T>(const Tensor3<T>&, std::vector<std::uint32_t>*);                    \
    template Tensor3<T> maxpool2_backward<T>(const Tensor3<T>&, const std::vector<std::uint32_t>&, int, int);   \
    template Tensor3<T> upsample2_forward<T>(const Tensor3<T>&);                                                \
    template Tensor3<T> upsample2_backward<T>(const Tensor3<T>&);                                               \
    template Moments channel_moments<T>(const Tensor3<T>&);                                                     \
    template Tensor3<T> normalize_channels<T>(const Tensor3<T>&, double, std::vector<double>*);                 \
    template Tensor3<T> normalize_channels_backward<T>(const Tensor3<T>&, const std::vector<double>&,           \
                                                       const Tensor3<T>&);                                      \
    template Tensor3<T> forward<T>(const Sequential<T>&, Tensor3<T>, ForwardTrace<T>*,                          \
                                   const std::function<void(std::size_t, const Tensor3<T>&)>&);                 \
    template Tensor3<T> backward<T>(const Sequential<T>&, const ForwardTrace<T>&, Tensor3<T>, Sequential<T>*,   \
                                    const std::function<void(std::size_t, Tensor3<T>&)>&);

PSTYLE_INSTANTIATE(float)
PSTYLE_INSTANTIATE(double)

#undef PSTYLE_INSTANTIATE

}  // namespace pstyle::nn
