#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pstyle/tensor.hpp"

/// Minimal CPU building blocks for the encoder, attention block and decoder:
/// convolutions with hand-written backward passes, pooling, upsampling and
/// channel normalization. Instantiated for float (production) and double
/// (gradient checking).
namespace pstyle::nn {

/// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);

/// Convolution with `kernel` in {1, 3}; 3x3 uses 1-pixel reflection padding.
/// Weight layout is OIHW.
template <typename T>
struct Conv2d {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 1;
    std::vector<T> weight;
    std::vector<T> bias;

    static Conv2d zeros(int out_channels, int in_channels, int kernel);

    std::size_t fan_in() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }

    template <typename U>
    Conv2d<U> cast() const {
        return Conv2d<U>{out_channels, in_channels, kernel,
                         std::vector<U>(weight.begin(), weight.end()),
                         std::vector<U>(bias.begin(), bias.end())};
    }
};

/// Uniform fan-in initialization: weights in +-sqrt(6/fan_in), biases in
/// +-1/sqrt(fan_in).
template <typename T>
void kaiming_uniform(Conv2d<T>& conv, std::mt19937_64& rng);

/// Index of a reflected coordinate for one pixel of padding. Size-1 axes
/// fall back to replication.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

template <typename T>
Tensor3<T> conv_forward(const Conv2d<T>& conv, const Tensor3<T>& x);

/// Backward pass of conv_forward. Parameter gradients are accumulated into
/// `param_grad` when non-null; the input gradient is returned when requested
/// (an empty tensor otherwise).
template <typename T>
Tensor3<T> conv_backward(const Conv2d<T>& conv, const Tensor3<T>& x, const Tensor3<T>& grad_out,
                         Conv2d<T>* param_grad, bool want_input_grad);

template <typename T>
void relu_inplace(Tensor3<T>& x);

/// grad *= (output > 0)
template <typename T>
void relu_backward_inplace(const Tensor3<T>& output, Tensor3<T>& grad);

/// 2x2 max pooling, stride 2, floor on odd sizes. Records the winning input
/// offset per output element when `argmax` is non-null (first maximum wins).
template <typename T>
Tensor3<T> maxpool2_forward(const Tensor3<T>& x, std::vector<std::uint32_t>* argmax);

template <typename T>
Tensor3<T> maxpool2_backward(const Tensor3<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                             int in_height, int in_width);

template <typename T>
Tensor3<T> upsample2_forward(const Tensor3<T>& x);

template <typename T>
Tensor3<T> upsample2_backward(const Tensor3<T>& grad_out);

/// Per-channel spatial mean and population variance, accumulated in double.
struct Moments {
    std::vector<double> mean;
    std::vector<double> var;
};

template <typename T>
Moments channel_moments(const Tensor3<T>& x);

inline constexpr double kNormEpsilon = 1e-5;

/// (x - mean) / sqrt(var + eps) per channel. When `inv_std` is non-null it
/// receives 1/sqrt(var + eps) per channel for the backward pass.
template <typename T>
Tensor3<T> normalize_channels(const Tensor3<T>& x, double eps = kNormEpsilon,
                              std::vector<double>* inv_std = nullptr);

/// Backward of normalize_channels given its output and saved inverse stds.
template <typename T>
Tensor3<T> normalize_channels_backward(const Tensor3<T>& normalized, const std::vector<double>& inv_std,
                                       const Tensor3<T>& grad_out);

enum class LayerKind { Conv, Relu, MaxPool, Upsample };

struct LayerSpec {
    LayerKind kind;
    int conv_index = -1;
};

/// Straight chain of layers. Convolutions are stored separately so parameter
/// sets can be enumerated and named.
template <typename T>
struct Sequential {
    std::vector<LayerSpec> layers;
    std::vector<Conv2d<T>> convs;
    std::vector<std::string> conv_names;

    template <typename U>
    Sequential<U> cast() const {
        Sequential<U> out;
        out.layers = layers;
        out.conv_names = conv_names;
        for (const auto& c : convs) out.convs.push_back(c.template cast<U>());
        return out;
    }

    /// Same topology, zero parameters; used as a gradient accumulator.
    Sequential zeros_like() const {
        Sequential out;
        out.layers = layers;
        out.conv_names = conv_names;
        for (const auto& c : convs) out.convs.push_back(Conv2d<T>::zeros(c.out_channels, c.in_channels, c.kernel));
        return out;
    }
};

/// activations[0] is the input, activations[i + 1] the output of layer i.
template <typename T>
struct ForwardTrace {
    std::vector<Tensor3<T>> activations;
    std::vector<std::vector<std::uint32_t>> argmax;
};


/// Runs the chain. `on_output(i, out)` is invoked after every layer when set.
template <typename T>
Tensor3<T> forward(const Sequential<T>& net, Tensor3<T> x, ForwardTrace<T>* trace = nullptr,
                   const std::function<void(std::size_t, const Tensor3<T>&)>& on_output = {});

/// Backpropagates through a traced forward pass. `grad_out` may be empty (no
/// gradient at the final output). `inject(i, grad)` may add extra gradient
/// at the output of layer i before that layer is processed. Parameter
/// gradients accumulate into `param_grads` when non-null.
template <typename T>
Tensor3<T> backward(const Sequential<T>& net, const ForwardTrace<T>& trace, Tensor3<T> grad_out,
                    Sequential<T>* param_grads,
                    const std::function<void(std::size_t, Tensor3<T>&)>& inject = {});

}  // namespace pstyle::nn
