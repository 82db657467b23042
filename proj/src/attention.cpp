#include <algorithm>
#include <cmath>
#include <limits>

#include "pstyle/stylizer.hpp"

namespace pstyle {

template <typename T>
Tensor3<T> adain(const Tensor3<T>& x, const ChannelStats& target) {
    const int c = x.channels();
    if (target.mean.size() != static_cast<std::size_t>(c) || target.std.size() != static_cast<std::size_t>(c)) {
        throw ShapeError("AdaIN target has " + std::to_string(target.mean.size()) + " channels, features have " +
                         std::to_string(c));
    }
    const nn::Moments m = nn::channel_moments(x);
    Tensor3<T> out(c, x.height(), x.width());
    for (int ch = 0; ch < c; ++ch) {
        const double scale = target.std[ch] / std::sqrt(m.var[ch] + kAdainEpsilon);
        auto src = x.plane(ch);
        auto dst = out.plane(ch);
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] = static_cast<T>((src[i] - m.mean[ch]) * scale + target.mean[ch]);
        }
    }
    return out;
}

FeatureMap adain(const FeatureMap& x, const ChannelStats& target) {
    return FeatureMap(x.layer(), adain(x.values(), target));
}

template <typename T>
std::vector<Tensor3<T>> first_stylize_tensor(const Tensor3<T>& content, const FeaturePalette& palette) {
    if (palette.k() == 0) throw CardinalityError("empty palette");
    std::vector<Tensor3<T>> out;
    out.reserve(palette.k());
    for (const auto& entry : palette.entries) {
        if (entry.channels() != content.channels()) {
            throw ShapeError("palette entry has " + std::to_string(entry.channels()) +
                             " channels, content features have " + std::to_string(content.channels()));
        }
        out.push_back(adain(content, palette_stats(entry)));
    }
    return out;
}

std::vector<FeatureMap> first_stylize(const FeatureMap& content, const FeaturePalette& palette) {
    auto maps = first_stylize_tensor(content.values(), palette);
    std::vector<FeatureMap> out;
    out.reserve(maps.size());
    for (auto& m : maps) out.emplace_back(content.layer(), std::move(m));
    return out;
}

template <typename T>
ACParamsT<T> ACParamsT<T>::zeros(int channels) {
    return {nn::Conv2d<T>::zeros(channels, channels, 1), nn::Conv2d<T>::zeros(channels, channels, 1),
            nn::Conv2d<T>::zeros(channels, channels, 1), nn::Conv2d<T>::zeros(channels, channels, 3)};
}

template <typename T>
ACParamsT<T> ACParamsT<T>::random(int channels, std::mt19937_64& rng) {
    auto p = zeros(channels);
    nn::kaiming_uniform(p.f, rng);
    nn::kaiming_uniform(p.g, rng);
    nn::kaiming_uniform(p.h, rng);
    nn::kaiming_uniform(p.merge, rng);
    return p;
}

template <typename T>
std::vector<std::vector<T>*> ACParamsT<T>::parameters() {
    return {&f.weight, &f.bias, &g.weight, &g.bias, &h.weight, &h.bias, &merge.weight, &merge.bias};
}

template <typename T>
std::vector<const std::vector<T>*> ACParamsT<T>::parameters() const {
    return {&f.weight, &f.bias, &g.weight, &g.bias, &h.weight, &h.bias, &merge.weight, &merge.bias};
}

namespace {

template <typename T>
void softmax_rows(AttentionMap<T>& a) {
    for (int i = 0; i < a.rows; ++i) {
        T* row = a.weights.data() + static_cast<std::size_t>(i) * a.cols;
        const T mx = *std::max_element(row, row + a.cols);
        double sum = 0.0;
        for (int j = 0; j < a.cols; ++j) {
            const T e = std::exp(row[j] - mx);
            // Subnormal weights are numerically irrelevant but stall the GEMMs.
            row[j] = e < std::numeric_limits<T>::min() ? T(0) : e;
            sum += row[j];
        }
        const T inv = static_cast<T>(1.0 / sum);
        for (int j = 0; j < a.cols; ++j) row[j] *= inv;
    }
}

// Element-wise sum whose result is independent of the order of `parts`.
template <typename T>
Tensor3<T> order_free_sum(const std::vector<Tensor3<T>>& parts) {
    Tensor3<T> out = parts[0];
    if (parts.size() == 1) return out;
    std::vector<T> buf(parts.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t k = 0; k < parts.size(); ++k) buf[k] = parts[k].data()[i];
        std::sort(buf.begin(), buf.end());
        T s = buf[0];
        for (std::size_t k = 1; k < buf.size(); ++k) s += buf[k];
        out.data()[i] = s;
    }
    return out;
}

}  // namespace

template <typename T>
Tensor3<T> attention_branch_sum(const Tensor3<T>& content, const std::vector<Tensor3<T>>& stylized,
                                const ACParamsT<T>& params, AttentionCache<T>* cache,
                                std::vector<AttentionMap<T>>* maps) {
    if (stylized.empty()) throw CardinalityError("attention coloring needs at least one stylized feature map");
    if (content.channels() != params.channels()) {
        throw ShapeError("attention block expects " + std::to_string(params.channels()) + " channels, got " +
                         content.shape_string());
    }
    for (const auto& s : stylized) {
        if (!s.same_shape(content)) {
            throw ShapeError("stylized feature map " + s.shape_string() + " does not match content " +
                             content.shape_string());
        }
    }
    const int c = content.channels();
    const int cq = params.f.out_channels;
    const int n = static_cast<int>(content.plane_size());

    std::vector<double> content_inv_std;
    Tensor3<T> content_norm = nn::normalize_channels(content, nn::kNormEpsilon, &content_inv_std);
    Tensor3<T> query = nn::conv_forward(params.f, content_norm);

    if (maps) maps->clear();
    std::vector<Tensor3<T>> branches;
    branches.reserve(stylized.size());
    for (const auto& s : stylized) {
        std::vector<double> unused;
        Tensor3<T> s_norm = nn::normalize_channels(s, nn::kNormEpsilon, &unused);
        Tensor3<T> key = nn::conv_forward(params.g, s_norm);
        Tensor3<T> value = nn::conv_forward(params.h, s);

        AttentionMap<T> att{n, n, std::vector<T>(static_cast<std::size_t>(n) * n)};
        nn::gemm<T>(true, false, n, n, cq, T(1), query.data(), n, key.data(), n, T(0), att.weights.data(), n);
        softmax_rows(att);

        Tensor3<T> branch(c, content.height(), content.width());
        nn::gemm<T>(false, true, c, n, n, T(1), value.data(), n, att.weights.data(), n, T(0), branch.data(), n);
        branches.push_back(std::move(branch));

        if (maps) maps->push_back(att);
        if (cache) {
            cache->stylized.push_back(s);
            cache->stylized_norm.push_back(std::move(s_norm));
            cache->keys.push_back(std::move(key));
            cache->values.push_back(std::move(value));
            cache->attention.push_back(std::move(att));
        }
    }
    Tensor3<T> sum = order_free_sum(branches);
    if (cache) {
        cache->content_norm = std::move(content_norm);
        cache->content_inv_std = std::move(content_inv_std);
        cache->query = std::move(query);
        cache->branch_sum = sum;
    }
    return sum;
}

template <typename T>
Tensor3<T> attention_color_tensor(const Tensor3<T>& content, const std::vector<Tensor3<T>>& stylized,
                                  const ACParamsT<T>& params, AttentionCache<T>* cache,
                                  std::vector<AttentionMap<T>>* maps) {
    if (cache) *cache = AttentionCache<T>{};
    return nn::conv_forward(params.merge, attention_branch_sum(content, stylized, params, cache, maps));
}

template <typename T>
void attention_color_backward(const ACParamsT<T>& params, const AttentionCache<T>& cache, const Tensor3<T>& grad_out,
                              ACParamsT<T>& grads) {
    const int c = params.channels();
    const int cq = params.f.out_channels;
    const int n = static_cast<int>(cache.branch_sum.plane_size());

    const Tensor3<T> dsum = nn::conv_backward(params.merge, cache.branch_sum, grad_out, &grads.merge, true);

    Tensor3<T> dquery(cq, cache.query.height(), cache.query.width());
    std::vector<T> dlogits(static_cast<std::size_t>(n) * n);
    for (std::size_t k = 0; k < cache.attention.size(); ++k) {
        const auto& att = cache.attention[k].weights;
        const auto& value = cache.values[k];
        const auto& key = cache.keys[k];

        Tensor3<T> dvalue(c, value.height(), value.width());
        nn::gemm<T>(false, false, c, n, n, T(1), dsum.data(), n, att.data(), n, T(0), dvalue.data(), n);
        nn::gemm<T>(true, false, n, n, c, T(1), dsum.data(), n, value.data(), n, T(0), dlogits.data(), n);
        // Softmax backward, in place: dL = A * (dA - <dA, A>_row).
        for (int i = 0; i < n; ++i) {
            T* d = dlogits.data() + static_cast<std::size_t>(i) * n;
            const T* a = att.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += static_cast<double>(d[j]) * a[j];
            for (int j = 0; j < n; ++j) d[j] = a[j] * (d[j] - static_cast<T>(dot));
        }
        nn::gemm<T>(false, true, cq, n, n, T(1), key.data(), n, dlogits.data(), n, T(1), dquery.data(), n);
        Tensor3<T> dkey(cq, key.height(), key.width());
        nn::gemm<T>(false, false, cq, n, n, T(1), cache.query.data(), n, dlogits.data(), n, T(0), dkey.data(), n);

        nn::conv_backward(params.g, cache.stylized_norm[k], dkey, &grads.g, false);
        nn::conv_backward(params.h, cache.stylized[k], dvalue, &grads.h, false);
    }
    nn::conv_backward(params.f, cache.content_norm, dquery, &grads.f, false);
}

FeatureMap attention_color(const FeatureMap& content, const std::vector<FeatureMap>& stylized, const ACParams& params,
                           std::vector<AttentionMap<float>>* maps) {
    std::vector<Tensor3<float>> s;
    s.reserve(stylized.size());
    for (const auto& m : stylized) s.push_back(m.values());
    return FeatureMap(content.layer(), attention_color_tensor<float>(content.values(), s, params, nullptr, maps));
}

#define PSTYLE_INSTANTIATE(T)                                                                                       \
    template Tensor3<T> adain<T>(const Tensor3<T>&, const ChannelStats&);                                           \
    template std::vector<Tensor3<T>> first_stylize_tensor<T>(const Tensor3<T>&, const FeaturePalette&);             \
    template struct ACParamsT<T>;                                                                                   \
    template Tensor3<T> attention_branch_sum<T>(const Tensor3<T>&, const std::vector<Tensor3<T>>&,                  \
                                                const ACParamsT<T>&, AttentionCache<T>*,                            \
                                                std::vector<AttentionMap<T>>*);                                     \
    template Tensor3<T> attention_color_tensor<T>(const Tensor3<T>&, const std::vector<Tensor3<T>>&,                \
                                                  const ACParamsT<T>&, AttentionCache<T>*,                          \
                                                  std::vector<AttentionMap<T>>*);                                   \
    template void attention_color_backward<T>(const ACParamsT<T>&, const AttentionCache<T>&, const Tensor3<T>&,     \
                                              ACParamsT<T>&);

PSTYLE_INSTANTIATE(float)
PSTYLE_INSTANTIATE(double)

#undef PSTYLE_INSTANTIATE

}  // namespace pstyle
