#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pstyle/encoder.hpp"
#include "pstyle/nn.hpp"
#include "pstyle/palette.hpp"

namespace pstyle {

// ---------------------------------------------------------------------------
// AdaIN

/// Variance floor inside AdaIN's sqrt(var + eps). Kept tiny so moments match
/// targets to 1e-4 for any channel with std above 1e-3; constant channels
/// still map to the target mean.
inline constexpr double kAdainEpsilon = 1e-12;

template <typename T>
Tensor3<T> adain(const Tensor3<T>& x, const ChannelStats& target);

FeatureMap adain(const FeatureMap& x, const ChannelStats& target);

/// One AdaIN re-targeting of the content features per palette entry.
std::vector<FeatureMap> first_stylize(const FeatureMap& content, const FeaturePalette& palette);

template <typename T>
std::vector<Tensor3<T>> first_stylize_tensor(const Tensor3<T>& content, const FeaturePalette& palette);

// ---------------------------------------------------------------------------
// Attention coloring

/// Learned transforms of the attention block, shared across palette branches.
template <typename T>
struct ACParamsT {
    nn::Conv2d<T> f;      // 1x1, query side (normalized content)
    nn::Conv2d<T> g;      // 1x1, key side (normalized stylized features)
    nn::Conv2d<T> h;      // 1x1, value side (raw stylized features)
    nn::Conv2d<T> merge;  // 3x3 over the branch sum

    int channels() const { return merge.out_channels; }

    static ACParamsT zeros(int channels);
    static ACParamsT random(int channels, std::mt19937_64& rng);

    template <typename U>
    ACParamsT<U> cast() const {
        return {f.template cast<U>(), g.template cast<U>(), h.template cast<U>(), merge.template cast<U>()};
    }

    std::vector<std::vector<T>*> parameters();
    std::vector<const std::vector<T>*> parameters() const;
};
using ACParams = ACParamsT<float>;

/// Row-stochastic N_c x N_s matrix, row-major.
template <typename T>
struct AttentionMap {
    int rows = 0;
    int cols = 0;
    std::vector<T> weights;
};

/// Intermediates of a forward pass kept for attention_color_backward.
template <typename T>
struct AttentionCache {
    Tensor3<T> content_norm;
    std::vector<double> content_inv_std;
    Tensor3<T> query;
    std::vector<Tensor3<T>> stylized;
    std::vector<Tensor3<T>> stylized_norm;
    std::vector<Tensor3<T>> keys;
    std::vector<Tensor3<T>> values;
    std::vector<AttentionMap<T>> attention;
    Tensor3<T> branch_sum;
};

/// Sum over branches of attention-reassembled stylized features, before the
/// merge convolution. Per element the branch values are added in sorted
/// order so the result does not depend on branch order.
template <typename T>
Tensor3<T> attention_branch_sum(const Tensor3<T>& content, const std::vector<Tensor3<T>>& stylized,
                                const ACParamsT<T>& params, AttentionCache<T>* cache = nullptr,
                                std::vector<AttentionMap<T>>* maps = nullptr);

template <typename T>
Tensor3<T> attention_color_tensor(const Tensor3<T>& content, const std::vector<Tensor3<T>>& stylized,
                                  const ACParamsT<T>& params, AttentionCache<T>* cache = nullptr,
                                  std::vector<AttentionMap<T>>* maps = nullptr);

/// Accumulates parameter gradients into `grads` given dL/dF_cs.
template <typename T>
void attention_color_backward(const ACParamsT<T>& params, const AttentionCache<T>& cache, const Tensor3<T>& grad_out,
                              ACParamsT<T>& grads);

FeatureMap attention_color(const FeatureMap& content, const std::vector<FeatureMap>& stylized, const ACParams& params,
                           std::vector<AttentionMap<float>>* maps = nullptr);

// ---------------------------------------------------------------------------
// Decoder

template <typename T>
struct DecoderParamsT {
    nn::Sequential<T> net;

    static DecoderParamsT zeros();
    static DecoderParamsT random(std::mt19937_64& rng);

    template <typename U>
    DecoderParamsT<U> cast() const {
        return {net.template cast<U>()};
    }

    std::vector<std::vector<T>*> parameters();
    std::vector<const std::vector<T>*> parameters() const;
};
using DecoderParams = DecoderParamsT<float>;

/// Raw (unclamped) decoder output, 3 x 8H x 8W.
template <typename T>
Tensor3<T> decode_tensor(const Tensor3<T>& features, const DecoderParamsT<T>& params,
                         nn::ForwardTrace<T>* trace = nullptr);

ImageTensor decode(const FeatureMap& features, const DecoderParams& params);

// ---------------------------------------------------------------------------
// Model and pipelines

struct StyleConfig {
    int k = 3;
    int patch_size = 8;
    int num_patches = 100;
    PaletteMode mode = PaletteMode::Centroid;

    PaletteConfig palette() const;
};

struct StyleModel {
    EncoderParams encoder;
    ACParams ac;
    DecoderParams decoder;
};

/// Palette of one style image; the rng is seeded from `seed`.
FeaturePalette style_palette(const ImageTensor& style, const StyleModel& model, const StyleConfig& cfg,
                             std::uint64_t seed);

/// F_cs for one content/style pair. The palette rng is seeded from `seed`.
FeatureMap stylized_features(const ImageTensor& content, const ImageTensor& style, const StyleModel& model,
                             const StyleConfig& cfg, std::uint64_t seed);

ImageTensor stylize(const ImageTensor& content, const ImageTensor& style, const StyleModel& model,
                    const StyleConfig& cfg, std::uint64_t seed);

/// Composite palette with one entry per style: selections[i] picks the entry
/// of style i's own k-entry palette; without selections each is drawn
/// uniformly from a generator seeded with `seed`.
FeatureMap stylized_features_multi(const ImageTensor& content, const std::vector<ImageTensor>& styles,
                                   const StyleModel& model, const StyleConfig& cfg,
                                   const std::optional<std::vector<std::size_t>>& selections, std::uint64_t seed);

ImageTensor stylize_multi(const ImageTensor& content, const std::vector<ImageTensor>& styles, const StyleModel& model,
                          const StyleConfig& cfg, const std::optional<std::vector<std::size_t>>& selections,
                          std::uint64_t seed);

/// (1 - w) * a + w * b
FeatureMap blend_features(const FeatureMap& a, const FeatureMap& b, double w);

ImageTensor interpolate_styles(const ImageTensor& content, const ImageTensor& style_a, const ImageTensor& style_b,
                               double w, const StyleModel& model, const StyleConfig& cfg, std::uint64_t seed);

/// Binary H x W mask.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    static Mask filled(int height, int width, bool value);
};

/// Pixels above mid-gray count as set.
Mask load_mask(const std::filesystem::path& path);

/// Throws MaskError unless the masks are pairwise disjoint and cover the frame.
void validate_partition(const std::vector<Mask>& masks, int height, int width);

/// Nearest-neighbour downsampling to a feature grid.
Mask downsample_mask(const Mask& mask, int height, int width);

/// sum_i mask_i * features_i with masks already at feature resolution.
FeatureMap masked_blend(const std::vector<FeatureMap>& features, const std::vector<Mask>& masks);

ImageTensor spatial_control(const ImageTensor& content, const std::vector<ImageTensor>& styles,
                            const std::vector<Mask>& masks, const StyleModel& model, const StyleConfig& cfg,
                            std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
struct TrainableParams {
    ACParamsT<T> ac;
    DecoderParamsT<T> decoder;

    static TrainableParams random(std::mt19937_64& rng) {
        TrainableParams p;
        p.ac = ACParamsT<T>::random(channels_of(VggLayer::Relu4_1), rng);
        p.decoder = DecoderParamsT<T>::random(rng);
        return p;
    }

    template <typename U>
    TrainableParams<U> cast() const {
        return {ac.template cast<U>(), decoder.template cast<U>()};
    }

    /// AC parameters first, then decoder, in a fixed order.
    std::vector<std::vector<T>*> parameters() {
        auto out = ac.parameters();
        for (auto* p : decoder.parameters()) out.push_back(p);
        return out;
    }
};

/// Tensors under "ac/{f,g,h,merge}/{weight,bias}" and
/// "decoder/conv{b}_{i}/{weight,bias}", plus free-form metadata.
void save_checkpoint(const TrainableParams<float>& params, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path);

struct Checkpoint {
    TrainableParams<float> params;
    std::map<std::string, std::string> metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pstyle
