#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "pstyle/container.hpp"
#include "pstyle/imaging.hpp"
#include "pstyle/nn.hpp"

namespace pstyle {

enum class VggLayer { Relu1_1 = 0, Relu2_1 = 1, Relu3_1 = 2, Relu4_1 = 3 };

inline constexpr std::array<VggLayer, 4> kVggLayers = {VggLayer::Relu1_1, VggLayer::Relu2_1, VggLayer::Relu3_1,
                                                       VggLayer::Relu4_1};

constexpr int channels_of(VggLayer layer) {
    switch (layer) {
        case VggLayer::Relu1_1: return 64;
        case VggLayer::Relu2_1: return 128;
        case VggLayer::Relu3_1: return 256;
        case VggLayer::Relu4_1: return 512;
    }
    return 0;
}

const char* layer_name(VggLayer layer);

/// Activation grid tagged with the VGG layer that produced it.
class FeatureMap {
public:
    FeatureMap() = default;
    /// Validates the channel count against the layer and finiteness.
    FeatureMap(VggLayer layer, Tensor3<float> values);

    VggLayer layer() const { return layer_; }
    const Tensor3<float>& values() const { return values_; }

private:
    VggLayer layer_ = VggLayer::Relu4_1;
    Tensor3<float> values_;
};

struct FeaturePyramid {
    std::array<FeatureMap, 4> maps;

    const FeatureMap& operator[](VggLayer l) const { return maps[static_cast<int>(l)]; }
    const FeatureMap& relu4_1() const { return maps[3]; }
};

/// Per-channel affine map from [0,1] RGB into the input convention the
/// weights were trained with: out[c] = scale[c] * rgb[source[c]] + offset[c].
struct Preprocessing {
    std::string name;
    std::array<int, 3> source{0, 1, 2};
    std::array<double, 3> scale{1, 1, 1};
    std::array<double, 3> offset{0, 0, 0};

    /// Known names: "rgb_unit", "rgb_imagenet", "bgr_caffe".
    static Preprocessing from_name(const std::string& name);
};

/// VGG-19 trunk up to relu4_1.
template <typename T>
struct EncoderNet {
    nn::Sequential<T> net;
    Preprocessing preprocessing;
    /// Index of the layer whose output is relu1_1, relu2_1, relu3_1, relu4_1.
    std::array<std::size_t, 4> taps{};

    template <typename U>
    EncoderNet<U> cast() const {
        return EncoderNet<U>{net.template cast<U>(), preprocessing, taps};
    }
};

/// Frozen pretrained weights. Immutable once loaded; copies share storage.
class EncoderParams {
public:
    explicit EncoderParams(EncoderNet<float> net);

    const EncoderNet<float>& net() const { return *net_; }
    bool frozen() const { return true; }

    template <typename U>
    EncoderNet<U> cast() const {
        return net_->template cast<U>();
    }

private:
    std::shared_ptr<const EncoderNet<float>> net_;
};

/// (block, index) pairs of the VGG-19 convolutions up to relu4_1.
const std::array<std::pair<int, int>, 9>& vgg_conv_ids();
/// Archive tensor name, e.g. "vgg19/conv3_4/bias".
std::string vgg_tensor_name(int block, int index, bool bias);

/// Builds an encoder from an archive, validating names and shapes. Requires
/// the `preprocessing` metadata key.
EncoderParams encoder_from_archive(const TensorArchive& archive);
EncoderParams load_encoder(const std::filesystem::path& weights_path);
TensorArchive encoder_to_archive(const EncoderParams& params);

/// He-normal random VGG-19 weights; a stand-in when pretrained weights are
/// unavailable (tests, smoke runs).
EncoderParams random_encoder(std::uint64_t seed, const std::string& preprocessing = "rgb_unit");

inline constexpr int kMinEncodeSize = 16;

/// Features at relu1_1..relu4_1.
FeaturePyramid encode(const ImageTensor& img, const EncoderParams& params);

/// Differentiable variant on a 3 x H x W tensor. Returns the four tapped
/// activations; `trace` (optional) records what encode_backward needs.
template <typename T>
std::array<Tensor3<T>, 4> encode_tensor(const EncoderNet<T>& enc, const Tensor3<T>& rgb,
                                        nn::ForwardTrace<T>* trace = nullptr);

/// Gradient with respect to the RGB input given gradients at the taps
/// (null entries mean zero).
template <typename T>
Tensor3<T> encode_backward(const EncoderNet<T>& enc, const nn::ForwardTrace<T>& trace,
                           const std::array<const Tensor3<T>*, 4>& tap_grads);

}  // namespace pstyle
