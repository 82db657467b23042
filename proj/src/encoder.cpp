#include "pstyle/encoder.hpp"

#include <cmath>
#include <random>

namespace pstyle {

using nn::LayerKind;

const char* layer_name(VggLayer layer) {
    switch (layer) {
        case VggLayer::Relu1_1: return "relu1_1";
        case VggLayer::Relu2_1: return "relu2_1";
        case VggLayer::Relu3_1: return "relu3_1";
        case VggLayer::Relu4_1: return "relu4_1";
    }
    return "?";
}

FeatureMap::FeatureMap(VggLayer layer, Tensor3<float> values) : layer_(layer), values_(std::move(values)) {
    if (values_.channels() != channels_of(layer)) {
        throw ShapeError(std::string(layer_name(layer)) + " expects " + std::to_string(channels_of(layer)) +
                         " channels, got " + values_.shape_string());
    }
    for (float v : values_.storage()) {
        if (!std::isfinite(v)) throw NumericError("non-finite value in feature map");
    }
}

Preprocessing Preprocessing::from_name(const std::string& name) {
    Preprocessing p;
    p.name = name;
    if (name == "rgb_unit") return p;
    if (name == "rgb_imagenet") {
        const std::array<double, 3> mean{0.485, 0.456, 0.406};
        const std::array<double, 3> std{0.229, 0.224, 0.225};
        for (int c = 0; c < 3; ++c) {
            p.scale[c] = 1.0 / std[c];
            p.offset[c] = -mean[c] / std[c];
        }
        return p;
    }
    if (name == "bgr_caffe") {
        p.source = {2, 1, 0};
        p.scale = {255.0, 255.0, 255.0};
        p.offset = {-103.939, -116.779, -123.68};
        return p;
    }
    throw SchemaError("unknown preprocessing convention '" + name + "'");
}

const std::array<std::pair<int, int>, 9>& vgg_conv_ids() {
    static const std::array<std::pair<int, int>, 9> ids = {
        {{1, 1}, {1, 2}, {2, 1}, {2, 2}, {3, 1}, {3, 2}, {3, 3}, {3, 4}, {4, 1}}};
    return ids;
}

std::string vgg_tensor_name(int block, int index, bool bias) {
    return "vgg19/conv" + std::to_string(block) + "_" + std::to_string(index) + (bias ? "/bias" : "/weight");
}

namespace {

int vgg_out_channels(int block) { return block == 1 ? 64 : block == 2 ? 128 : block == 3 ? 256 : 512; }

int vgg_in_channels(int block, int index) {
    if (index > 1) return vgg_out_channels(block);
    return block == 1 ? 3 : vgg_out_channels(block - 1);
}

// Topology with zero weights; taps filled in.
EncoderNet<float> vgg_skeleton() {
    EncoderNet<float> enc;
    auto& net = enc.net;
    int tap = 0;
    int prev_block = 1;
    for (const auto& [block, index] : vgg_conv_ids()) {
        if (block != prev_block) {
            net.layers.push_back({LayerKind::MaxPool});
            prev_block = block;
        }
        net.layers.push_back({LayerKind::Conv, static_cast<int>(net.convs.size())});
        net.convs.push_back(nn::Conv2d<float>::zeros(vgg_out_channels(block), vgg_in_channels(block, index), 3));
        net.conv_names.push_back("conv" + std::to_string(block) + "_" + std::to_string(index));
        net.layers.push_back({LayerKind::Relu});
        if (index == 1) enc.taps[tap++] = net.layers.size() - 1;
    }
    return enc;
}

template <typename T>
Tensor3<T> preprocess(const Preprocessing& p, const Tensor3<T>& rgb) {
    Tensor3<T> out(3, rgb.height(), rgb.width());
    for (int c = 0; c < 3; ++c) {
        auto src = rgb.plane(p.source[c]);
        auto dst = out.plane(c);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(p.scale[c] * src[i] + p.offset[c]);
    }
    return out;
}

}  // namespace

EncoderParams::EncoderParams(EncoderNet<float> net)
    : net_(std::make_shared<const EncoderNet<float>>(std::move(net))) {}

EncoderParams encoder_from_archive(const TensorArchive& archive) {
    EncoderNet<float> enc = vgg_skeleton();
    enc.preprocessing = Preprocessing::from_name(archive.require_meta("preprocessing"));
    std::size_t i = 0;
    for (const auto& [block, index] : vgg_conv_ids()) {
        auto& conv = enc.net.convs[i++];
        const std::string wname = vgg_tensor_name(block, index, false);
        const std::string bname = vgg_tensor_name(block, index, true);
        const auto& w = archive.require(wname);
        const auto& b = archive.require(bname);
        const std::vector<std::uint64_t> wshape{static_cast<std::uint64_t>(conv.out_channels),
                                                static_cast<std::uint64_t>(conv.in_channels), 3, 3};
        if (w.shape != wshape) {
            throw ShapeError("tensor '" + wname + "' must have shape " + std::to_string(conv.out_channels) + "x" +
                             std::to_string(conv.in_channels) + "x3x3");
        }
        if (b.shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(conv.out_channels)}) {
            throw ShapeError("tensor '" + bname + "' must have shape " + std::to_string(conv.out_channels));
        }
        conv.weight = w.values;
        conv.bias = b.values;
    }
    return EncoderParams(std::move(enc));
}

EncoderParams load_encoder(const std::filesystem::path& weights_path) {
    return encoder_from_archive(TensorArchive::load(weights_path));
}

TensorArchive encoder_to_archive(const EncoderParams& params) {
    TensorArchive archive;
    archive.metadata["preprocessing"] = params.net().preprocessing.name;
    archive.metadata["architecture"] = "vgg19_relu4_1";
    std::size_t i = 0;
    for (const auto& [block, index] : vgg_conv_ids()) {
        const auto& conv = params.net().net.convs[i++];
        archive.put(vgg_tensor_name(block, index, false),
                    {static_cast<std::uint64_t>(conv.out_channels), static_cast<std::uint64_t>(conv.in_channels), 3, 3},
                    conv.weight);
        archive.put(vgg_tensor_name(block, index, true), {static_cast<std::uint64_t>(conv.out_channels)}, conv.bias);
    }
    return archive;
}

EncoderParams random_encoder(std::uint64_t seed, const std::string& preprocessing) {
    EncoderNet<float> enc = vgg_skeleton();
    enc.preprocessing = Preprocessing::from_name(preprocessing);
    std::mt19937_64 rng(seed);
    for (auto& conv : enc.net.convs) {
        std::normal_distribution<double> w(0.0, std::sqrt(2.0 / static_cast<double>(conv.fan_in())));
        std::uniform_real_distribution<double> b(-0.05, 0.05);
        for (auto& v : conv.weight) v = static_cast<float>(w(rng));
        for (auto& v : conv.bias) v = static_cast<float>(b(rng));
    }
    return EncoderParams(std::move(enc));
}

template <typename T>
std::array<Tensor3<T>, 4> encode_tensor(const EncoderNet<T>& enc, const Tensor3<T>& rgb, nn::ForwardTrace<T>* trace) {
    if (rgb.channels() != 3) throw ShapeError("encoder input must have 3 channels");
    if (rgb.height() < kMinEncodeSize || rgb.width() < kMinEncodeSize) {
        throw DimensionError("encoder input " + std::to_string(rgb.height()) + "x" + std::to_string(rgb.width()) +
                             " is smaller than " + std::to_string(kMinEncodeSize) + "x" +
                             std::to_string(kMinEncodeSize));
    }
    std::array<Tensor3<T>, 4> taps;
    nn::forward<T>(enc.net, preprocess(enc.preprocessing, rgb), trace, [&](std::size_t i, const Tensor3<T>& out) {
        for (int t = 0; t < 4; ++t) {
            if (enc.taps[t] == i) taps[t] = out;
        }
    });
    return taps;
}

template <typename T>
Tensor3<T> encode_backward(const EncoderNet<T>& enc, const nn::ForwardTrace<T>& trace,
                           const std::array<const Tensor3<T>*, 4>& tap_grads) {
    // Layers past relu4_1 do not exist, so the chain ends at the last tap.
    Tensor3<T> grad_pre = nn::backward<T>(enc.net, trace, Tensor3<T>{}, nullptr, [&](std::size_t i, Tensor3<T>& g) {
        for (int t = 0; t < 4; ++t) {
            if (enc.taps[t] == i && tap_grads[t]) {
                const auto& extra = *tap_grads[t];
                if (!extra.same_shape(g)) throw ShapeError("tap gradient shape mismatch");
                for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] += extra.data()[k];
            }
        }
    });
    const auto& p = enc.preprocessing;
    Tensor3<T> grad_rgb(3, grad_pre.height(), grad_pre.width());
    for (int c = 0; c < 3; ++c) {
        auto src = grad_pre.plane(c);
        auto dst = grad_rgb.plane(p.source[c]);
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] += static_cast<T>(p.scale[c] * src[i]);
    }
    return grad_rgb;
}

FeaturePyramid encode(const ImageTensor& img, const EncoderParams& params) {
    auto taps = encode_tensor<float>(params.net(), to_tensor<float>(img));
    FeaturePyramid out;
    for (int t = 0; t < 4; ++t) out.maps[t] = FeatureMap(kVggLayers[t], std::move(taps[t]));
    return out;
}

template std::array<Tensor3<float>, 4> encode_tensor<float>(const EncoderNet<float>&, const Tensor3<float>&,
                                                            nn::ForwardTrace<float>*);
template std::array<Tensor3<double>, 4> encode_tensor<double>(const EncoderNet<double>&, const Tensor3<double>&,
                                                              nn::ForwardTrace<double>*);
template Tensor3<float> encode_backward<float>(const EncoderNet<float>&, const nn::ForwardTrace<float>&,
                                               const std::array<const Tensor3<float>*, 4>&);
template Tensor3<double> encode_backward<double>(const EncoderNet<double>&, const nn::ForwardTrace<double>&,
                                                 const std::array<const Tensor3<double>*, 4>&);

}  // namespace pstyle
