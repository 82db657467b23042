#include "pstyle/stylizer.hpp"

#include <algorithm>
#include <cmath>

#include "pstyle/container.hpp"

namespace pstyle {

using nn::LayerKind;

namespace {

struct DecoderConvSpec {
    const char* name;
    int in;
    int out;
    bool upsample_after;
};

// Mirror of the VGG-19 trunk: relu4_1 back to RGB.
constexpr DecoderConvSpec kDecoderConvs[] = {
    {"conv4_1", 512, 256, true},  {"conv3_4", 256, 256, false}, {"conv3_3", 256, 256, false},
    {"conv3_2", 256, 256, false}, {"conv3_1", 256, 128, true},  {"conv2_2", 128, 128, false},
    {"conv2_1", 128, 64, true},   {"conv1_2", 64, 64, false},   {"conv1_1", 64, 3, false},
};

}  // namespace

template <typename T>
DecoderParamsT<T> DecoderParamsT<T>::zeros() {
    DecoderParamsT d;
    auto& net = d.net;
    const std::size_t count = std::size(kDecoderConvs);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& spec = kDecoderConvs[i];
        net.layers.push_back({LayerKind::Conv, static_cast<int>(net.convs.size())});
        net.convs.push_back(nn::Conv2d<T>::zeros(spec.out, spec.in, 3));
        net.conv_names.push_back(spec.name);
        if (i + 1 == count) break;  // final layer is linear
        net.layers.push_back({LayerKind::Relu});
        if (spec.upsample_after) net.layers.push_back({LayerKind::Upsample});
    }
    return d;
}

template <typename T>
DecoderParamsT<T> DecoderParamsT<T>::random(std::mt19937_64& rng) {
    auto d = zeros();
    for (auto& conv : d.net.convs) nn::kaiming_uniform(conv, rng);
    return d;
}

template <typename T>
std::vector<std::vector<T>*> DecoderParamsT<T>::parameters() {
    std::vector<std::vector<T>*> out;
    for (auto& c : net.convs) {
        out.push_back(&c.weight);
        out.push_back(&c.bias);
    }
    return out;
}

template <typename T>
std::vector<const std::vector<T>*> DecoderParamsT<T>::parameters() const {
    std::vector<const std::vector<T>*> out;
    for (const auto& c : net.convs) {
        out.push_back(&c.weight);
        out.push_back(&c.bias);
    }
    return out;
}

template <typename T>
Tensor3<T> decode_tensor(const Tensor3<T>& features, const DecoderParamsT<T>& params, nn::ForwardTrace<T>* trace) {
    const int expected = params.net.convs.front().in_channels;
    if (features.channels() != expected) {
        throw ShapeError("decoder expects " + std::to_string(expected) + " channels, got " + features.shape_string());
    }
    return nn::forward<T>(params.net, features, trace);
}

ImageTensor decode(const FeatureMap& features, const DecoderParams& params) {
    if (features.layer() != VggLayer::Relu4_1) {
        throw ShapeError(std::string("decoder expects relu4_1 features, got ") + layer_name(features.layer()));
    }
    return from_tensor(decode_tensor(features.values(), params));
}

PaletteConfig StyleConfig::palette() const {
    if (k < 1) throw CardinalityError("k must be positive");
    if (num_patches < 1) throw CardinalityError("num_patches must be positive");
    if (patch_size < 1) throw DimensionError("patch size must be positive");
    if (k > num_patches) {
        throw CardinalityError("k=" + std::to_string(k) + " exceeds num_patches=" + std::to_string(num_patches));
    }
    return {static_cast<std::size_t>(num_patches), patch_size, static_cast<std::size_t>(k), mode};
}

namespace {

FeaturePalette palette_for(const ImageTensor& style, const StyleModel& model, const PaletteConfig& pcfg,
                           std::uint64_t seed) {
    const FeaturePyramid fs = encode(style, model.encoder);
    std::mt19937_64 rng(seed);
    return build_palette(fs.relu4_1().values(), pcfg, rng);
}

FeatureMap color(const FeatureMap& fc, const FeaturePalette& palette, const StyleModel& model) {
    return attention_color(fc, first_stylize(fc, palette), model.ac);
}

FeatureMap content_features(const ImageTensor& content, const StyleModel& model) {
    return encode(content, model.encoder).relu4_1();
}

// Selection generator for multi-style palettes, decorrelated from the
// palette generators that share the same seed.
std::mt19937_64 selection_rng(std::uint64_t seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5e1ecu};
    return std::mt19937_64(seq);
}

}  // namespace

FeaturePalette style_palette(const ImageTensor& style, const StyleModel& model, const StyleConfig& cfg,
                             std::uint64_t seed) {
    return palette_for(style, model, cfg.palette(), seed);
}

FeatureMap stylized_features(const ImageTensor& content, const ImageTensor& style, const StyleModel& model,
                             const StyleConfig& cfg, std::uint64_t seed) {
    const PaletteConfig pcfg = cfg.palette();
    const FeatureMap fc = content_features(content, model);
    return color(fc, palette_for(style, model, pcfg, seed), model);
}

ImageTensor stylize(const ImageTensor& content, const ImageTensor& style, const StyleModel& model,
                    const StyleConfig& cfg, std::uint64_t seed) {
    return decode(stylized_features(content, style, model, cfg, seed), model.decoder);
}

FeatureMap stylized_features_multi(const ImageTensor& content, const std::vector<ImageTensor>& styles,
                                   const StyleModel& model, const StyleConfig& cfg,
                                   const std::optional<std::vector<std::size_t>>& selections, std::uint64_t seed) {
    if (styles.empty()) throw CardinalityError("at least one style image is required");
    const PaletteConfig pcfg = cfg.palette();
    if (selections) {
        if (selections->size() != styles.size()) {
            throw CardinalityError("got " + std::to_string(selections->size()) + " selections for " +
                                   std::to_string(styles.size()) + " styles");
        }
        for (std::size_t i = 0; i < selections->size(); ++i) {
            if ((*selections)[i] >= pcfg.k) {
                throw IndexError("selection " + std::to_string((*selections)[i]) + " for style " + std::to_string(i) +
                                 " is out of range for a " + std::to_string(pcfg.k) + "-entry palette");
            }
        }
    }
    const FeatureMap fc = content_features(content, model);
    auto pick_rng = selection_rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, pcfg.k - 1);

    FeaturePalette composite;
    composite.mode = cfg.mode;
    for (std::size_t i = 0; i < styles.size(); ++i) {
        FeaturePalette own = palette_for(styles[i], model, pcfg, seed);
        const std::size_t j = selections ? (*selections)[i] : pick(pick_rng);
        composite.entries.push_back(std::move(own.entries[j]));
    }
    return color(fc, composite, model);
}

ImageTensor stylize_multi(const ImageTensor& content, const std::vector<ImageTensor>& styles, const StyleModel& model,
                          const StyleConfig& cfg, const std::optional<std::vector<std::size_t>>& selections,
                          std::uint64_t seed) {
    return decode(stylized_features_multi(content, styles, model, cfg, selections, seed), model.decoder);
}

FeatureMap blend_features(const FeatureMap& a, const FeatureMap& b, double w) {
    if (!(w >= 0.0 && w <= 1.0)) throw RangeError("interpolation weight must lie in [0, 1]");
    if (a.layer() != b.layer() || !a.values().same_shape(b.values())) {
        throw ShapeError("cannot blend feature maps of different shapes");
    }
    const float wa = static_cast<float>(1.0 - w);
    const float wb = static_cast<float>(w);
    Tensor3<float> out = a.values();
    const float* pb = b.values().data();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = wa * out.data()[i] + wb * pb[i];
    return FeatureMap(a.layer(), std::move(out));
}

ImageTensor interpolate_styles(const ImageTensor& content, const ImageTensor& style_a, const ImageTensor& style_b,
                               double w, const StyleModel& model, const StyleConfig& cfg, std::uint64_t seed) {
    if (!(w >= 0.0 && w <= 1.0)) throw RangeError("interpolation weight must lie in [0, 1]");
    const PaletteConfig pcfg = cfg.palette();
    const FeatureMap fc = content_features(content, model);
    const FeatureMap fa = color(fc, palette_for(style_a, model, pcfg, seed), model);
    const FeatureMap fb = color(fc, palette_for(style_b, model, pcfg, seed), model);
    return decode(blend_features(fa, fb, w), model.decoder);
}

Mask Mask::filled(int height, int width, bool value) {
    return Mask{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, value ? 1 : 0)};
}

Mask load_mask(const std::filesystem::path& path) {
    const ImageTensor img = load_image(path);
    Mask m = Mask::filled(img.height(), img.width(), false);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const float v = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0f;
            m.bits[static_cast<std::size_t>(y) * img.width() + x] = v > 0.5f ? 1 : 0;
        }
    }
    return m;
}

void validate_partition(const std::vector<Mask>& masks, int height, int width) {
    if (masks.empty()) throw MaskError("no masks given");
    const std::size_t n = static_cast<std::size_t>(height) * width;
    std::vector<int> cover(n, 0);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const Mask& m = masks[i];
        if (m.height != height || m.width != width || m.bits.size() != n) {
            throw MaskError("mask " + std::to_string(i) + " is " + std::to_string(m.height) + "x" +
                            std::to_string(m.width) + ", expected " + std::to_string(height) + "x" +
                            std::to_string(width));
        }
        for (std::size_t p = 0; p < n; ++p) {
            if (m.bits[p] > 1) throw MaskError("mask " + std::to_string(i) + " is not binary");
            cover[p] += m.bits[p];
        }
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (cover[p] > 1) {
            throw MaskError("masks overlap at pixel (" + std::to_string(p / width) + ", " + std::to_string(p % width) +
                            ")");
        }
        if (cover[p] == 0) {
            throw MaskError("masks leave pixel (" + std::to_string(p / width) + ", " + std::to_string(p % width) +
                            ") uncovered");
        }
    }
}

Mask downsample_mask(const Mask& mask, int height, int width) {
    Mask out = Mask::filled(height, width, false);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(mask.height - 1, static_cast<int>((2 * y + 1) * static_cast<long>(mask.height) / (2 * height)));
        for (int x = 0; x < width; ++x) {
            const int sx =
                std::min(mask.width - 1, static_cast<int>((2 * x + 1) * static_cast<long>(mask.width) / (2 * width)));
            out.bits[static_cast<std::size_t>(y) * width + x] = mask.bits[static_cast<std::size_t>(sy) * mask.width + sx];
        }
    }
    return out;
}

FeatureMap masked_blend(const std::vector<FeatureMap>& features, const std::vector<Mask>& masks) {
    if (features.empty() || features.size() != masks.size()) {
        throw CardinalityError("need one mask per stylized feature map");
    }
    const auto& ref = features[0].values();
    Tensor3<float> out(ref.channels(), ref.height(), ref.width());
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i].values();
        const Mask& m = masks[i];
        if (!f.same_shape(ref)) throw ShapeError("stylized feature maps differ in shape");
        if (m.height != ref.height() || m.width != ref.width()) throw MaskError("mask does not match feature grid");
        for (int c = 0; c < f.channels(); ++c) {
            auto src = f.plane(c);
            auto dst = out.plane(c);
            for (std::size_t p = 0; p < src.size(); ++p) {
                const float term = static_cast<float>(m.bits[p]) * src[p];
                dst[p] = i == 0 ? term : dst[p] + term;
            }
        }
    }
    return FeatureMap(features[0].layer(), std::move(out));
}

ImageTensor spatial_control(const ImageTensor& content, const std::vector<ImageTensor>& styles,
                            const std::vector<Mask>& masks, const StyleModel& model, const StyleConfig& cfg,
                            std::uint64_t seed) {
    if (styles.empty()) throw CardinalityError("at least one style image is required");
    if (masks.size() != styles.size()) {
        throw CardinalityError("got " + std::to_string(masks.size()) + " masks for " + std::to_string(styles.size()) +
                               " styles");
    }
    validate_partition(masks, content.height(), content.width());
    const PaletteConfig pcfg = cfg.palette();
    const FeatureMap fc = content_features(content, model);
    const int fh = fc.values().height();
    const int fw = fc.values().width();

    std::vector<FeatureMap> per_style;
    std::vector<Mask> small;
    for (std::size_t i = 0; i < styles.size(); ++i) {
        per_style.push_back(color(fc, palette_for(styles[i], model, pcfg, seed), model));
        small.push_back(downsample_mask(masks[i], fh, fw));
    }
    return decode(masked_blend(per_style, small), model.decoder);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void put_conv(TensorArchive& archive, const std::string& prefix, const nn::Conv2d<float>& conv) {
    archive.put(prefix + "/weight",
                {static_cast<std::uint64_t>(conv.out_channels), static_cast<std::uint64_t>(conv.in_channels),
                 static_cast<std::uint64_t>(conv.kernel), static_cast<std::uint64_t>(conv.kernel)},
                conv.weight);
    archive.put(prefix + "/bias", {static_cast<std::uint64_t>(conv.out_channels)}, conv.bias);
}

void get_conv(const TensorArchive& archive, const std::string& prefix, nn::Conv2d<float>& conv) {
    const auto& w = archive.require(prefix + "/weight");
    const auto& b = archive.require(prefix + "/bias");
    const std::vector<std::uint64_t> wshape{static_cast<std::uint64_t>(conv.out_channels),
                                            static_cast<std::uint64_t>(conv.in_channels),
                                            static_cast<std::uint64_t>(conv.kernel),
                                            static_cast<std::uint64_t>(conv.kernel)};
    if (w.shape != wshape) throw ShapeError("checkpoint tensor '" + prefix + "/weight' has the wrong shape");
    if (b.shape != std::vector<std::uint64_t>{static_cast<std::uint64_t>(conv.out_channels)}) {
        throw ShapeError("checkpoint tensor '" + prefix + "/bias' has the wrong shape");
    }
    conv.weight = w.values;
    conv.bias = b.values;
}

}  // namespace

void save_checkpoint(const TrainableParams<float>& params, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path) {
    TensorArchive archive;
    archive.metadata = metadata;
    put_conv(archive, "ac/f", params.ac.f);
    put_conv(archive, "ac/g", params.ac.g);
    put_conv(archive, "ac/h", params.ac.h);
    put_conv(archive, "ac/merge", params.ac.merge);
    const auto& net = params.decoder.net;
    for (std::size_t i = 0; i < net.convs.size(); ++i) put_conv(archive, "decoder/" + net.conv_names[i], net.convs[i]);
    archive.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const TensorArchive archive = TensorArchive::load(path);
    Checkpoint ck;
    ck.metadata = archive.metadata;
    ck.params.ac = ACParams::zeros(channels_of(VggLayer::Relu4_1));
    get_conv(archive, "ac/f", ck.params.ac.f);
    get_conv(archive, "ac/g", ck.params.ac.g);
    get_conv(archive, "ac/h", ck.params.ac.h);
    get_conv(archive, "ac/merge", ck.params.ac.merge);
    ck.params.decoder = DecoderParams::zeros();
    auto& net = ck.params.decoder.net;
    for (std::size_t i = 0; i < net.convs.size(); ++i) get_conv(archive, "decoder/" + net.conv_names[i], net.convs[i]);
    return ck;
}

template struct DecoderParamsT<float>;
template struct DecoderParamsT<double>;
template Tensor3<float> decode_tensor<float>(const Tensor3<float>&, const DecoderParamsT<float>&,
                                             nn::ForwardTrace<float>*);
template Tensor3<double> decode_tensor<double>(const Tensor3<double>&, const DecoderParamsT<double>&,
                                               nn::ForwardTrace<double>*);

}  // namespace pstyle
