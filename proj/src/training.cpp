#include "pstyle/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace pstyle {

namespace fs = std::filesystem;

LossBreakdown compose_loss(double content, double style, double lambda_c, double lambda_s) {
    return {content, style, lambda_c * content + lambda_s * style, lambda_c, lambda_s};
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0)) throw RangeError(std::string(name) + " must be positive");
    };
    positive(input_size, "input_size");
    positive(crop, "crop");
    positive(batch, "batch");
    if (total_iters < 0) throw RangeError("total_iters must be non-negative");
    if (!(lr >= 0)) throw RangeError("lr must be non-negative");
    positive(patch_size, "patch_size");
    positive(cluster_k, "cluster_k");
    positive(num_patches, "num_patches");
    positive(lambda_c, "lambda_c");
    positive(lambda_s, "lambda_s");
    if (checkpoint_every < 0) throw RangeError("checkpoint_every must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw RangeError("Adam betas must lie in [0,1)");
    if (cluster_k > num_patches) {
        throw CardinalityError("cluster_k=" + std::to_string(cluster_k) + " exceeds num_patches=" +
                               std::to_string(num_patches));
    }
    if (crop > input_size) throw RangeError("crop must not exceed input_size");
    if (crop < kMinEncodeSize) throw RangeError("crop must be at least " + std::to_string(kMinEncodeSize));
    if (patch_size > crop / 8) throw DimensionError("patch_size exceeds the relu4_1 size of a crop");
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    N v{};
    in >> v;
    if (in.fail() || !(in >> std::ws).eof()) throw RangeError("invalid value '" + text + "' for '" + key + "'");
    return v;
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_map() const {
    return {
        {"input_size", std::to_string(input_size)},
        {"crop", std::to_string(crop)},
        {"batch", std::to_string(batch)},
        {"total_iters", std::to_string(total_iters)},
        {"lr", format_double(lr)},
        {"beta1", format_double(beta1)},
        {"beta2", format_double(beta2)},
        {"adam_eps", format_double(adam_eps)},
        {"patch_size", std::to_string(patch_size)},
        {"cluster_k", std::to_string(cluster_k)},
        {"num_patches", std::to_string(num_patches)},
        {"palette_mode", palette_mode_name(palette_mode)},
        {"lambda_c", format_double(lambda_c)},
        {"lambda_s", format_double(lambda_s)},
        {"seed", std::to_string(seed)},
        {"checkpoint_every", std::to_string(checkpoint_every)},
    };
}

void TrainConfig::apply(const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        if (key == "input_size") input_size = parse_number<int>(key, value);
        else if (key == "crop") crop = parse_number<int>(key, value);
        else if (key == "batch") batch = parse_number<int>(key, value);
        else if (key == "total_iters") total_iters = parse_number<long>(key, value);
        else if (key == "lr") lr = parse_number<double>(key, value);
        else if (key == "beta1") beta1 = parse_number<double>(key, value);
        else if (key == "beta2") beta2 = parse_number<double>(key, value);
        else if (key == "adam_eps") adam_eps = parse_number<double>(key, value);
        else if (key == "patch_size") patch_size = parse_number<int>(key, value);
        else if (key == "cluster_k") cluster_k = parse_number<int>(key, value);
        else if (key == "num_patches") num_patches = parse_number<int>(key, value);
        else if (key == "palette_mode") palette_mode = parse_palette_mode(value);
        else if (key == "lambda_c") lambda_c = parse_number<double>(key, value);
        else if (key == "lambda_s") lambda_s = parse_number<double>(key, value);
        else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
        else if (key == "checkpoint_every") checkpoint_every = parse_number<long>(key, value);
        else throw RangeError("unknown training config key '" + key + "'");
    }
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
double content_loss(const Tensor3<T>& a, const Tensor3<T>& b, Tensor3<T>* grad_a) {
    if (!a.same_shape(b)) {
        throw ShapeError("content loss inputs differ in shape: " + a.shape_string() + " vs " + b.shape_string());
    }
    std::vector<double> inv_a;
    const Tensor3<T> na = nn::normalize_channels(a, nn::kNormEpsilon, &inv_a);
    const Tensor3<T> nb = nn::normalize_channels(b);
    double ss = 0.0;
    for (std::size_t i = 0; i < na.size(); ++i) {
        const double d = static_cast<double>(na.data()[i]) - nb.data()[i];
        ss += d * d;
    }
    const double loss = std::sqrt(ss);
    if (grad_a) {
        Tensor3<T> dn(a.channels(), a.height(), a.width());
        if (loss > 0.0) {
            for (std::size_t i = 0; i < dn.size(); ++i) {
                dn.data()[i] = static_cast<T>((static_cast<double>(na.data()[i]) - nb.data()[i]) / loss);
            }
        }
        *grad_a = nn::normalize_channels_backward(na, inv_a, dn);
    }
    return loss;
}

double content_loss(const FeatureMap& a, const FeatureMap& b) {
    if (a.layer() != b.layer()) throw ShapeError("content loss inputs come from different layers");
    return content_loss(a.values(), b.values());
}

double style_stat_distance(const nn::Moments& a, const nn::Moments& b) {
    if (a.mean.size() != b.mean.size()) throw ShapeError("style statistics differ in channel count");
    double dm = 0.0, ds = 0.0;
    for (std::size_t c = 0; c < a.mean.size(); ++c) {
        const double m = a.mean[c] - b.mean[c];
        const double s = std::sqrt(a.var[c] + nn::kNormEpsilon) - std::sqrt(b.var[c] + nn::kNormEpsilon);
        dm += m * m;
        ds += s * s;
    }
    return std::sqrt(dm) + std::sqrt(ds);
}

template <typename T>
double style_layer_loss(const Tensor3<T>& a, const Tensor3<T>& b, Tensor3<T>* grad_a) {
    if (a.channels() != b.channels()) throw ShapeError("style loss inputs differ in channel count");
    const nn::Moments ma = nn::channel_moments(a);
    const nn::Moments mb = nn::channel_moments(b);
    const std::size_t channels = ma.mean.size();
    std::vector<double> dmu(channels), dsigma(channels), sigma(channels);
    double nmu = 0.0, nsigma = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
        sigma[c] = std::sqrt(ma.var[c] + nn::kNormEpsilon);
        dmu[c] = ma.mean[c] - mb.mean[c];
        dsigma[c] = sigma[c] - std::sqrt(mb.var[c] + nn::kNormEpsilon);
        nmu += dmu[c] * dmu[c];
        nsigma += dsigma[c] * dsigma[c];
    }
    nmu = std::sqrt(nmu);
    nsigma = std::sqrt(nsigma);
    if (grad_a) {
        *grad_a = Tensor3<T>(a.channels(), a.height(), a.width());
        const double n = static_cast<double>(a.plane_size());
        for (std::size_t c = 0; c < channels; ++c) {
            const double gmu = nmu > 0.0 ? dmu[c] / nmu : 0.0;
            const double gsigma = nsigma > 0.0 ? dsigma[c] / nsigma : 0.0;
            auto src = a.plane(static_cast<int>(c));
            auto dst = grad_a->plane(static_cast<int>(c));
            for (std::size_t i = 0; i < src.size(); ++i) {
                dst[i] = static_cast<T>(gmu / n + gsigma * (src[i] - ma.mean[c]) / (n * sigma[c]));
            }
        }
    }
    return nmu + nsigma;
}

double style_loss(const ImageTensor& output, const ImageTensor& style, const EncoderParams& encoder) {
    const FeaturePyramid a = encode(output, encoder);
    const FeaturePyramid b = encode(style, encoder);
    double total = 0.0;
    for (int i = 0; i < 4; ++i) total += style_layer_loss(a.maps[i].values(), b.maps[i].values());
    return total;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
PreparedPair<T> prepare_pair(const EncoderNet<T>& encoder, const ImageTensor& content, const ImageTensor& style,
                             const PaletteConfig& palette_cfg, std::mt19937_64& rng) {
    PreparedPair<T> pair;
    pair.content_relu4_1 = encode_tensor(encoder, to_tensor<T>(content))[3];
    pair.style_features = encode_tensor(encoder, to_tensor<T>(style));
    const FeaturePalette palette = build_palette(pair.style_features[3], palette_cfg, rng);
    pair.stylized = first_stylize_tensor(pair.content_relu4_1, palette);
    return pair;
}

template <typename T>
LossBreakdown pair_loss(const EncoderNet<T>& encoder, const TrainableParams<T>& params, const PreparedPair<T>& pair,
                        double lambda_c, double lambda_s, TrainableParams<T>* grads, double grad_scale) {
    AttentionCache<T> cache;
    nn::ForwardTrace<T> dec_trace;
    nn::ForwardTrace<T> enc_trace;
    const bool backprop = grads != nullptr;

    const Tensor3<T> fcs =
        attention_color_tensor(pair.content_relu4_1, pair.stylized, params.ac, backprop ? &cache : nullptr);
    const Tensor3<T> output = decode_tensor(fcs, params.decoder, backprop ? &dec_trace : nullptr);
    const auto taps = encode_tensor(encoder, output, backprop ? &enc_trace : nullptr);

    Tensor3<T> grad_content;
    std::array<Tensor3<T>, 4> grad_style;
    const double lc = content_loss(taps[3], pair.content_relu4_1, backprop ? &grad_content : nullptr);
    double ls = 0.0;
    for (int i = 0; i < 4; ++i) {
        ls += style_layer_loss(taps[i], pair.style_features[i], backprop ? &grad_style[i] : nullptr);
    }
    const LossBreakdown loss = compose_loss(lc, ls, lambda_c, lambda_s);
    if (!backprop || !std::isfinite(loss.total)) return loss;

    const T ws = static_cast<T>(grad_scale * lambda_s);
    const T wc = static_cast<T>(grad_scale * lambda_c);
    for (int i = 0; i < 4; ++i) {
        for (auto& v : grad_style[i].storage()) v *= ws;
    }
    for (std::size_t i = 0; i < grad_content.size(); ++i) grad_style[3].data()[i] += wc * grad_content.data()[i];

    const Tensor3<T> grad_output =
        encode_backward(encoder, enc_trace, {&grad_style[0], &grad_style[1], &grad_style[2], &grad_style[3]});
    const Tensor3<T> grad_fcs = nn::backward(params.decoder.net, dec_trace, grad_output, &grads->decoder.net);
    attention_color_backward(params.ac, cache, grad_fcs, grads->ac);
    return loss;
}

template <typename T>
LossBreakdown batch_loss(const EncoderNet<T>& encoder, const TrainableParams<T>& params,
                         const std::vector<PreparedPair<T>>& batch, double lambda_c, double lambda_s,
                         TrainableParams<T>* grads) {
    if (batch.empty()) throw CardinalityError("empty batch");
    const double scale = 1.0 / static_cast<double>(batch.size());
    double lc = 0.0, ls = 0.0;
    for (const auto& pair : batch) {
        const LossBreakdown l = pair_loss(encoder, params, pair, lambda_c, lambda_s, grads, scale);
        lc += l.content;
        ls += l.style;
    }
    return compose_loss(lc * scale, ls * scale, lambda_c, lambda_s);
}

// ---------------------------------------------------------------------------
// Optimization

void adam_update(const std::vector<std::vector<float>*>& params, const std::vector<std::vector<float>*>& grads,
                 AdamState& state, const TrainConfig& cfg) {
    if (params.size() != grads.size()) throw ShapeError("parameter and gradient lists differ in length");
    if (state.m.empty()) {
        for (const auto* p : params) {
            state.m.emplace_back(p->size(), 0.0f);
            state.v.emplace_back(p->size(), 0.0f);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameters");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& p = *params[t];
        const auto& g = *grads[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double step = cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps);
            p[i] = static_cast<float>(p[i] - step);
        }
    }
}

namespace {

TrainableParams<float> zero_grads() {
    return {ACParams::zeros(channels_of(VggLayer::Relu4_1)), DecoderParams::zeros()};
}

bool all_finite(const std::vector<std::vector<float>*>& tensors) {
    for (const auto* t : tensors) {
        for (float v : *t) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

}  // namespace

LossBreakdown train_step(const std::vector<TrainingPair>& batch, TrainableParams<float>& params,
                         const EncoderParams& encoder, const TrainConfig& cfg, AdamState& state,
                         std::mt19937_64& rng) {
    if (batch.empty()) throw CardinalityError("empty batch");
    const PaletteConfig pcfg{static_cast<std::size_t>(cfg.num_patches), cfg.patch_size,
                             static_cast<std::size_t>(cfg.cluster_k), cfg.palette_mode};
    std::vector<PreparedPair<float>> prepared;
    prepared.reserve(batch.size());
    for (const auto& pair : batch) prepared.push_back(prepare_pair(encoder.net(), pair.content, pair.style, pcfg, rng));

    TrainableParams<float> grads = zero_grads();
    const LossBreakdown loss = batch_loss(encoder.net(), params, prepared, cfg.lambda_c, cfg.lambda_s, &grads);
    if (!std::isfinite(loss.total)) throw NumericError("non-finite training loss");
    auto grad_list = grads.parameters();
    if (!all_finite(grad_list)) throw NumericError("non-finite gradient");
    adam_update(params.parameters(), grad_list, state, cfg);
    return loss;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

ImageTensor load_training_crop(const fs::path& path, const TrainConfig& cfg, std::mt19937_64& rng) {
    return random_crop(resize_short_side(load_image(path), cfg.input_size), cfg.crop, rng);
}

TrainResult train(const fs::path& content_dir, const fs::path& style_dir, const EncoderParams& encoder,
                  const TrainConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const auto contents = list_images(content_dir);
    const auto styles = list_images(style_dir);
    if (contents.empty()) throw DataError("no images in content directory " + content_dir.string());
    if (styles.empty()) throw DataError("no images in style directory " + style_dir.string());
    fs::create_directories(out_dir);

    std::mt19937_64 rng(cfg.seed);
    TrainResult result;
    result.params = TrainableParams<float>::random(rng);
    AdamState state;

    const fs::path log_path = out_dir / "loss_log.csv";
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot write " + log_path.string());
    log << "iter,content_loss,style_loss,total\n";
    log.flush();

    auto metadata = [&](long iter) {
        auto meta = cfg.to_map();
        meta["iteration"] = std::to_string(iter);
        meta["preprocessing"] = encoder.net().preprocessing.name;
        return meta;
    };

    std::uniform_int_distribution<std::size_t> pick_content(0, contents.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_style(0, styles.size() - 1);
    for (long iter = 1; iter <= cfg.total_iters; ++iter) {
        std::vector<TrainingPair> batch;
        batch.reserve(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& cpath = contents[pick_content(rng)];
            const auto& spath = styles[pick_style(rng)];
            ImageTensor c = load_training_crop(cpath, cfg, rng);
            ImageTensor s = load_training_crop(spath, cfg, rng);
            batch.push_back({std::move(c), std::move(s)});
        }
        try {
            const LossBreakdown loss = train_step(batch, result.params, encoder, cfg, state, rng);
            result.log.push_back({iter, loss});
            log << iter << ',' << format_double(loss.content) << ',' << format_double(loss.style) << ','
                << format_double(loss.total) << '\n';
            log.flush();
        } catch (const NumericError& e) {
            ++result.skipped_steps;
            std::cerr << "iteration " << iter << " skipped: " << e.what() << '\n';
        }
        if (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0) {
            save_checkpoint(result.params, metadata(iter), out_dir / ("checkpoint_" + std::to_string(iter) + ".pstc"));
        }
    }
    result.final_checkpoint = out_dir / "final.pstc";
    save_checkpoint(result.params, metadata(cfg.total_iters), result.final_checkpoint);
    return result;
}

#define PSTYLE_INSTANTIATE(T)                                                                                      \
    template double content_loss<T>(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>*);                            \
    template double style_layer_loss<T>(const Tensor3<T>&, const Tensor3<T>&, Tensor3<T>*);                        \
    template PreparedPair<T> prepare_pair<T>(const EncoderNet<T>&, const ImageTensor&, const ImageTensor&,         \
                                             const PaletteConfig&, std::mt19937_64&);                              \
    template LossBreakdown pair_loss<T>(const EncoderNet<T>&, const TrainableParams<T>&, const PreparedPair<T>&,   \
                                        double, double, TrainableParams<T>*, double);                              \
    template LossBreakdown batch_loss<T>(const EncoderNet<T>&, const TrainableParams<T>&,                          \
                                         const std::vector<PreparedPair<T>>&, double, double, TrainableParams<T>*);

PSTYLE_INSTANTIATE(float)
PSTYLE_INSTANTIATE(double)

#undef PSTYLE_INSTANTIATE

}  // namespace pstyle
