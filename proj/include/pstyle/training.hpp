#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pstyle/stylizer.hpp"

namespace pstyle {

struct LossBreakdown {
    double content = 0.0;
    double style = 0.0;
    double total = 0.0;
    double lambda_c = 30.0;
    double lambda_s = 1.0;
};

LossBreakdown compose_loss(double content, double style, double lambda_c, double lambda_s);

struct TrainConfig {
    int input_size = 512;
    int crop = 256;
    int batch = 4;
    long total_iters = 50000;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int patch_size = 8;
    int cluster_k = 3;
    int num_patches = 20;
    PaletteMode palette_mode = PaletteMode::Centroid;
    double lambda_c = 30.0;
    double lambda_s = 1.0;
    std::uint64_t seed = 0;
    long checkpoint_every = 5000;

    /// Throws RangeError / CardinalityError on inconsistent values.
    void validate() const;

    /// Flat key/value view (keys match the config-file keys).
    std::map<std::string, std::string> to_map() const;
    /// Applies known keys; unknown keys raise RangeError.
    void apply(const std::map<std::string, std::string>& values);
};

// ---------------------------------------------------------------------------
// Losses

/// || norm(a) - norm(b) ||_2 over the flattened maps. Fills dL/da when
/// `grad_a` is non-null.
template <typename T>
double content_loss(const Tensor3<T>& output_features, const Tensor3<T>& content_features, Tensor3<T>* grad_a = nullptr);

double content_loss(const FeatureMap& output_features, const FeatureMap& content_features);

/// ||mu_a - mu_b||_2 + ||sigma_a - sigma_b||_2 for one layer, with
/// sigma = sqrt(var + 1e-5).
template <typename T>
double style_layer_loss(const Tensor3<T>& output_features, const Tensor3<T>& style_features,
                        Tensor3<T>* grad_a = nullptr);

/// Same quantity from precomputed statistics.
double style_stat_distance(const nn::Moments& a, const nn::Moments& b);

/// Sum over relu1_1..relu4_1 of style_layer_loss.
double style_loss(const ImageTensor& output, const ImageTensor& style, const EncoderParams& encoder);

// ---------------------------------------------------------------------------
// Differentiable forward/backward

/// Everything about one content/style pair that does not depend on the
/// trainable parameters.
template <typename T>
struct PreparedPair {
    Tensor3<T> content_relu4_1;
    std::array<Tensor3<T>, 4> style_features;
    std::vector<Tensor3<T>> stylized;
};

/// Encodes both crops, builds the palette (rng) and runs the first
/// stylization.
template <typename T>
PreparedPair<T> prepare_pair(const EncoderNet<T>& encoder, const ImageTensor& content, const ImageTensor& style,
                             const PaletteConfig& palette_cfg, std::mt19937_64& rng);

/// Loss of one pair; when `grads` is non-null, adds `grad_scale` * dL/dparams.
template <typename T>
LossBreakdown pair_loss(const EncoderNet<T>& encoder, const TrainableParams<T>& params, const PreparedPair<T>& pair,
                        double lambda_c, double lambda_s, TrainableParams<T>* grads = nullptr, double grad_scale = 1.0);

/// Batch mean of pair_loss with gradients of the mean.
template <typename T>
LossBreakdown batch_loss(const EncoderNet<T>& encoder, const TrainableParams<T>& params,
                         const std::vector<PreparedPair<T>>& batch, double lambda_c, double lambda_s,
                         TrainableParams<T>* grads = nullptr);

// ---------------------------------------------------------------------------
// Optimization

struct AdamState {
    long step = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

/// One Adam update. Parameters and gradients are matched by position.
void adam_update(const std::vector<std::vector<float>*>& params, const std::vector<std::vector<float>*>& grads,
                 AdamState& state, const TrainConfig& cfg);

struct TrainingPair {
    ImageTensor content;
    ImageTensor style;
};

/// Forward + backward over the batch and one Adam step on AC and decoder
/// parameters. Returns the pre-update loss. A non-finite loss raises
/// NumericError and leaves params and optimizer state untouched.
LossBreakdown train_step(const std::vector<TrainingPair>& batch, TrainableParams<float>& params,
                         const EncoderParams& encoder, const TrainConfig& cfg, AdamState& state,
                         std::mt19937_64& rng);

struct LossLogRow {
    long iter = 0;
    LossBreakdown loss;
};

struct TrainResult {
    TrainableParams<float> params;
    std::vector<LossLogRow> log;
    std::filesystem::path final_checkpoint;
    long skipped_steps = 0;
};

/// Image files (png/jpg/jpeg) in a directory, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Resize short side to input_size, then random crop.
ImageTensor load_training_crop(const std::filesystem::path& path, const TrainConfig& cfg, std::mt19937_64& rng);

/// Full loop: seeded init, per-step random pairing, checkpoints every
/// checkpoint_every iterations, `loss_log.csv` and `final.pstc` in out_dir.
TrainResult train(const std::filesystem::path& content_dir, const std::filesystem::path& style_dir,
                  const EncoderParams& encoder, const TrainConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace pstyle
