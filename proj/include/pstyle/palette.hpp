#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pstyle/tensor.hpp"

namespace pstyle {

/// C x p x p window cut from a feature map, flattened channel-major.
struct FeaturePatch {
    int channels = 0;
    int size = 0;
    int row = 0;
    int col = 0;
    std::vector<double> values;

    Tensor3<double> as_tensor() const { return Tensor3<double>(channels, size, size, values); }
};

enum class PaletteMode { Centroid, NearestPatch };

PaletteMode parse_palette_mode(const std::string& s);
const char* palette_mode_name(PaletteMode m);

struct Cluster {
    std::vector<double> centroid;
    std::vector<std::size_t> members;
};

struct FeaturePalette {
    std::vector<Tensor3<double>> entries;
    PaletteMode mode = PaletteMode::Centroid;

    std::size_t k() const { return entries.size(); }
};

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

/// `count` windows with offsets drawn uniformly (with replacement) from rng.
template <typename T>
std::vector<FeaturePatch> sample_patches(const Tensor3<T>& features, std::size_t count, int p, std::mt19937_64& rng);

double squared_distance(const std::vector<double>& a, const std::vector<double>& b);

/// k-means++ seeding: first center uniform, later ones with probability
/// proportional to the squared distance to the nearest chosen center.
std::vector<std::vector<double>> kmeans_pp_init(const std::vector<std::vector<double>>& points, std::size_t k,
                                                std::mt19937_64& rng);

struct KMeansResult {
    std::vector<Cluster> clusters;
    std::vector<std::size_t> assignment;
    int iterations = 0;
    /// Objective (sum of squared distances to the assigned centroid) after
    /// each assignment step.
    std::vector<double> objective;
};

inline constexpr int kKMeansMaxIterations = 100;

/// Lloyd iterations from the given centroids until assignments stop changing
/// or max_iterations is reached. Empty clusters take over the point farthest
/// from its own centroid.
KMeansResult lloyd(const std::vector<std::vector<double>>& points, std::vector<std::vector<double>> centroids,
                   int max_iterations = kKMeansMaxIterations);

/// k-means++ init followed by Lloyd over the flattened patch vectors.
std::vector<Cluster> kmeans_cluster(const std::vector<FeaturePatch>& patches, std::size_t k, std::mt19937_64& rng);

FeaturePalette compose_palette(const std::vector<Cluster>& clusters, const std::vector<FeaturePatch>& patches,
                               PaletteMode mode);

/// Per-channel mean and population standard deviation over spatial positions.
template <typename T>
ChannelStats palette_stats(const Tensor3<T>& entry);

struct PaletteConfig {
    std::size_t num_patches = 100;
    int patch_size = 8;
    std::size_t k = 3;
    PaletteMode mode = PaletteMode::Centroid;
};

/// sample_patches -> kmeans_cluster -> compose_palette.
template <typename T>
FeaturePalette build_palette(const Tensor3<T>& style_features, const PaletteConfig& cfg, std::mt19937_64& rng);

/// Debug export: entries as "palette/entry{i}" plus ".../mean" and ".../std".
void save_palette(const FeaturePalette& palette, const std::filesystem::path& path);

}  // namespace pstyle
