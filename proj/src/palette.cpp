#include "pstyle/palette.hpp"

#include <cmath>
#include <limits>

#include "pstyle/container.hpp"

namespace pstyle {

PaletteMode parse_palette_mode(const std::string& s) {
    if (s == "centroid") return PaletteMode::Centroid;
    if (s == "nearest" || s == "nearest_patch") return PaletteMode::NearestPatch;
    throw RangeError("unknown palette mode '" + s + "' (expected centroid or nearest)");
}

const char* palette_mode_name(PaletteMode m) { return m == PaletteMode::Centroid ? "centroid" : "nearest"; }

template <typename T>
std::vector<FeaturePatch> sample_patches(const Tensor3<T>& features, std::size_t count, int p, std::mt19937_64& rng) {
    if (p < 1) throw DimensionError("patch size must be positive");
    if (count < 1) throw CardinalityError("patch count must be positive");
    if (features.height() < p || features.width() < p) {
        throw DimensionError("feature map " + std::to_string(features.height()) + "x" +
                             std::to_string(features.width()) + " is smaller than patch size " + std::to_string(p));
    }
    std::uniform_int_distribution<int> dr(0, features.height() - p);
    std::uniform_int_distribution<int> dc(0, features.width() - p);
    std::vector<FeaturePatch> patches;
    patches.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        FeaturePatch patch;
        patch.channels = features.channels();
        patch.size = p;
        patch.row = dr(rng);
        patch.col = dc(rng);
        patch.values.resize(static_cast<std::size_t>(features.channels()) * p * p);
        auto* dst = patch.values.data();
        for (int c = 0; c < features.channels(); ++c) {
            for (int y = 0; y < p; ++y) {
                for (int x = 0; x < p; ++x) *dst++ = static_cast<double>(features.at(c, patch.row + y, patch.col + x));
            }
        }
        patches.push_back(std::move(patch));
    }
    return patches;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::vector<std::vector<double>> kmeans_pp_init(const std::vector<std::vector<double>>& points, std::size_t k,
                                                std::mt19937_64& rng) {
    if (k < 1) throw CardinalityError("k must be positive");
    if (points.size() < k) {
        throw CardinalityError("need at least k=" + std::to_string(k) + " points, got " +
                               std::to_string(points.size()));
    }
    std::vector<std::vector<double>> centers;
    std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
    centers.push_back(points[first(rng)]);

    std::vector<double> d2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], centers[0]);
    while (centers.size() < k) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            const double target = u(rng);
            double acc = 0.0;
            pick = points.size() - 1;
            for (std::size_t i = 0; i < points.size(); ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng);
        }
        centers.push_back(points[pick]);
        for (std::size_t i = 0; i < points.size(); ++i) {
            d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
        }
    }
    return centers;
}

namespace {

std::size_t nearest_center(const std::vector<double>& point, const std::vector<std::vector<double>>& centers,
                           double* dist) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers.size(); ++j) {
        const double d = squared_distance(point, centers[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    if (dist) *dist = best_d;
    return best;
}

}  // namespace

KMeansResult lloyd(const std::vector<std::vector<double>>& points, std::vector<std::vector<double>> centroids,
                   int max_iterations) {
    const std::size_t n = points.size();
    const std::size_t k = centroids.size();
    if (k < 1) throw CardinalityError("k must be positive");
    if (n < k) throw CardinalityError("need at least k points");
    const std::size_t dim = points[0].size();

    KMeansResult result;
    std::vector<std::size_t> assignment;
    std::vector<double> dist(n);
    for (int it = 0; it < max_iterations; ++it) {
        std::vector<std::size_t> next(n);
        for (std::size_t i = 0; i < n; ++i) next[i] = nearest_center(points[i], centroids, &dist[i]);

        // Repair empty clusters by relocating the farthest point.
        std::vector<std::size_t> sizes(k, 0);
        for (auto a : next) ++sizes[a];
        for (std::size_t j = 0; j < k; ++j) {
            if (sizes[j] != 0) continue;
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[next[i]] > 1 && dist[i] > far_d) {
                    far_d = dist[i];
                    far = i;
                }
            }
            --sizes[next[far]];
            next[far] = j;
            sizes[j] = 1;
            dist[far] = 0.0;
            centroids[j] = points[far];
        }

        double objective = 0.0;
        for (std::size_t i = 0; i < n; ++i) objective += squared_distance(points[i], centroids[next[i]]);
        result.objective.push_back(objective);
        result.iterations = it + 1;

        if (next == assignment) break;
        assignment = std::move(next);

        for (std::size_t j = 0; j < k; ++j) centroids[j].assign(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = centroids[assignment[i]];
            for (std::size_t d = 0; d < dim; ++d) c[d] += points[i][d];
        }
        for (std::size_t j = 0; j < k; ++j) {
            const double inv = 1.0 / static_cast<double>(sizes[j]);
            for (auto& v : centroids[j]) v *= inv;
        }
    }

    result.assignment = assignment;
    result.clusters.resize(k);
    for (std::size_t j = 0; j < k; ++j) result.clusters[j].centroid = centroids[j];
    for (std::size_t i = 0; i < n; ++i) result.clusters[assignment[i]].members.push_back(i);
    return result;
}

std::vector<Cluster> kmeans_cluster(const std::vector<FeaturePatch>& patches, std::size_t k, std::mt19937_64& rng) {
    if (patches.size() < k) {
        throw CardinalityError("cannot form k=" + std::to_string(k) + " clusters from " +
                               std::to_string(patches.size()) + " patches");
    }
    std::vector<std::vector<double>> points;
    points.reserve(patches.size());
    for (const auto& p : patches) points.push_back(p.values);
    auto init = kmeans_pp_init(points, k, rng);
    return lloyd(points, std::move(init)).clusters;
}

FeaturePalette compose_palette(const std::vector<Cluster>& clusters, const std::vector<FeaturePatch>& patches,
                               PaletteMode mode) {
    if (clusters.empty()) throw CardinalityError("no clusters to compose a palette from");
    if (patches.empty()) throw CardinalityError("no patches to compose a palette from");
    const int channels = patches[0].channels;
    const int size = patches[0].size;
    FeaturePalette palette;
    palette.mode = mode;
    for (const auto& cluster : clusters) {
        if (cluster.members.empty()) throw CardinalityError("cluster without members");
        if (mode == PaletteMode::Centroid) {
            palette.entries.emplace_back(channels, size, size, cluster.centroid);
            continue;
        }
        std::size_t best = cluster.members.front();
        double best_d = std::numeric_limits<double>::infinity();
        for (auto m : cluster.members) {
            if (m >= patches.size()) throw IndexError("cluster member index out of range");
            const double d = squared_distance(patches[m].values, cluster.centroid);
            if (d < best_d || (d == best_d && m < best)) {
                best_d = d;
                best = m;
            }
        }
        palette.entries.push_back(patches[best].as_tensor());
    }
    return palette;
}

template <typename T>
ChannelStats palette_stats(const Tensor3<T>& entry) {
    ChannelStats stats;
    stats.mean.resize(entry.channels());
    stats.std.resize(entry.channels());
    const double n = static_cast<double>(entry.plane_size());
    for (int c = 0; c < entry.channels(); ++c) {
        double s = 0.0;
        for (T v : entry.plane(c)) s += v;
        const double mean = s / n;
        double ss = 0.0;
        for (T v : entry.plane(c)) ss += (v - mean) * (v - mean);
        stats.mean[c] = mean;
        stats.std[c] = std::sqrt(ss / n);
    }
    return stats;
}

template <typename T>
FeaturePalette build_palette(const Tensor3<T>& style_features, const PaletteConfig& cfg, std::mt19937_64& rng) {
    if (cfg.k > cfg.num_patches) {
        throw CardinalityError("k=" + std::to_string(cfg.k) + " exceeds the number of patches (" +
                               std::to_string(cfg.num_patches) + ")");
    }
    auto patches = sample_patches(style_features, cfg.num_patches, cfg.patch_size, rng);
    auto clusters = kmeans_cluster(patches, cfg.k, rng);
    return compose_palette(clusters, patches, cfg.mode);
}

void save_palette(const FeaturePalette& palette, const std::filesystem::path& path) {
    TensorArchive archive;
    archive.metadata["mode"] = palette_mode_name(palette.mode);
    archive.metadata["k"] = std::to_string(palette.k());
    for (std::size_t i = 0; i < palette.k(); ++i) {
        const auto& e = palette.entries[i];
        const std::string base = "palette/entry" + std::to_string(i);
        archive.put(base,
                    {static_cast<std::uint64_t>(e.channels()), static_cast<std::uint64_t>(e.height()),
                     static_cast<std::uint64_t>(e.width())},
                    std::vector<float>(e.storage().begin(), e.storage().end()));
        const auto stats = palette_stats(e);
        const std::uint64_t c = stats.mean.size();
        archive.put(base + "/mean", {c}, std::vector<float>(stats.mean.begin(), stats.mean.end()));
        archive.put(base + "/std", {c}, std::vector<float>(stats.std.begin(), stats.std.end()));
    }
    archive.save(path);
}

template std::vector<FeaturePatch> sample_patches<float>(const Tensor3<float>&, std::size_t, int, std::mt19937_64&);
template std::vector<FeaturePatch> sample_patches<double>(const Tensor3<double>&, std::size_t, int, std::mt19937_64&);
template ChannelStats palette_stats<float>(const Tensor3<float>&);
template ChannelStats palette_stats<double>(const Tensor3<double>&);
template FeaturePalette build_palette<float>(const Tensor3<float>&, const PaletteConfig&, std::mt19937_64&);
template FeaturePalette build_palette<double>(const Tensor3<double>&, const PaletteConfig&, std::mt19937_64&);

}  // namespace pstyle
