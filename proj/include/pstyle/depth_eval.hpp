#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace pstyle {

/// H x W grid of nonnegative, finite depth values.
class DepthMap {
public:
    DepthMap() = default;
    DepthMap(int height, int width, std::vector<double> values, std::string source_id = {});

    int height() const { return height_; }
    int width() const { return width_; }
    const std::vector<double>& values() const { return values_; }
    const std::string& source_id() const { return source_id_; }

    /// Rescales to [0,1] by the map's own min and max; a flat map becomes all zeros.
    DepthMap minmax_normalized() const;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<double> values_;
    std::string source_id_;
};

struct DepthError {
    double mae = 0.0;
    double rmse = 0.0;
};

DepthError pair_depth_error(const DepthMap& content, const DepthMap& stylized);

/// 8/16-bit grayscale PNG (value / max code) or a tensor container holding an
/// [H, W] tensor named "depth".
DepthMap load_depth(const std::filesystem::path& path);

struct DepthPair {
    std::string pair_id;
    std::filesystem::path content_path;
    std::filesystem::path stylized_path;
};

/// CSV with header `pair_id,content_depth_path,stylized_depth_path`.
/// Relative paths resolve against the manifest's directory.
std::vector<DepthPair> load_manifest(const std::filesystem::path& path);

struct PairResult {
    std::string pair_id;
    double mae = 0.0;
    double rmse = 0.0;
};

struct EvalReport {
    std::vector<PairResult> per_pair;
    double aggregate_mae = 0.0;
    double aggregate_rmse = 0.0;
    std::size_t n = 0;
};

/// Unweighted mean over pairs of the per-pair errors.
EvalReport evaluate_corpus(const std::vector<DepthPair>& pairs, bool minmax_normalize = false);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
std::string report_summary(const EvalReport& report);

}  // namespace pstyle
