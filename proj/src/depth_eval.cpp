#include "pstyle/depth_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pstyle/container.hpp"
#include "pstyle/errors.hpp"
#include "pstyle/imaging.hpp"

namespace pstyle {

namespace fs = std::filesystem;

DepthMap::DepthMap(int height, int width, std::vector<double> values, std::string source_id)
    : height_(height), width_(width), values_(std::move(values)), source_id_(std::move(source_id)) {
    if (height <= 0 || width <= 0) throw DimensionError("depth map must be non-empty");
    if (values_.size() != static_cast<std::size_t>(height) * width) {
        throw ShapeError("depth map has " + std::to_string(values_.size()) + " values for " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    for (double v : values_) {
        if (!std::isfinite(v)) throw NumericError("non-finite depth value in " + source_id_);
        if (v < 0.0) throw RangeError("negative depth value in " + source_id_);
    }
}

DepthMap DepthMap::minmax_normalized() const {
    const auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
    const double range = *hi - *lo;
    std::vector<double> out(values_.size(), 0.0);
    if (range > 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (values_[i] - *lo) / range;
    }
    return DepthMap(height_, width_, std::move(out), source_id_);
}

DepthError pair_depth_error(const DepthMap& content, const DepthMap& stylized) {
    if (content.height() != stylized.height() || content.width() != stylized.width()) {
        throw ShapeError("depth maps differ in shape: " + std::to_string(content.height()) + "x" +
                         std::to_string(content.width()) + " vs " + std::to_string(stylized.height()) + "x" +
                         std::to_string(stylized.width()));
    }
    const auto& a = content.values();
    const auto& b = stylized.values();
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(b[i] - a[i]);
        abs_sum += d;
        sq_sum += d * d;
    }
    const double n = static_cast<double>(a.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

DepthMap load_depth(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError("depth file not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() == 4 && std::string(magic, 4) == "PSTC") {
        const TensorArchive archive = TensorArchive::load(path);
        const StoredTensor& t = archive.require("depth");
        if (t.shape.size() != 2) throw ShapeError("depth tensor must be 2-D in " + path.string());
        std::vector<double> values(t.values.begin(), t.values.end());
        return DepthMap(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), std::move(values), path.string());
    }
    const GrayImage img = load_gray_png(path);
    const double max_code = img.bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<double> values(img.values.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img.values[i] / max_code;
    return DepthMap(img.height, img.width, std::move(values), path.string());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

std::vector<DepthPair> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("manifest not found: " + path.string());
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    std::vector<DepthPair> pairs;
    std::string line;
    bool header = true;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = split_csv_line(line);
        if (header) {
            header = false;
            if (fields.size() != 3 || fields[0] != "pair_id" || fields[1] != "content_depth_path" ||
                fields[2] != "stylized_depth_path") {
                throw FormatError("manifest header must be pair_id,content_depth_path,stylized_depth_path");
            }
            continue;
        }
        if (fields.size() != 3) {
            throw FormatError("manifest line " + std::to_string(line_no) + " must have 3 fields");
        }
        pairs.push_back({fields[0], resolve(fields[1]), resolve(fields[2])});
    }
    if (header) throw FormatError("manifest is empty: " + path.string());
    return pairs;
}

EvalReport evaluate_corpus(const std::vector<DepthPair>& pairs, bool minmax_normalize) {
    if (pairs.empty()) throw CardinalityError("no depth pairs to evaluate");
    EvalReport report;
    double mae_sum = 0.0, rmse_sum = 0.0;
    for (const auto& pair : pairs) {
        DepthError err;
        try {
            DepthMap c = load_depth(pair.content_path);
            DepthMap s = load_depth(pair.stylized_path);
            if (minmax_normalize) {
                c = c.minmax_normalized();
                s = s.minmax_normalized();
            }
            err = pair_depth_error(c, s);
        } catch (const ShapeError& e) {
            throw ShapeError("pair '" + pair.pair_id + "': " + e.what());
        } catch (const Error& e) {
            throw IoError("pair '" + pair.pair_id + "': " + e.what());
        }
        report.per_pair.push_back({pair.pair_id, err.mae, err.rmse});
        mae_sum += err.mae;
        rmse_sum += err.rmse;
    }
    report.n = report.per_pair.size();
    report.aggregate_mae = mae_sum / static_cast<double>(report.n);
    report.aggregate_rmse = rmse_sum / static_cast<double>(report.n);
    return report;
}

void write_report_csv(const EvalReport& report, const fs::path& path) {
    if (path.has_parent_path() && !fs::is_directory(path.parent_path())) {
        throw IoError("output directory does not exist: " + path.parent_path().string());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    char buf[128];
    out << "pair_id,mae,rmse\n";
    for (const auto& row : report.per_pair) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", row.mae, row.rmse);
        out << row.pair_id << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", report.aggregate_mae, report.aggregate_rmse);
    out << "mean" << buf;
}

std::string report_summary(const EvalReport& report) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "pairs=%zu mae=%.6f rmse=%.6f", report.n, report.aggregate_mae,
                  report.aggregate_rmse);
    return buf;
}

}  // namespace pstyle
