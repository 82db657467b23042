#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pstyle/imaging.hpp"
#include "pstyle/tensor.hpp"

namespace testing {

template <typename T>
pstyle::Tensor3<T> random_tensor(int c, int h, int w, std::mt19937_64& rng, double scale = 1.0, double shift = 0.0) {
    std::normal_distribution<double> nd(shift, scale);
    pstyle::Tensor3<T> t(c, h, w);
    for (auto& v : t.storage()) v = static_cast<T>(nd(rng));
    return t;
}

inline pstyle::ImageTensor random_image(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> px(static_cast<std::size_t>(h) * w * 3);
    for (auto& v : px) v = u(rng);
    return pstyle::ImageTensor(h, w, std::move(px));
}

// Smooth gradient with a disc; deterministic for a given seed.
inline pstyle::ImageTensor content_image(int h, int w, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double fx = 2.0 + 4.0 * u(rng), phase = 6.0 * u(rng), cy = u(rng), cx = u(rng), r = 0.15 + 0.2 * u(rng);
    const double tint = u(rng);
    pstyle::ImageTensor img(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double ny = static_cast<double>(y) / h, nx = static_cast<double>(x) / w;
            const bool disc = (ny - cy) * (ny - cy) + (nx - cx) * (nx - cx) < r * r;
            img.at(y, x, 0) = static_cast<float>(0.5 + 0.45 * std::sin(fx * nx + phase));
            img.at(y, x, 1) = static_cast<float>(0.1 + 0.8 * ny * tint);
            img.at(y, x, 2) = disc ? 0.9f : 0.15f;
        }
    }
    return img;
}

// Two-colour oriented stripes.
inline pstyle::ImageTensor style_image(int h, int w, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double freq = 10.0 + 30.0 * u(rng), angle = 3.14159 * u(rng);
    float a[3], b[3];
    for (auto& v : a) v = static_cast<float>(u(rng));
    for (auto& v : b) v = static_cast<float>(u(rng));
    pstyle::ImageTensor img(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double t = (std::cos(angle) * x + std::sin(angle) * y) / std::max(h, w);
            const bool on = std::sin(freq * t) > 0.0;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = on ? a[c] : b[c];
        }
    }
    return img;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("pstyle-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace testing
