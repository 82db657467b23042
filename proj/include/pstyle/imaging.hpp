#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "pstyle/tensor.hpp"

namespace pstyle {

/// H x W x 3 RGB image with interleaved float channels in [0, 1].
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, float fill = 0.0f);
    /// Takes ownership of interleaved RGB values; validates range and size.
    ImageTensor(int height, int width, std::vector<float> rgb);

    int height() const { return h_; }
    int width() const { return w_; }
    bool empty() const { return pixels_.empty(); }

    float& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * w_ + x) * 3 + c]; }

    const std::vector<float>& pixels() const { return pixels_; }

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<float> pixels_;
};

/// Decodes a PNG or JPEG file into RGB. Alpha is dropped, grayscale replicated.
ImageTensor load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG.
void save_image(const ImageTensor& img, const std::filesystem::path& path);

/// Bilinear resize so that min(H, W) == target, keeping the aspect ratio.
ImageTensor resize_short_side(const ImageTensor& img, int target);

/// Bilinear resize to an explicit output size (half-pixel centers).
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

ImageTensor random_crop(const ImageTensor& img, int size, std::mt19937_64& rng);
ImageTensor crop(const ImageTensor& img, int top, int left, int size);

template <typename T>
Tensor3<T> to_tensor(const ImageTensor& img);

/// Converts a 3-channel tensor back to an image, clamping to [0, 1].
/// Non-finite values raise NumericError.
template <typename T>
ImageTensor from_tensor(const Tensor3<T>& t);

/// Single-channel grid read from an 8- or 16-bit grayscale PNG.
struct GrayImage {
    int height = 0;
    int width = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> values;
};

GrayImage load_gray_png(const std::filesystem::path& path);
void save_gray16_png(const GrayImage& img, const std::filesystem::path& path);

}  // namespace pstyle
