#include "pstyle/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "pstyle/errors.hpp"

namespace pstyle {

namespace fs = std::filesystem;

ImageTensor::ImageTensor(int height, int width, float fill) : h_(height), w_(width) {
    if (height < 1 || width < 1) throw DimensionError("image dimensions must be positive");
    if (!(fill >= 0.0f && fill <= 1.0f)) throw RangeError("pixel fill outside [0,1]");
    pixels_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

ImageTensor::ImageTensor(int height, int width, std::vector<float> rgb)
    : h_(height), w_(width), pixels_(std::move(rgb)) {
    if (height < 1 || width < 1) throw DimensionError("image dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(height) * width * 3) {
        throw ShapeError("pixel buffer does not match image dimensions");
    }
    for (float v : pixels_) {
        if (!(v >= 0.0f && v <= 1.0f)) throw RangeError("pixel value outside [0,1] or non-finite");
    }
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_for_read(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError("no such file: " + path.string());
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    return f;
}

// ---------------------------------------------------------------------------
// PNG

struct PngDecoded {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 8;
    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
    char message[256] = {0};
};

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* out = static_cast<PngDecoded*>(png_get_error_ptr(png));
    std::snprintf(out->message, sizeof(out->message), "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decodes to 8-bit RGB (gray expanded) or, with keep_gray16, to native
// gray of 8 or 16 bits. Returns false and fills out->message on failure.
bool decode_png(std::FILE* fp, PngDecoded* out, bool keep_gray16) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, out, png_error_fn, png_warning_fn);
    if (!png) return false;
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        return false;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (keep_gray16) {
        if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_GRAY_ALPHA) {
            std::snprintf(out->message, sizeof(out->message), "expected a grayscale PNG");
            png_destroy_read_struct(&png, &info, nullptr);
            return false;
        }
        if (depth == 16) png_set_swap(png);
    } else {
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);

    out->width = static_cast<int>(png_get_image_width(png, info));
    out->height = static_cast<int>(png_get_image_height(png, info));
    out->channels = png_get_channels(png, info);
    out->bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    out->bytes.resize(rowbytes * out->height);
    out->rows.resize(out->height);
    for (int y = 0; y < out->height; ++y) out->rows[y] = out->bytes.data() + rowbytes * y;
    png_read_image(png, out->rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool has_png_signature(std::FILE* fp) {
    unsigned char sig[8];
    const std::size_t n = std::fread(sig, 1, 8, fp);
    std::rewind(fp);
    return n == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

bool has_jpeg_signature(std::FILE* fp) {
    unsigned char sig[3];
    const std::size_t n = std::fread(sig, 1, 3, fp);
    std::rewind(fp);
    return n == 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF;
}

// ---------------------------------------------------------------------------
// JPEG

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Corrupt-data warnings (e.g. premature end of data) are treated as failures.
void jpeg_emit_message(j_common_ptr cinfo, int level) {
    if (level < 0) jpeg_error_exit(cinfo);
}

struct JpegDecoded {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> bytes;
};

bool decode_jpeg(std::FILE* fp, JpegDecoded* out, char* message) {
    jpeg_decompress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    err.base.emit_message = jpeg_emit_message;
    err.message[0] = '\0';
    if (setjmp(err.jump)) {
        std::snprintf(message, JMSG_LENGTH_MAX, "%s", err.message);
        jpeg_destroy_decompress(&cinfo);
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    if (cinfo.jpeg_color_space != JCS_GRAYSCALE) cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out->width = static_cast<int>(cinfo.output_width);
    out->height = static_cast<int>(cinfo.output_height);
    out->channels = cinfo.output_components;
    const std::size_t stride = static_cast<std::size_t>(out->width) * out->channels;
    out->bytes.resize(stride * out->height);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out->bytes.data() + stride * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

ImageTensor image_from_bytes(int h, int w, int channels, const std::uint8_t* src) {
    std::vector<float> rgb(static_cast<std::size_t>(h) * w * 3);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            const int sc = channels >= 3 ? c : 0;
            rgb[i * 3 + c] = static_cast<float>(src[i * channels + sc]) / 255.0f;
        }
    }
    return ImageTensor(h, w, std::move(rgb));
}

}  // namespace

ImageTensor load_image(const fs::path& path) {
    FilePtr fp = open_for_read(path);
    if (has_png_signature(fp.get())) {
        auto decoded = std::make_unique<PngDecoded>();
        if (!decode_png(fp.get(), decoded.get(), false)) {
            throw FormatError(path.string() + ": PNG decode failed: " + decoded->message);
        }
        if (decoded->width < 1 || decoded->height < 1) throw FormatError(path.string() + ": empty PNG");
        return image_from_bytes(decoded->height, decoded->width, decoded->channels, decoded->bytes.data());
    }
    if (has_jpeg_signature(fp.get())) {
        auto decoded = std::make_unique<JpegDecoded>();
        char message[JMSG_LENGTH_MAX] = {0};
        if (!decode_jpeg(fp.get(), decoded.get(), message)) {
            throw FormatError(path.string() + ": JPEG decode failed: " + message);
        }
        if (decoded->width < 1 || decoded->height < 1) throw FormatError(path.string() + ": empty JPEG");
        return image_from_bytes(decoded->height, decoded->width, decoded->channels, decoded->bytes.data());
    }
    throw FormatError(path.string() + ": not a PNG or JPEG file");
}

void save_image(const ImageTensor& img, const fs::path& path) {
    if (img.empty()) throw DimensionError("cannot save an empty image");
    const auto parent = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) throw IoError("directory does not exist: " + parent.string());

    std::vector<std::uint8_t> bytes(img.pixels().size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::clamp(img.pixels()[i], 0.0f, 1.0f);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        throw IoError("failed to write '" + path.string() + "': " + image.message);
    }
}

GrayImage load_gray_png(const fs::path& path) {
    FilePtr fp = open_for_read(path);
    if (!has_png_signature(fp.get())) throw FormatError(path.string() + ": not a PNG file");
    auto decoded = std::make_unique<PngDecoded>();
    if (!decode_png(fp.get(), decoded.get(), true)) {
        throw FormatError(path.string() + ": PNG decode failed: " + decoded->message);
    }
    GrayImage out;
    out.height = decoded->height;
    out.width = decoded->width;
    out.bit_depth = decoded->bit_depth;
    const std::size_t n = static_cast<std::size_t>(out.height) * out.width;
    out.values.resize(n);
    if (decoded->bit_depth == 16) {
        std::memcpy(out.values.data(), decoded->bytes.data(), n * 2);
    } else {
        for (std::size_t i = 0; i < n; ++i) out.values[i] = decoded->bytes[i];
    }
    return out;
}

void save_gray16_png(const GrayImage& img, const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_LINEAR_Y;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.values.data(), 0, nullptr)) {
        throw IoError("failed to write '" + path.string() + "': " + image.message);
    }
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw DimensionError("resize target must be positive");
    if (out_h == img.height() && out_w == img.width()) return img;

    const int in_h = img.height();
    const int in_w = img.width();
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;

    struct Tap {
        int i0, i1;
        float f;
    };
    auto taps = [](int out_n, int in_n, double scale) {
        std::vector<Tap> t(out_n);
        for (int o = 0; o < out_n; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, in_n - 1);
            t[o] = {i0, i1, static_cast<float>(src - i0)};
        }
        return t;
    };
    const auto ty = taps(out_h, in_h, sy);
    const auto tx = taps(out_w, in_w, sx);

    std::vector<float> out(static_cast<std::size_t>(out_h) * out_w * 3);
    for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[y];
        for (int x = 0; x < out_w; ++x) {
            const Tap& b = tx[x];
            for (int c = 0; c < 3; ++c) {
                const float top = img.at(a.i0, b.i0, c) * (1 - b.f) + img.at(a.i0, b.i1, c) * b.f;
                const float bot = img.at(a.i1, b.i0, c) * (1 - b.f) + img.at(a.i1, b.i1, c) * b.f;
                out[(static_cast<std::size_t>(y) * out_w + x) * 3 + c] =
                    std::clamp(top * (1 - a.f) + bot * a.f, 0.0f, 1.0f);
            }
        }
    }
    return ImageTensor(out_h, out_w, std::move(out));
}

ImageTensor resize_short_side(const ImageTensor& img, int target) {
    if (target < 1) throw DimensionError("resize target must be positive");
    const int h = img.height();
    const int w = img.width();
    if (std::min(h, w) == target) return img;
    if (h <= w) {
        const int nw = static_cast<int>(std::lround(static_cast<double>(w) * target / h));
        return resize_bilinear(img, target, std::max(nw, target));
    }
    const int nh = static_cast<int>(std::lround(static_cast<double>(h) * target / w));
    return resize_bilinear(img, std::max(nh, target), target);
}

ImageTensor crop(const ImageTensor& img, int top, int left, int size) {
    if (size < 1 || top < 0 || left < 0 || top + size > img.height() || left + size > img.width()) {
        throw DimensionError("crop window outside image");
    }
    std::vector<float> out(static_cast<std::size_t>(size) * size * 3);
    for (int y = 0; y < size; ++y) {
        const float* src = &img.pixels()[(static_cast<std::size_t>(top + y) * img.width() + left) * 3];
        std::copy(src, src + static_cast<std::size_t>(size) * 3, out.begin() + static_cast<std::size_t>(y) * size * 3);
    }
    return ImageTensor(size, size, std::move(out));
}

ImageTensor random_crop(const ImageTensor& img, int size, std::mt19937_64& rng) {
    if (size < 1) throw DimensionError("crop size must be positive");
    if (img.height() < size || img.width() < size) {
        throw DimensionError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                             " is smaller than crop size " + std::to_string(size));
    }
    std::uniform_int_distribution<int> dy(0, img.height() - size);
    std::uniform_int_distribution<int> dx(0, img.width() - size);
    const int top = dy(rng);
    const int left = dx(rng);
    return crop(img, top, left, size);
}

template <typename T>
Tensor3<T> to_tensor(const ImageTensor& img) {
    Tensor3<T> t(3, img.height(), img.width());
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) t.at(c, y, x) = static_cast<T>(img.at(y, x, c));
        }
    }
    return t;
}

template <typename T>
ImageTensor from_tensor(const Tensor3<T>& t) {
    if (t.channels() != 3) throw ShapeError("image tensor must have 3 channels, got " + t.shape_string());
    std::vector<float> rgb(t.plane_size() * 3);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < t.height(); ++y) {
            for (int x = 0; x < t.width(); ++x) {
                const T v = t.at(c, y, x);
                if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite pixel in decoded image");
                rgb[(static_cast<std::size_t>(y) * t.width() + x) * 3 + c] =
                    static_cast<float>(std::clamp<T>(v, T(0), T(1)));
            }
        }
    }
    return ImageTensor(t.height(), t.width(), std::move(rgb));
}

template Tensor3<float> to_tensor<float>(const ImageTensor&);
template Tensor3<double> to_tensor<double>(const ImageTensor&);
template ImageTensor from_tensor<float>(const Tensor3<float>&);
template ImageTensor from_tensor<double>(const Tensor3<double>&);

}  // namespace pstyle
