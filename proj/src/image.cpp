#include "chromaflow/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace chromaflow {

namespace fs = std::filesystem;

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
    if (height <= 0 || width <= 0) {
        throw ImageError("image dimensions must be positive");
    }
    if (channels != 1 && channels != 3) {
        throw ImageError("image must have 1 or 3 channels");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (height <= 0 || width <= 0) {
        throw ImageError("image dimensions must be positive");
    }
    if (channels != 1 && channels != 3) {
        throw ImageError("image must have 1 or 3 channels");
    }
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
        throw ImageError("image data length does not match height*width*channels");
    }
}

void VideoClip::validate() const {
    if (frames.empty()) {
        throw ImageError("video clip has no frames");
    }
    for (const auto& f : frames) {
        if (!f.same_shape(frames.front())) {
            throw ImageError("video frames differ in shape");
        }
    }
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
    auto* what = static_cast<std::string*>(png_get_error_ptr(png));
    if (what) *what = msg;
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Image load_png(const fs::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) {
        throw IoError("cannot open " + path.string());
    }
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError("not a PNG file: " + path.string());
    }

    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }

    // Everything that may longjmp lives in this frame; no non-trivial locals below.
    std::vector<png_byte> bytes;
    png_uint_32 w = 0, h = 0;
    int depth = 0, color_type = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode error in " + path.string() + ": " + err);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_get_IHDR(png, info, &w, &h, &depth, &color_type, nullptr, nullptr, nullptr);

    const bool gray = color_type == PNG_COLOR_TYPE_GRAY;
    const bool rgb = color_type == PNG_COLOR_TYPE_RGB;
    const bool has_trns = png_get_valid(png, info, PNG_INFO_tRNS) != 0;
    if (!(gray || rgb) || depth != 8 || has_trns) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("unsupported PNG (need 8-bit gray or RGB without alpha/palette): " +
                         path.string());
    }
    const int channels = gray ? 1 : 3;
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    bytes.resize(row_bytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = bytes.data() + y * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    std::vector<float> data(static_cast<std::size_t>(w) * h * channels);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(bytes[i]) / 255.0f;
    return Image(static_cast<int>(h), static_cast<int>(w), channels, std::move(data));
}

void save_png(const Image& img, const fs::path& path) {
    if (img.empty() || img.width() <= 0 || img.height() <= 0) {
        throw ImageError("cannot save an empty image");
    }
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) {
        throw IoError("cannot write " + path.string());
    }
    std::vector<png_byte> bytes(img.data().size());
    std::transform(img.data().begin(), img.data().end(), bytes.begin(), to_byte);
    const std::size_t row_bytes = static_cast<std::size_t>(img.width()) * img.channels();
    std::vector<png_bytep> rows(img.height());
    for (int y = 0; y < img.height(); ++y) rows[y] = bytes.data() + y * row_bytes;

    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode error in " + path.string() + ": " + err);
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, img.width(), img.height(), 8,
                 img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::string frame_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu.png", index);
    return buf;
}

VideoClip load_video_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw IoError("not a directory: " + dir.string());
    }
    VideoClip clip;
    for (std::size_t i = 0;; ++i) {
        const fs::path p = dir / frame_filename(i);
        if (!fs::exists(p)) break;
        clip.frames.push_back(load_png(p));
    }
    if (clip.frames.empty()) {
        throw IoError("no frames (000000.png ...) in " + dir.string());
    }
    clip.validate();
    return clip;
}

void save_video_dir(const VideoClip& clip, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < clip.frames.size(); ++i) {
        save_png(clip.frames[i], dir / frame_filename(i));
    }
}

Image to_grayscale(const Image& rgb) {
    if (rgb.channels() != 3) throw ImageError("to_grayscale expects a 3-channel image");
    Image out(rgb.height(), rgb.width(), 1);
    auto src = rgb.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const float l = kLumaR * src[3 * i] + kLumaG * src[3 * i + 1] + kLumaB * src[3 * i + 2];
        dst[i] = std::clamp(l, 0.0f, 1.0f);
    }
    return out;
}

Image gray_to_rgb(const Image& gray) {
    if (gray.channels() != 1) throw ImageError("gray_to_rgb expects a 1-channel image");
    Image out(gray.height(), gray.width(), 3);
    auto src = gray.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[3 * i] = dst[3 * i + 1] = dst[3 * i + 2] = src[i];
    }
    return out;
}

Image saturation_map(const Image& rgb) {
    if (rgb.channels() != 3) throw ImageError("saturation_map expects a 3-channel image");
    Image out(rgb.height(), rgb.width(), 1);
    auto src = rgb.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const float r = src[3 * i], g = src[3 * i + 1], b = src[3 * i + 2];
        const float mx = std::max({r, g, b});
        const float mn = std::min({r, g, b});
        dst[i] = mx > 0.0f ? std::clamp((mx - mn) / mx, 0.0f, 1.0f) : 0.0f;
    }
    return out;
}

Image quantize_8bit(const Image& img) {
    Image out = img;
    for (float& v : out.data()) v = static_cast<float>(to_byte(v)) / 255.0f;
    return out;
}

double mean_saturation(const Image& rgb) {
    const Image s = saturation_map(rgb);
    double acc = 0.0;
    for (float v : s.data()) acc += v;
    return acc / static_cast<double>(s.data().size());
}

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ImageError("mse: shape mismatch");
    double acc = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = static_cast<double>(da[i]) - db[i];
        acc += d * d;
    }
    return acc / static_cast<double>(da.size());
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m < 1e-10) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

Image replace_luminance(const Image& colorized, const Image& gray) {
    if (colorized.channels() != 3 || gray.channels() != 1) {
        throw ImageError("replace_luminance expects RGB colorized and 1-channel gray");
    }
    if (!colorized.same_size(gray)) throw ImageError("replace_luminance: size mismatch");
    Image out(colorized.height(), colorized.width(), 3);
    auto src = colorized.data();
    auto lum = gray.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < lum.size(); ++i) {
        const double target = std::clamp(static_cast<double>(lum[i]), 0.0, 1.0);
        const double r = src[3 * i], g = src[3 * i + 1], b = src[3 * i + 2];
        const double luma = kLumaR * r + kLumaG * g + kLumaB * b;
        const double chroma[3] = {r - luma, g - luma, b - luma};
        // Largest k in [0,1] keeping target + k*chroma inside the unit cube.
        double k = 1.0;
        for (double c : chroma) {
            if (c > 0.0) k = std::min(k, (1.0 - target) / c);
            else if (c < 0.0) k = std::min(k, -target / c);
        }
        k = std::max(k, 0.0);
        for (int c = 0; c < 3; ++c) {
            dst[3 * i + c] = static_cast<float>(std::clamp(target + k * chroma[c], 0.0, 1.0));
        }
    }
    return out;
}

}  // namespace chromaflow
