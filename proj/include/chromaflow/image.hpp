#pragma once

// Image and video containers, color conversions, PNG codec and pixel metrics.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace chromaflow {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Row-major, channel-interleaved image with values in [0,1].
/// Channels are 1 (gray) or 3 (RGB).
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, float fill = 0.0f);
    Image(int height, int width, int channels, std::vector<float> data);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }

    float& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
    float at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    bool same_shape(const Image& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }
    bool same_size(const Image& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

/// Ordered, equal-shape frames.
struct VideoClip {
    std::vector<Image> frames;
    std::optional<double> frame_rate;

    std::size_t size() const { return frames.size(); }
    /// Throws ImageError when empty or when frames disagree in shape.
    void validate() const;
};

Image load_png(const std::filesystem::path& path);
void save_png(const Image& img, const std::filesystem::path& path);

/// Frames named %06d.png in frame order.
VideoClip load_video_dir(const std::filesystem::path& dir);
void save_video_dir(const VideoClip& clip, const std::filesystem::path& dir);
std::string frame_filename(std::size_t index);

// Rec.601 luma weights.
inline constexpr float kLumaR = 0.299f;
inline constexpr float kLumaG = 0.587f;
inline constexpr float kLumaB = 0.114f;

Image to_grayscale(const Image& rgb);
/// Replicates a gray image into 3 identical channels.
Image gray_to_rgb(const Image& gray);
/// HSV S channel: (max-min)/max, 0 where max == 0.
Image saturation_map(const Image& rgb);
double mean_saturation(const Image& rgb);

double mse(const Image& a, const Image& b);
/// Peak 1.0; capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

/// Shifts each pixel so that its Rec.601 luma equals `gray`, scaling the
/// chroma offset down only as far as needed to stay inside [0,1].
Image replace_luminance(const Image& colorized, const Image& gray);

/// Snaps every value to the nearest 8-bit level, exactly as save_png then load_png would.
Image quantize_8bit(const Image& img);

}  // namespace chromaflow
