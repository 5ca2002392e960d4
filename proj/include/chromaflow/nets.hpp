#pragma once

// Networks built on the autodiff tape: the fixed feature bank (phi), the
// d-headed colorizer f, the residual refiner g, Adam, and CWF1 weight files.

#include "chromaflow/image.hpp"
#include "chromaflow/ops.hpp"
#include "chromaflow/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace chromaflow::nn {

class WeightsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named parameter set. The fingerprint is derived from names and shapes, so
/// two sets are interchangeable exactly when their architectures agree.
struct NetworkWeights {
    std::map<std::string, Tensor> entries;

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    std::string fingerprint() const;
    void zero_grad();
    std::size_t parameter_count() const;
};

// CWF1: "CWF1", u32 version, u32 count, then per entry u16 name length,
// UTF-8 name, u8 rank, u32 dims, float32 payload; all little-endian.
inline constexpr std::uint32_t kWeightsVersion = 1;
void save_weights(const NetworkWeights& w, const std::filesystem::path& path);
NetworkWeights load_weights(const std::filesystem::path& path);
/// Loads and rejects files whose fingerprint differs from `expected`.
NetworkWeights load_weights(const std::filesystem::path& path, const std::string& expected_fingerprint);

struct AdamState {
    std::map<std::string, std::vector<float>> m;
    std::map<std::string, std::vector<float>> v;
    std::int64_t step = 0;
};

struct AdamParams {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

/// Bias-corrected Adam update using each tensor's accumulated grad.
void adam_step(NetworkWeights& w, AdamState& state, const AdamParams& p);

/// Converts between images and (C,H,W) tensors.
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(std::span<const float> chw, int channels, int height, int width);
Image tensor_to_image(const Tensor& t);

/// Fixed random convolutional bank: three stages (16/32/64 channels) with
/// average-pool stride 2 between them, leaky rectification, per-pixel L2
/// channel normalization, and bilinear upsampling to a 112-channel hypercolumn.
class FeatureExtractor {
public:
    static constexpr int kStageWidths[3] = {16, 32, 64};
    static constexpr int kChannels = 112;
    static constexpr std::uint64_t kDefaultSeed = 0x5eed'f00dULL;

    explicit FeatureExtractor(std::uint64_t seed = kDefaultSeed);
    explicit FeatureExtractor(NetworkWeights weights);

    /// (3,H,W) RGB -> (112,H,W). H and W must be divisible by 4.
    Var forward(Var rgb) const;
    /// Per-stage normalized maps at native resolution.
    std::vector<Var> stages(Var rgb) const;

    /// Hypercolumn of a grayscale image (replicated to RGB), no gradient.
    Tensor hypercolumn(const Image& gray) const;
    Tensor features(const Image& rgb) const;

    const NetworkWeights& weights() const { return weights_; }

private:
    NetworkWeights weights_;
};

struct UNetConfig {
    int in_channels = 0;
    int reduce_channels = 32;
    int widths[3] = {16, 32, 64};
    int out_channels = 3;
};

/// Three-level U-Net trunk behind a leading 1x1 reduction. Parameter names are
/// prefixed so that several trunks can share one weight set.
class UNet {
public:
    UNet() = default;
    explicit UNet(UNetConfig cfg) : cfg_(cfg) {}

    void init(NetworkWeights& w, std::uint64_t seed, bool zero_head) const;
    /// Returns the raw head output (out_channels,H,W).
    Var forward(Tape& tape, std::map<std::string, Var>& params, Var x) const;

    const UNetConfig& config() const { return cfg_; }

private:
    UNetConfig cfg_;
};

/// Binds every tensor of a weight set onto a tape.
std::map<std::string, Var> bind(Tape& tape, NetworkWeights& w, bool trainable);

struct ColorizerConfig {
    int candidates = 4;
    int reduce_channels = 32;
};

/// f: gray + hypercolumn -> d RGB candidates in (0,1).
class ColorizerNet {
public:
    explicit ColorizerNet(ColorizerConfig cfg = {}, std::uint64_t seed = 1);
    ColorizerNet(ColorizerConfig cfg, NetworkWeights weights);

    int candidates() const { return cfg_.candidates; }
    const ColorizerConfig& config() const { return cfg_; }

    /// gray (1,H,W) and hypercolumn (112,H,W) -> d tensors of shape (3,H,W).
    std::vector<Var> forward(Tape& tape, Var gray, Var hypercolumn, bool trainable);
    /// Convenience inference on an image; H and W must be divisible by 4.
    std::vector<Image> colorize(const Image& gray, const FeatureExtractor& phi);

    NetworkWeights& weights() { return weights_; }
    const NetworkWeights& weights() const { return weights_; }
    std::string fingerprint() const { return weights_.fingerprint(); }
    static std::string expected_fingerprint(ColorizerConfig cfg);

private:
    ColorizerConfig cfg_;
    UNet trunk_;
    NetworkWeights weights_;
};

/// g: (C^s, warped C^t, W(C), W(X)) -> clamp(C^s + correction, 0, 1).
class RefinerNet {
public:
    static constexpr int kInputChannels = 8;

    explicit RefinerNet(int reduce_channels = 32, std::uint64_t seed = 2);
    explicit RefinerNet(NetworkWeights weights, int reduce_channels = 32);

    Var forward(Tape& tape, Var c_s, Var warped_c_t, Var w_color, Var w_gray, bool trainable);
    Image refine(const Image& c_s, const Image& warped_c_t, const Image& w_color, const Image& w_gray);

    NetworkWeights& weights() { return weights_; }
    const NetworkWeights& weights() const { return weights_; }
    std::string fingerprint() const { return weights_.fingerprint(); }
    static std::string expected_fingerprint(int reduce_channels = 32);

private:
    UNet trunk_;
    NetworkWeights weights_;
};

}  // namespace chromaflow::nn
