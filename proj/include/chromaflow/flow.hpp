#pragma once

// Optical flow fields, Middlebury .flo I/O, backward warping, occlusion masks,
// and a pyramidal Horn-Schunck estimator.
//
// Convention: a FlowField lives on the TARGET grid. To bring source frame s
// onto target grid t, sample s at p + flow(p).

#include "chromaflow/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace chromaflow {

class FlowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FlowVector {
    float u = 0.0f;
    float v = 0.0f;
};

class FlowField {
public:
    FlowField() = default;
    FlowField(int height, int width, FlowVector fill = {});

    int height() const { return height_; }
    int width() const { return width_; }

    FlowVector& at(int y, int x) { return vectors_[static_cast<std::size_t>(y) * width_ + x]; }
    const FlowVector& at(int y, int x) const { return vectors_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<FlowVector> vectors() { return vectors_; }
    std::span<const FlowVector> vectors() const { return vectors_; }

    bool same_size(const Image& img) const { return img.height() == height_ && img.width() == width_; }
    bool same_size(const FlowField& f) const { return f.height_ == height_ && f.width_ == width_; }

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<FlowVector> vectors_;
};

/// 1 marks usable (non-occluded, in-bounds) pixels.
class OcclusionMask {
public:
    OcclusionMask() = default;
    OcclusionMask(int height, int width, std::uint8_t fill = 1);

    int height() const { return height_; }
    int width() const { return width_; }

    std::uint8_t& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

    std::span<std::uint8_t> values() { return values_; }
    std::span<const std::uint8_t> values() const { return values_; }

    std::size_t count() const;
    OcclusionMask operator&(const OcclusionMask& other) const;

    Image to_image() const;
    static OcclusionMask from_image(const Image& img);

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> values_;
};

// Middlebury .flo: "PIEH", int32 width, int32 height, then interleaved
// (u,v) float32 pairs in row-major order, all little-endian.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& field, const std::filesystem::path& path);

/// Bilinear footprint of a sample position. Taps with zero weight are
/// clamped to the border so that they can still be read.
struct BilinearTaps {
    std::array<int, 4> y{};
    std::array<int, 4> x{};
    std::array<float, 4> w{};
};

/// Footprint for sampling at (sy, sx) in an H x W grid, or nullopt when any
/// tap with nonzero weight falls outside the grid.
std::optional<BilinearTaps> bilinear_taps(float sy, float sx, int height, int width);

struct WarpResult {
    Image image;
    OcclusionMask validity;
};

/// out(p) = bilinear sample of source at p + flow(p); zero and invalid where
/// the footprint leaves the source.
WarpResult backward_warp(const Image& source, const FlowField& flow);

/// Forward-backward consistency. `fwd` lives on the reference grid and points
/// into the other frame; `bwd` lives on the other frame's grid and points back.
OcclusionMask occlusion_mask(const FlowField& fwd, const FlowField& bwd);

struct FlowConfig {
    int levels = 3;
    int iterations = 100;
    float smoothness = 0.1f;  ///< Horn-Schunck alpha; the energy weighs |grad u|^2 by alpha^2
    int warps = 1;
};

/// Pyramidal Horn-Schunck. Result lives on a's grid and points into b, so it
/// can be passed to backward_warp(b, ...) to bring b onto a.
FlowField estimate_flow(const Image& a, const Image& b, const FlowConfig& cfg = {});

double mean_endpoint_error(const FlowField& estimate, const FlowField& truth,
                           const OcclusionMask* region = nullptr);

}  // namespace chromaflow
