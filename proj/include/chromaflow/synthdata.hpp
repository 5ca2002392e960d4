#pragma once

// Deterministic moving-shape clips with ground-truth color, flow and
// occlusion, plus the on-disk dataset layout and its JSON manifest.

#include "chromaflow/flow.hpp"
#include "chromaflow/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace chromaflow {

using Rgb = std::array<float, 3>;

enum class ShapeKind { Rectangle, Disk };

struct ShapeSpec {
    ShapeKind kind = ShapeKind::Rectangle;
    float size = 16.0f;  ///< side length or diameter, pixels
    Rgb color{0.8f, 0.2f, 0.2f};
    float x = 32.0f;  ///< center at frame 0
    float y = 32.0f;
    float vx = 0.0f;  ///< pixels per frame
    float vy = 0.0f;
};

struct SceneSpec {
    int height = 64;
    int width = 64;
    int frames = 8;
    std::vector<ShapeSpec> shapes;
    Rgb background_top{0.55f, 0.62f, 0.75f};
    Rgb background_bottom{0.55f, 0.62f, 0.75f};
    float texture_noise = 0.05f;
    std::uint64_t seed = 0;
    bool allow_leaving = false;

    void validate() const;
};

/// Eight saturated colors; palette_index() keys them to shape kind and size.
const std::array<Rgb, 8>& palette();
inline constexpr std::array<float, 4> kSizeClasses{10.0f, 16.0f, 22.0f, 28.0f};
int palette_index(ShapeKind kind, int size_class);

/// Random scene whose shapes stay on the canvas; integer velocities.
SceneSpec random_scene(std::uint64_t seed, int height = 64, int width = 64, int frames = 8);

struct SynthClip {
    VideoClip color;  ///< Y
    VideoClip gray;   ///< X
    /// Pair t: on frame t's grid, pointing into t+1.
    std::vector<FlowField> flow_fwd;
    /// Pair t: on frame t+1's grid, pointing into t.
    std::vector<FlowField> flow_bwd;
    std::vector<OcclusionMask> occ_fwd;
    std::vector<OcclusionMask> occ_bwd;
};

SynthClip generate_clip(const SceneSpec& spec);

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);
/// 80/10/10 by clip index (floor), remainder to test.
Split split_for_index(std::size_t index, std::size_t n_clips);

struct ClipRecord {
    std::string clip_id;
    std::uint64_t seed = 0;
    Split split = Split::Train;
    std::vector<std::string> frames;       ///< color PNGs
    std::vector<std::string> gray_frames;  ///< grayscale PNGs
    std::vector<std::string> flows;        ///< forward .flo per pair
    std::vector<std::string> flows_bwd;
    std::vector<std::string> occlusions;   ///< forward mask PNGs per pair
    std::vector<std::string> occlusions_bwd;

    bool operator==(const ClipRecord&) const = default;
};

struct Manifest {
    std::filesystem::path root;  ///< directory holding manifest.json
    std::uint64_t base_seed = 0;
    int height = 64;
    int width = 64;
    int frames = 8;
    std::vector<ClipRecord> clips;

    std::vector<const ClipRecord*> clips_in(Split s) const;
};

struct DatasetOptions {
    int height = 64;
    int width = 64;
    int frames = 8;
};

Manifest make_dataset(std::size_t n_clips, std::uint64_t base_seed, const std::filesystem::path& out_dir,
                      const DatasetOptions& opts = {});
void save_manifest(const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path_or_dir);

/// Loads one clip's frames, flows and masks from disk.
SynthClip load_clip(const Manifest& m, const ClipRecord& rec);

std::uint64_t clip_seed(std::uint64_t base_seed, std::size_t index);

}  // namespace chromaflow
