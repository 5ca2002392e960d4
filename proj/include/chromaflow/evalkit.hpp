#pragma once

// Quantitative evaluation: PSNR, flow-warp temporal error, and a feature-bank
// distance standing in for a learned perceptual metric.

#include "chromaflow/flow.hpp"
#include "chromaflow/image.hpp"
#include "chromaflow/nets.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chromaflow {

struct WarpErrorResult {
    double value = 0.0;      ///< mean over pairs; empty-mask pairs contribute 0
    double coverage = 0.0;   ///< fraction of pairs with a non-empty mask
    std::size_t pairs = 0;
    std::size_t empty_pairs = 0;
};

/// Mean over consecutive pairs of the masked mean |O^t - warp(O^{t+1})|.
/// flows[t] and masks[t] live on frame t's grid and point into t+1.
WarpErrorResult warp_error(const VideoClip& video, const std::vector<FlowField>& flows,
                           const std::vector<OcclusionMask>& masks);

/// Mean absolute difference of the feature bank's hypercolumns. Gray inputs
/// are replicated to three channels.
double phi_distance(const Image& a, const Image& b, const nn::FeatureExtractor& phi);

/// One clip's outputs as written by colorize.
struct ClipStreams {
    std::string clip_id;
    VideoClip selected;
    int selected_index = 0;
    /// Selected candidate after 0, 1, ... refinement passes (may be empty).
    std::vector<VideoClip> passes;
    /// All final candidates (may be empty).
    std::vector<VideoClip> candidates;
};

struct ClipTruth {
    VideoClip color;
    VideoClip gray;
    std::vector<FlowField> flows;
    std::vector<OcclusionMask> masks;
};

struct ClipEval {
    std::string clip_id;
    int selected_index = 0;
    double psnr = 0.0;
    double gray_baseline_psnr = 0.0;
    double warp_error = 0.0;
    double warp_coverage = 0.0;
    double phi_distance = 0.0;
    std::vector<double> pass_warp_error;
    /// Mean pairwise L1 between candidates, per frame (empty without candidates).
    std::vector<double> candidate_min_pairwise_l1;
    /// Fraction of frames whose candidates all differ pairwise by more than the threshold.
    std::optional<double> distinct_frame_fraction;
    std::vector<double> candidate_mean_saturation;
    std::optional<bool> selection_is_saturation_argmax;
};

struct EvalConfig {
    double distinct_threshold = 1e-3;
    int workers = 1;
};

struct EvalReport {
    std::vector<ClipEval> clips;
    double psnr_mean = 0.0;
    double gray_baseline_psnr_mean = 0.0;
    double warp_error_mean = 0.0;
    double warp_coverage_mean = 0.0;
    double phi_distance_mean = 0.0;
    std::vector<double> pass_warp_error_mean;
    std::optional<double> distinct_frame_fraction;  ///< over all frames of all clips
    std::optional<bool> selection_is_saturation_argmax;  ///< true when every clip agrees
    std::string config_json = "{}";
    std::uint64_t seed = 0;
};

/// Scores each clip's selected stream against its truth. Throws on
/// misaligned clip counts or lengths.
EvalReport evaluate(const std::vector<ClipStreams>& streams, const std::vector<ClipTruth>& truth,
                    const nn::FeatureExtractor& phi, const EvalConfig& cfg = {});

std::string to_json(const EvalReport& r);
EvalReport report_from_json(const std::string& text);

}  // namespace chromaflow
