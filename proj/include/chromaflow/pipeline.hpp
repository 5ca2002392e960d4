#pragma once

// Two-phase training (f alone, then g with f) and inference with iterative
// temporal refinement and saturation-based candidate selection.

#include "chromaflow/bilateral.hpp"
#include "chromaflow/flow.hpp"
#include "chromaflow/losses.hpp"
#include "chromaflow/nets.hpp"
#include "chromaflow/synthdata.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace chromaflow {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LossWeights {
    double bilateral = 1.0;
    double temporal_f = 1.0;
    double temporal_g = 1.0;
    double diversity = 1.0;
};

struct TrainConfig {
    int epochs = 20;
    int images_per_epoch = 100;
    int pairs_per_epoch = 20;
    int joint_epochs = 20;
    int joint_pairs_per_epoch = 20;
    float lr = 3e-4f;
    /// f's learning rate during the joint phase, relative to g's.
    float joint_f_lr_scale = 0.1f;
    LossWeights weights;
    KnnParams knn;
    DiversityParams diversity;
    ConfidenceParams confidence;
    nn::ColorizerConfig model;
    /// Temporal radius for joint-phase pairs.
    int lambda_t = 1;
    bool use_gt_flow = true;
    FlowConfig flow;
    std::uint64_t seed = 7;
    /// Validation pairs scored before and after each joint epoch.
    int validation_pairs = 8;
    /// Checkpoint every n epochs (0 disables).
    int checkpoint_every = 0;

    void validate() const;
};

struct EpochRecord {
    std::string phase;  ///< "f" or "joint"
    int epoch = 0;      ///< 0 is the pre-training measurement in the joint phase
    double bilateral = 0.0;
    double diversity = 0.0;
    double temporal_f = 0.0;
    double temporal_g = 0.0;
    double validation_temporal_g = 0.0;
    double total = 0.0;
    std::size_t steps = 0;
    double wall_seconds = 0.0;
};

std::string to_json_line(const EpochRecord& r);

/// Weights as they stand after an epoch; g is null in phase one.
struct TrainState {
    const nn::NetworkWeights* f = nullptr;
    const nn::NetworkWeights* g = nullptr;
};

/// Per-epoch progress hook; checkpoints hang off it.
using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

/// One training frame with everything the losses need.
struct FrameSample {
    Image gray;
    Image color;
    nn::Tensor hypercolumn;
    nn::Tensor truth_features;
    KnnGraph graph;
};

FrameSample make_sample(const Image& gray, const Image& color, const nn::FeatureExtractor& phi, const KnnParams& knn);

struct StepLosses {
    double bilateral = 0.0;
    double diversity = 0.0;
    double temporal_f = 0.0;
    double total = 0.0;
};

/// Adam-driven optimizer for f on single frames and frame pairs.
class ColorizerTrainer {
public:
    ColorizerTrainer(nn::ColorizerNet& f, const nn::FeatureExtractor& phi, const TrainConfig& cfg);

    /// Bilateral + diversity on one frame.
    StepLosses step_image(const FrameSample& s);
    /// Both frames' image terms plus the temporal term; `flow` lives on a's
    /// grid and points into b, `mask` marks usable pixels of a.
    StepLosses step_pair(const FrameSample& a, const FrameSample& b, const FlowField& flow, const OcclusionMask& mask);
    /// Loss value without an update.
    StepLosses evaluate_image(const FrameSample& s);

private:
    nn::Var image_terms(nn::Tape& tape, const FrameSample& s, std::vector<nn::Var>& cands, StepLosses& out);
    void apply(nn::Tape& tape, nn::Var loss);

    nn::ColorizerNet& f_;
    const nn::FeatureExtractor& phi_;
    TrainConfig cfg_;
    nn::AdamState adam_;
};

/// Phase one: f alone. Deterministic given (manifest, cfg).
nn::NetworkWeights train_colorizer(const Manifest& m, const TrainConfig& cfg, const nn::FeatureExtractor& phi,
                                   std::vector<EpochRecord>* curve = nullptr, const EpochCallback& on_epoch = {},
                                   const nn::NetworkWeights* init = nullptr);

struct JointResult {
    nn::NetworkWeights f;
    nn::NetworkWeights g;
};

/// Everything one refinement step needs for a (reference s, neighbour t) pair.
struct PairContext {
    FlowField flow;     ///< on s's grid, pointing into t
    OcclusionMask mask; ///< usable pixels of s
    Image gray_confidence;
};

PairContext make_pair_context(const Image& gray_s, const Image& gray_t, const FlowField& flow,
                              const OcclusionMask& mask, const ConfidenceParams& params);

/// g applied to one candidate: returns the refined reference frame.
nn::Var refine_candidate(nn::Tape& tape, nn::RefinerNet& g, nn::Var c_s, nn::Var c_t, const PairContext& ctx,
                         const ConfidenceParams& params, bool trainable);

/// Mean over candidates of |g(C_s, C_t) - Y_s| for one pair; no update.
double joint_pair_loss(nn::ColorizerNet& f, nn::RefinerNet& g, const nn::FeatureExtractor& phi, const Image& gray_s,
                       const Image& gray_t, const Image& color_s, const PairContext& ctx, const ConfidenceParams& p);

/// Every ordered (s, t) with 0 < |s - t| <= lambda in a clip of n frames,
/// sorted by s then t.
std::vector<std::pair<int, int>> window_pairs(int frames, int lambda);

/// Phase two: g trained on L_temporal^g with f fine-tuned at a reduced rate.
JointResult train_joint(const Manifest& m, const nn::NetworkWeights& f_weights, const TrainConfig& cfg,
                        const nn::FeatureExtractor& phi, std::vector<EpochRecord>* curve = nullptr,
                        const EpochCallback& on_epoch = {}, const nn::NetworkWeights* g_init = nullptr);

enum class SelectMode { MaxSaturation, Index, All };
std::string to_string(SelectMode m);
SelectMode select_mode_from_string(const std::string& s);

struct InferConfig {
    int lambda_t = 1;
    int passes = 2;
    SelectMode select_mode = SelectMode::MaxSaturation;
    int select_index = 0;
    bool replace_luminance = true;
    /// Snap outputs to the 8-bit grid before selection (for PNG export).
    bool quantize_output = false;
    ConfidenceParams confidence;
    FlowConfig flow;
    int workers = 1;

    void validate() const;
};

struct ColorizeResult {
    /// passes[k][i] is candidate i after k refinement passes.
    std::vector<std::vector<VideoClip>> passes;
    int selected = 0;
    std::vector<double> mean_saturation;

    const std::vector<VideoClip>& final_candidates() const { return passes.back(); }
    const VideoClip& selected_stream() const { return passes.back()[static_cast<std::size_t>(selected)]; }
};

/// Optional externally supplied flows: fwd[t] on t's grid into t+1, bwd[t]
/// on t+1's grid into t.
struct ClipFlows {
    std::vector<FlowField> fwd;
    std::vector<FlowField> bwd;
};

ColorizeResult colorize_video(const VideoClip& gray, nn::ColorizerNet& f, nn::RefinerNet& g,
                              const nn::FeatureExtractor& phi, const InferConfig& cfg,
                              const ClipFlows* flows = nullptr);

/// Index of the stream with the highest mean saturation; ties go low.
int select_by_saturation(const std::vector<VideoClip>& candidates, std::vector<double>* means = nullptr);

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace chromaflow
