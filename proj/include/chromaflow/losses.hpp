#pragma once

// Temporal, confidence, refinement, diversity and combined self-regularization
// losses. Every term is normalized to a mean so that weights do not depend on
// resolution.

#include "chromaflow/flow.hpp"
#include "chromaflow/image.hpp"
#include "chromaflow/nets.hpp"
#include "chromaflow/ops.hpp"

#include <array>
#include <span>
#include <vector>

namespace chromaflow {

struct ConfidenceParams {
    float alpha = 15.0f;
    /// When false, occluded pixels get W = 1 exactly as the raw formula gives.
    bool zero_confidence_at_occlusion = true;

    void validate() const;
};

struct DiversityParams {
    int d = 4;
    std::vector<float> betas{0.30f, 0.15f, 0.075f, 0.0375f};
    /// Pair betas with distances sorted ascending instead of head order.
    bool rank_sorted = false;

    void validate() const;
};

/// Per-pixel weight in [0,1]: max(1 - alpha * mean_c|c_s - warped_c_t| * M, 0).
Image confidence_map(const Image& c_s, const Image& warped_c_t, const OcclusionMask& mask,
                     const ConfidenceParams& params);
/// Differentiable variant; `mask` is a (1,H,W) tensor of 0/1.
nn::Var confidence_map(nn::Var c_s, nn::Var warped_c_t, const nn::Tensor& mask, const ConfidenceParams& params);

nn::Tensor mask_tensor(const OcclusionMask& mask);

struct TemporalTerm {
    nn::Var loss;
    std::size_t support = 0;  ///< usable pixels
    bool empty() const { return support == 0; }
};

/// Masked mean of |cand_t - warp(cand_t1)| where the mask combines `mask`
/// with the warp's own validity. `flow` lives on frame t and points into t+1.
TemporalTerm temporal_loss_f(nn::Var cand_t, nn::Var cand_t1, const FlowField& flow, const OcclusionMask& mask);

struct TemporalValue {
    double loss = 0.0;
    std::size_t support = 0;
};
/// Same quantity on images, where `warped_t1` is already on frame t's grid.
TemporalValue temporal_loss_f(const Image& cand_t, const Image& warped_t1, const OcclusionMask& mask);

/// Mean |refined - truth| over pixels and channels.
nn::Var temporal_loss_g(nn::Var refined, nn::Var truth);
double temporal_loss_g(const Image& refined, const Image& truth);

/// min_i D_i + sum_i beta_i D_i from already computed distances.
double diversity_from_distances(std::span<const double> distances, const DiversityParams& params);

/// D_i = mean |phi(C_i) - phi(Y)| over hypercolumn entries.
nn::Var diversity_loss(std::span<const nn::Var> candidates, nn::Var truth_features,
                       const nn::FeatureExtractor& phi, const DiversityParams& params,
                       std::vector<double>* distances = nullptr);
double diversity_loss(std::span<const Image> candidates, const Image& truth, const nn::FeatureExtractor& phi,
                      const DiversityParams& params);

struct SelfRegWeights {
    double bilateral = 1.0;
    double temporal_f = 1.0;
    double temporal_g = 1.0;
};

double self_reg_total(double bilateral, double temporal_f, double temporal_g, const SelfRegWeights& w = {});

}  // namespace chromaflow
