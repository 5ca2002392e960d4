#include "chromaflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace chromaflow {

using nn::Tensor;
using nn::Var;

void ConfidenceParams::validate() const {
    if (!(alpha > 0.0f)) throw std::invalid_argument("confidence alpha must be > 0");
}

void DiversityParams::validate() const {
    if (d < 1) throw std::invalid_argument("diversity: d must be >= 1");
    if (betas.size() != static_cast<std::size_t>(d)) throw std::invalid_argument("diversity: need exactly d betas");
    for (std::size_t i = 0; i < betas.size(); ++i) {
        if (!(betas[i] > 0.0f)) throw std::invalid_argument("diversity: betas must be positive");
        if (i > 0 && !(betas[i] < betas[i - 1])) throw std::invalid_argument("diversity: betas must strictly decrease");
    }
}

Image confidence_map(const Image& c_s, const Image& warped_c_t, const OcclusionMask& mask,
                     const ConfidenceParams& params) {
    params.validate();
    if (!c_s.same_shape(warped_c_t) || mask.height() != c_s.height() || mask.width() != c_s.width()) {
        throw ImageError("confidence_map: shape mismatch");
    }
    const int ch = c_s.channels();
    Image w(c_s.height(), c_s.width(), 1);
    auto a = c_s.data();
    auto b = warped_c_t.data();
    auto m = mask.values();
    auto out = w.data();
    for (std::size_t p = 0; p < out.size(); ++p) {
        float diff = 0.0f;
        for (int c = 0; c < ch; ++c) diff += std::fabs(a[p * ch + c] - b[p * ch + c]);
        diff = diff / static_cast<float>(ch) * static_cast<float>(m[p]);
        float v = std::max(1.0f - params.alpha * diff, 0.0f);
        if (params.zero_confidence_at_occlusion && m[p] == 0) v = 0.0f;
        out[p] = v;
    }
    return w;
}

Tensor mask_tensor(const OcclusionMask& mask) {
    Tensor t({1, mask.height(), mask.width()});
    auto v = mask.values();
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i] ? 1.0f : 0.0f;
    return t;
}

Var confidence_map(Var c_s, Var warped_c_t, const Tensor& mask, const ConfidenceParams& params) {
    params.validate();
    nn::Tape& tape = *c_s.tape;
    Var m = tape.constant(mask);
    Var diff = nn::mul(nn::mean_channels(nn::abs(nn::sub(c_s, warped_c_t))), m);
    Var w = nn::relu(nn::add_scalar(nn::mul_scalar(diff, -params.alpha), 1.0f));
    return params.zero_confidence_at_occlusion ? nn::mul(w, m) : w;
}

TemporalTerm temporal_loss_f(Var cand_t, Var cand_t1, const FlowField& flow, const OcclusionMask& mask) {
    const nn::Shape& s = cand_t.shape();
    if (cand_t1.shape() != s || s.size() != 3) throw nn::ShapeError("temporal_loss_f: candidate shapes differ");
    if (flow.height() != s[1] || flow.width() != s[2] || mask.height() != s[1] || mask.width() != s[2]) {
        throw nn::ShapeError("temporal_loss_f: flow/mask size mismatch");
    }
    nn::Tape& tape = *cand_t.tape;
    Var warped = nn::warp(cand_t1, flow);
    // Warp validity: a pixel whose sampling footprint leaves the frame.
    OcclusionMask usable(mask.height(), mask.width(), 0);
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const FlowVector f = flow.at(y, x);
            const bool inside = bilinear_taps(static_cast<float>(y) + f.v, static_cast<float>(x) + f.u,
                                              mask.height(), mask.width()).has_value();
            usable.at(y, x) = (inside && mask.at(y, x)) ? 1 : 0;
        }
    }
    const std::size_t support = usable.count();
    if (support == 0) return {tape.constant(Tensor::scalar(0.0f)), 0};
    Var m = tape.constant(mask_tensor(usable));
    Var masked = nn::mul(nn::abs(nn::sub(cand_t, warped)), m);
    const float norm = 1.0f / (static_cast<float>(support) * static_cast<float>(s[0]));
    return {nn::mul_scalar(nn::sum(masked), norm), support};
}

TemporalValue temporal_loss_f(const Image& cand_t, const Image& warped_t1, const OcclusionMask& mask) {
    if (!cand_t.same_shape(warped_t1) || mask.height() != cand_t.height() || mask.width() != cand_t.width()) {
        throw ImageError("temporal_loss_f: shape mismatch");
    }
    const int ch = cand_t.channels();
    auto a = cand_t.data();
    auto b = warped_t1.data();
    auto m = mask.values();
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < m.size(); ++p) {
        if (!m[p]) continue;
        ++n;
        for (int c = 0; c < ch; ++c) acc += std::fabs(static_cast<double>(a[p * ch + c]) - b[p * ch + c]);
    }
    if (n == 0) return {0.0, 0};
    return {acc / (static_cast<double>(n) * ch), n};
}

Var temporal_loss_g(Var refined, Var truth) {
    if (refined.shape() != truth.shape()) throw nn::ShapeError("temporal_loss_g: shape mismatch");
    return nn::mean(nn::abs(nn::sub(refined, truth)));
}

double temporal_loss_g(const Image& refined, const Image& truth) {
    if (!refined.same_shape(truth)) throw ImageError("temporal_loss_g: shape mismatch");
    auto a = refined.data();
    auto b = truth.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(static_cast<double>(a[i]) - b[i]);
    return acc / static_cast<double>(a.size());
}

namespace {

// beta weight applied to each distance, honoring the pairing mode.
std::vector<float> pair_betas(std::span<const double> distances, const DiversityParams& params) {
    std::vector<float> w(distances.size());
    if (!params.rank_sorted) {
        std::copy(params.betas.begin(), params.betas.end(), w.begin());
        return w;
    }
    std::vector<std::size_t> order(distances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
    for (std::size_t r = 0; r < order.size(); ++r) w[order[r]] = params.betas[r];
    return w;
}

}  // namespace

double diversity_from_distances(std::span<const double> distances, const DiversityParams& params) {
    params.validate();
    if (distances.size() != static_cast<std::size_t>(params.d)) {
        throw std::invalid_argument("diversity: candidate count differs from d");
    }
    const auto betas = pair_betas(distances, params);
    double total = *std::min_element(distances.begin(), distances.end());
    for (std::size_t i = 0; i < distances.size(); ++i) total += static_cast<double>(betas[i]) * distances[i];
    return total;
}

Var diversity_loss(std::span<const Var> candidates, Var truth_features, const nn::FeatureExtractor& phi,
                   const DiversityParams& params, std::vector<double>* distances) {
    params.validate();
    if (candidates.size() != static_cast<std::size_t>(params.d)) {
        throw std::invalid_argument("diversity: candidate count differs from d");
    }
    std::vector<Var> dist;
    std::vector<double> values;
    for (const Var& c : candidates) {
        dist.push_back(nn::mean(nn::abs(nn::sub(phi.forward(c), truth_features))));
        values.push_back(nn::item(dist.back()));
    }
    const auto betas = pair_betas(values, params);
    Var total = nn::minimum(dist);
    for (std::size_t i = 0; i < dist.size(); ++i) total = nn::add(total, nn::mul_scalar(dist[i], betas[i]));
    if (distances) *distances = values;
    return total;
}

double diversity_loss(std::span<const Image> candidates, const Image& truth, const nn::FeatureExtractor& phi,
                      const DiversityParams& params) {
    nn::Tape tape;
    std::vector<Var> cands;
    for (const Image& c : candidates) cands.push_back(tape.constant(nn::image_to_tensor(c)));
    Var yf = tape.constant(phi.features(truth));
    return nn::item(diversity_loss(cands, yf, phi, params));
}

double self_reg_total(double bilateral, double temporal_f, double temporal_g, const SelfRegWeights& w) {
    for (double v : {bilateral, temporal_f, temporal_g, w.bilateral, w.temporal_f, w.temporal_g}) {
        if (!std::isfinite(v)) throw std::domain_error("self_reg_total: non-finite input");
    }
    return w.bilateral * bilateral + w.temporal_f * temporal_f + w.temporal_g * temporal_g;
}

}  // namespace chromaflow
