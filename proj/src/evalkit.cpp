#include "chromaflow/evalkit.hpp"

#include "chromaflow/pipeline.hpp"

#include "json.hpp"

#include <cmath>
#include <stdexcept>

namespace chromaflow {

WarpErrorResult warp_error(const VideoClip& video, const std::vector<FlowField>& flows,
                           const std::vector<OcclusionMask>& masks) {
    const std::size_t n = video.size();
    const std::size_t pairs = n > 0 ? n - 1 : 0;
    if (flows.size() != pairs || masks.size() != pairs) {
        throw std::invalid_argument("warp_error: expected " + std::to_string(pairs) + " flows and masks");
    }
    WarpErrorResult r;
    r.pairs = pairs;
    if (pairs == 0) return r;
    video.validate();
    double total = 0.0;
    for (std::size_t t = 0; t < pairs; ++t) {
        const Image& a = video.frames[t];
        if (!flows[t].same_size(a) || masks[t].height() != a.height() || masks[t].width() != a.width()) {
            throw std::invalid_argument("warp_error: flow or mask size differs from the frames");
        }
        const WarpResult w = backward_warp(video.frames[t + 1], flows[t]);
        const OcclusionMask m = masks[t] & w.validity;
        double acc = 0.0;
        std::size_t count = 0;
        const int c = a.channels();
        for (int y = 0; y < a.height(); ++y) {
            for (int x = 0; x < a.width(); ++x) {
                if (!m.at(y, x)) continue;
                for (int k = 0; k < c; ++k) acc += std::fabs(a.at(y, x, k) - w.image.at(y, x, k));
                ++count;
            }
        }
        if (count == 0) {
            ++r.empty_pairs;
            continue;
        }
        total += acc / static_cast<double>(count * static_cast<std::size_t>(c));
    }
    r.value = total / static_cast<double>(pairs);
    r.coverage = static_cast<double>(pairs - r.empty_pairs) / static_cast<double>(pairs);
    return r;
}

double phi_distance(const Image& a, const Image& b, const nn::FeatureExtractor& phi) {
    if (!a.same_size(b)) throw ImageError("phi_distance: size mismatch");
    const nn::Tensor fa = phi.features(a.channels() == 1 ? gray_to_rgb(a) : a);
    const nn::Tensor fb = phi.features(b.channels() == 1 ? gray_to_rgb(b) : b);
    double acc = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) acc += std::fabs(static_cast<double>(fa[i]) - fb[i]);
    return acc / static_cast<double>(fa.size());
}

namespace {

double mean_l1(const Image& a, const Image& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) acc += std::fabs(a.data()[i] - b.data()[i]);
    return acc / static_cast<double>(a.data().size());
}

void check_aligned(const VideoClip& v, const VideoClip& truth, const std::string& what) {
    if (v.size() != truth.size()) throw std::invalid_argument("evaluate: " + what + " has the wrong frame count");
    for (std::size_t t = 0; t < v.size(); ++t) {
        if (!v.frames[t].same_shape(truth.frames[t])) {
            throw std::invalid_argument("evaluate: " + what + " frame shape differs from the truth");
        }
    }
}

ClipEval evaluate_clip(const ClipStreams& s, const ClipTruth& truth, const nn::FeatureExtractor& phi,
                       const EvalConfig& cfg) {
    check_aligned(s.selected, truth.color, "selected stream");
    if (truth.gray.size() != truth.color.size()) throw std::invalid_argument("evaluate: gray/color length mismatch");
    ClipEval e;
    e.clip_id = s.clip_id;
    e.selected_index = s.selected_index;
    const std::size_t n = truth.color.size();
    double p = 0.0, pg = 0.0, d = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        p += psnr(s.selected.frames[t], truth.color.frames[t]);
        pg += psnr(gray_to_rgb(truth.gray.frames[t]), truth.color.frames[t]);
        d += phi_distance(s.selected.frames[t], truth.color.frames[t], phi);
    }
    e.psnr = p / static_cast<double>(n);
    e.gray_baseline_psnr = pg / static_cast<double>(n);
    e.phi_distance = d / static_cast<double>(n);

    const WarpErrorResult w = warp_error(s.selected, truth.flows, truth.masks);
    e.warp_error = w.value;
    e.warp_coverage = w.coverage;
    for (const auto& pass : s.passes) {
        check_aligned(pass, truth.color, "pass stream");
        e.pass_warp_error.push_back(warp_error(pass, truth.flows, truth.masks).value);
    }

    if (!s.candidates.empty()) {
        for (const auto& c : s.candidates) check_aligned(c, truth.color, "candidate stream");
        std::size_t distinct = 0;
        for (std::size_t t = 0; t < n; ++t) {
            double lo = s.candidates.size() > 1 ? INFINITY : 0.0;
            for (std::size_t i = 0; i < s.candidates.size(); ++i) {
                for (std::size_t j = i + 1; j < s.candidates.size(); ++j) {
                    lo = std::min(lo, mean_l1(s.candidates[i].frames[t], s.candidates[j].frames[t]));
                }
            }
            e.candidate_min_pairwise_l1.push_back(lo);
            if (s.candidates.size() > 1 && lo > cfg.distinct_threshold) ++distinct;
        }
        e.distinct_frame_fraction = static_cast<double>(distinct) / static_cast<double>(n);

        int best = 0;
        for (std::size_t i = 0; i < s.candidates.size(); ++i) {
            double acc = 0.0;
            std::size_t count = 0;
            for (const auto& frame : s.candidates[i].frames) {
                const Image sat = saturation_map(frame);
                for (float v : sat.data()) acc += v;
                count += sat.data().size();
            }
            e.candidate_mean_saturation.push_back(acc / static_cast<double>(count));
            if (e.candidate_mean_saturation[i] > e.candidate_mean_saturation[static_cast<std::size_t>(best)]) {
                best = static_cast<int>(i);
            }
        }
        e.selection_is_saturation_argmax = best == s.selected_index;
    }
    return e;
}

}  // namespace

EvalReport evaluate(const std::vector<ClipStreams>& streams, const std::vector<ClipTruth>& truth,
                    const nn::FeatureExtractor& phi, const EvalConfig& cfg) {
    if (streams.size() != truth.size()) throw std::invalid_argument("evaluate: clip counts differ");
    EvalReport r;
    r.clips.resize(streams.size());
    parallel_for(streams.size(), cfg.workers,
                 [&](std::size_t i) { r.clips[i] = evaluate_clip(streams[i], truth[i], phi, cfg); });
    if (r.clips.empty()) return r;

    const double n = static_cast<double>(r.clips.size());
    std::size_t distinct_frames = 0, frames_with_candidates = 0;
    bool any_selection = false, all_argmax = true;
    std::size_t max_passes = 0;
    for (const auto& c : r.clips) max_passes = std::max(max_passes, c.pass_warp_error.size());
    r.pass_warp_error_mean.assign(max_passes, 0.0);
    std::vector<std::size_t> pass_counts(max_passes, 0);
    for (const auto& c : r.clips) {
        r.psnr_mean += c.psnr / n;
        r.gray_baseline_psnr_mean += c.gray_baseline_psnr / n;
        r.warp_error_mean += c.warp_error / n;
        r.warp_coverage_mean += c.warp_coverage / n;
        r.phi_distance_mean += c.phi_distance / n;
        for (std::size_t k = 0; k < c.pass_warp_error.size(); ++k) {
            r.pass_warp_error_mean[k] += c.pass_warp_error[k];
            ++pass_counts[k];
        }
        if (c.distinct_frame_fraction) {
            const std::size_t frames = c.candidate_min_pairwise_l1.size();
            distinct_frames += static_cast<std::size_t>(std::lround(*c.distinct_frame_fraction * frames));
            frames_with_candidates += frames;
        }
        if (c.selection_is_saturation_argmax) {
            any_selection = true;
            all_argmax = all_argmax && *c.selection_is_saturation_argmax;
        }
    }
    for (std::size_t k = 0; k < max_passes; ++k) r.pass_warp_error_mean[k] /= static_cast<double>(pass_counts[k]);
    if (frames_with_candidates > 0) {
        r.distinct_frame_fraction = static_cast<double>(distinct_frames) / static_cast<double>(frames_with_candidates);
    }
    if (any_selection) r.selection_is_saturation_argmax = all_argmax;
    return r;
}

namespace {

constexpr const char* kPhiNote = "fixed random feature-bank distance; a stand-in, not comparable to LPIPS";

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}

}  // namespace

std::string to_json(const EvalReport& r) {
    nlohmann::json clips = nlohmann::json::array();
    for (const auto& c : r.clips) {
        clips.push_back({{"clip_id", c.clip_id},
                         {"selected_index", c.selected_index},
                         {"psnr", c.psnr},
                         {"gray_baseline_psnr", c.gray_baseline_psnr},
                         {"warp_error", c.warp_error},
                         {"warp_coverage", c.warp_coverage},
                         {"phi_distance", c.phi_distance},
                         {"pass_warp_error", c.pass_warp_error},
                         {"candidate_min_pairwise_l1", c.candidate_min_pairwise_l1},
                         {"distinct_frame_fraction", optional_json(c.distinct_frame_fraction)},
                         {"candidate_mean_saturation", c.candidate_mean_saturation},
                         {"selection_is_saturation_argmax", optional_json(c.selection_is_saturation_argmax)}});
    }
    nlohmann::json config = nlohmann::json::parse(r.config_json.empty() ? "{}" : r.config_json);
    const nlohmann::json j{{"aggregate",
                            {{"psnr_mean", r.psnr_mean},
                             {"gray_baseline_psnr_mean", r.gray_baseline_psnr_mean},
                             {"warp_error_mean", r.warp_error_mean},
                             {"warp_coverage_mean", r.warp_coverage_mean},
                             {"phi_distance_mean", r.phi_distance_mean},
                             {"pass_warp_error_mean", r.pass_warp_error_mean},
                             {"distinct_frame_fraction", optional_json(r.distinct_frame_fraction)},
                             {"selection_is_saturation_argmax", optional_json(r.selection_is_saturation_argmax)},
                             {"clip_count", r.clips.size()}}},
                           {"phi_distance_note", kPhiNote},
                           {"clips", clips},
                           {"config", config},
                           {"seed", r.seed}};
    return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
    EvalReport r;
    try {
        const auto j = nlohmann::json::parse(text);
        const auto& a = j.at("aggregate");
        r.psnr_mean = a.at("psnr_mean").get<double>();
        r.gray_baseline_psnr_mean = a.at("gray_baseline_psnr_mean").get<double>();
        r.warp_error_mean = a.at("warp_error_mean").get<double>();
        r.warp_coverage_mean = a.at("warp_coverage_mean").get<double>();
        r.phi_distance_mean = a.at("phi_distance_mean").get<double>();
        r.pass_warp_error_mean = a.at("pass_warp_error_mean").get<std::vector<double>>();
        r.distinct_frame_fraction = optional_from<double>(a, "distinct_frame_fraction");
        r.selection_is_saturation_argmax = optional_from<bool>(a, "selection_is_saturation_argmax");
        for (const auto& c : j.at("clips")) {
            ClipEval e;
            e.clip_id = c.at("clip_id").get<std::string>();
            e.selected_index = c.at("selected_index").get<int>();
            e.psnr = c.at("psnr").get<double>();
            e.gray_baseline_psnr = c.at("gray_baseline_psnr").get<double>();
            e.warp_error = c.at("warp_error").get<double>();
            e.warp_coverage = c.at("warp_coverage").get<double>();
            e.phi_distance = c.at("phi_distance").get<double>();
            e.pass_warp_error = c.at("pass_warp_error").get<std::vector<double>>();
            e.candidate_min_pairwise_l1 = c.at("candidate_min_pairwise_l1").get<std::vector<double>>();
            e.distinct_frame_fraction = optional_from<double>(c, "distinct_frame_fraction");
            e.candidate_mean_saturation = c.at("candidate_mean_saturation").get<std::vector<double>>();
            e.selection_is_saturation_argmax = optional_from<bool>(c, "selection_is_saturation_argmax");
            r.clips.push_back(std::move(e));
        }
        r.config_json = j.at("config").dump();
        r.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed evaluation report: ") + e.what());
    }
    return r;
}

}  // namespace chromaflow
