#include "chromaflow/evalkit.hpp"
#include "chromaflow/synthdata.hpp"

#include "doctest.h"

#include <cmath>
#include <random>

using namespace chromaflow;

namespace {

Image random_rgb(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(h, w, 3);
    for (float& v : img.data()) v = u(rng);
    return img;
}

VideoClip with_noise(const VideoClip& v, float sigma, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, sigma);
    VideoClip out = v;
    for (auto& f : out.frames) {
        for (float& x : f.data()) x = std::clamp(x + n(rng), 0.0f, 1.0f);
    }
    return out;
}

ClipTruth truth_of(const SynthClip& c) { return {c.color, c.gray, c.flow_fwd, c.occ_fwd}; }

}  // namespace

TEST_CASE("warp error closed forms") {
    VideoClip still;
    for (int i = 0; i < 3; ++i) still.frames.push_back(Image(8, 8, 3, 0.3f));
    const std::vector<FlowField> zero(2, FlowField(8, 8));
    const std::vector<OcclusionMask> all(2, OcclusionMask(8, 8, 1));
    const WarpErrorResult r = warp_error(still, zero, all);
    CHECK(r.value == 0.0);
    CHECK(r.coverage == 1.0);
    CHECK(r.pairs == 2);

    VideoClip step = still;
    step.frames[1] = Image(8, 8, 3, 0.5f);
    CHECK(warp_error(step, zero, all).value == doctest::Approx(0.2));

    const std::vector<OcclusionMask> none(2, OcclusionMask(8, 8, 0));
    const WarpErrorResult empty = warp_error(step, zero, none);
    CHECK(empty.value == 0.0);
    CHECK(empty.coverage == 0.0);
    CHECK(empty.empty_pairs == 2);

    CHECK_THROWS_AS(warp_error(still, std::vector<FlowField>(1, FlowField(8, 8)), all), std::invalid_argument);
    CHECK_THROWS_AS(warp_error(still, std::vector<FlowField>(2, FlowField(4, 4)), all), std::invalid_argument);
    VideoClip single;
    single.frames.push_back(Image(8, 8, 3));
    CHECK(warp_error(single, {}, {}).pairs == 0);
}

TEST_CASE("ground-truth clips have a small warp error that noise increases") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const SynthClip c = generate_clip(random_scene(seed));
        const double own = warp_error(c.color, c.flow_fwd, c.occ_fwd).value;
        CHECK(own < 0.02);
        CHECK(own <= warp_error(with_noise(c.color, 0.1f, seed + 100), c.flow_fwd, c.occ_fwd).value);
    }
}

TEST_CASE("phi distance is a pseudo-metric") {
    const nn::FeatureExtractor phi;
    const Image a = random_rgb(16, 16, 1), b = random_rgb(16, 16, 2), c = random_rgb(16, 16, 3);
    CHECK(phi_distance(a, a, phi) == 0.0);
    const double ab = phi_distance(a, b, phi), ba = phi_distance(b, a, phi);
    CHECK(ab > 0.0);
    CHECK(ab == ba);
    CHECK(phi_distance(a, c, phi) <= ab + phi_distance(b, c, phi) + 1e-12);
    const Image g(16, 16, 1, 0.4f);
    CHECK(phi_distance(g, gray_to_rgb(g), phi) == 0.0);
    CHECK_THROWS_AS(phi_distance(a, Image(8, 8, 3), phi), ImageError);
}

TEST_CASE("evaluating the truth itself") {
    const nn::FeatureExtractor phi;
    const SynthClip c = generate_clip(random_scene(4, 32, 32, 4));
    ClipStreams s;
    s.clip_id = "c";
    s.selected = c.color;
    const EvalReport r = evaluate({s}, {truth_of(c)}, phi);
    REQUIRE(r.clips.size() == 1);
    CHECK(r.psnr_mean == 99.0);
    CHECK(r.phi_distance_mean == 0.0);
    CHECK(r.warp_error_mean == warp_error(c.color, c.flow_fwd, c.occ_fwd).value);
    CHECK_FALSE(r.distinct_frame_fraction.has_value());
    CHECK_FALSE(r.selection_is_saturation_argmax.has_value());
}

TEST_CASE("gray baseline PSNR matches the analytic value") {
    const nn::FeatureExtractor phi;
    const SynthClip c = generate_clip(random_scene(5, 32, 32, 3));
    ClipStreams s;
    s.selected.frames = {};
    for (const auto& g : c.gray.frames) s.selected.frames.push_back(gray_to_rgb(g));
    const EvalReport r = evaluate({s}, {truth_of(c)}, phi);
    double expected = 0.0;
    for (std::size_t t = 0; t < 3; ++t) {
        double acc = 0.0;
        const Image& y = c.color.frames[t];
        for (int py = 0; py < 32; ++py) {
            for (int px = 0; px < 32; ++px) {
                for (int ch = 0; ch < 3; ++ch) {
                    const double d = static_cast<double>(c.gray.frames[t].at(py, px)) - y.at(py, px, ch);
                    acc += d * d;
                }
            }
        }
        expected += 10.0 * std::log10(1.0 / (acc / (32.0 * 32.0 * 3.0)));
    }
    expected /= 3.0;
    CHECK(r.gray_baseline_psnr_mean == doctest::Approx(expected).epsilon(1e-9));
    CHECK(r.psnr_mean == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("candidate statistics and the saturation check") {
    const nn::FeatureExtractor phi;
    const SynthClip c = generate_clip(random_scene(6, 32, 32, 3));
    ClipStreams s;
    s.selected = c.color;
    VideoClip dull = c.color;
    for (auto& f : dull.frames) f = gray_to_rgb(to_grayscale(f));
    VideoClip same = c.color;
    s.candidates = {dull, c.color};
    s.selected_index = 1;
    s.passes = {dull, c.color};
    EvalReport r = evaluate({s}, {truth_of(c)}, phi);
    CHECK(r.selection_is_saturation_argmax == true);
    CHECK(r.distinct_frame_fraction == 1.0);
    REQUIRE(r.pass_warp_error_mean.size() == 2);
    CHECK(r.pass_warp_error_mean[1] == r.warp_error_mean);

    s.selected_index = 0;
    s.candidates = {dull, c.color, same};
    r = evaluate({s}, {truth_of(c)}, phi);
    CHECK(r.selection_is_saturation_argmax == false);
    CHECK(r.distinct_frame_fraction == 0.0);
    CHECK(r.clips[0].candidate_min_pairwise_l1[0] == 0.0);
}

TEST_CASE("aggregates are means of clips and the report round trips") {
    const nn::FeatureExtractor phi;
    std::vector<ClipStreams> streams;
    std::vector<ClipTruth> truth;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const SynthClip c = generate_clip(random_scene(seed + 10, 32, 32, 3));
        ClipStreams s;
        s.clip_id = "clip" + std::to_string(seed);
        s.selected = with_noise(c.color, 0.05f, seed);
        s.candidates = {s.selected, with_noise(c.color, 0.05f, seed + 7)};
        s.passes = {s.candidates[1], s.selected};
        streams.push_back(s);
        truth.push_back(truth_of(c));
    }
    EvalConfig cfg;
    cfg.workers = 2;
    EvalReport r = evaluate(streams, truth, phi, cfg);
    double psnr = 0.0, warp = 0.0;
    for (const auto& c : r.clips) {
        psnr += c.psnr;
        warp += c.warp_error;
    }
    CHECK(r.psnr_mean == doctest::Approx(psnr / 3.0).epsilon(1e-12));
    CHECK(r.warp_error_mean == doctest::Approx(warp / 3.0).epsilon(1e-12));
    CHECK(to_json(r) == to_json(evaluate(streams, truth, phi)));

    r.config_json = R"({"seed":7})";
    r.seed = 7;
    const std::string text = to_json(r);
    const EvalReport back = report_from_json(text);
    CHECK(to_json(back) == text);
    CHECK(back.psnr_mean == r.psnr_mean);
    CHECK(back.clips[2].candidate_min_pairwise_l1 == r.clips[2].candidate_min_pairwise_l1);
    CHECK(text.find("not comparable to LPIPS") != std::string::npos);
    CHECK_THROWS_AS(report_from_json("{}"), IoError);
}

TEST_CASE("evaluate rejects misaligned inputs") {
    const nn::FeatureExtractor phi;
    const SynthClip c = generate_clip(random_scene(1, 32, 32, 3));
    ClipStreams s;
    s.selected = c.color;
    s.selected.frames.pop_back();
    CHECK_THROWS_AS(evaluate({s}, {truth_of(c)}, phi), std::invalid_argument);
    s.selected = c.color;
    CHECK_THROWS_AS(evaluate({s, s}, {truth_of(c)}, phi), std::invalid_argument);
    CHECK(evaluate({}, {}, phi).clips.empty());
}
