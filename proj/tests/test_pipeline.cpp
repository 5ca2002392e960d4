#include "chromaflow/pipeline.hpp"

#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>

using namespace chromaflow;
namespace fs = std::filesystem;

namespace {

const Manifest& tiny_dataset() {
    static const Manifest m = [] {
        const fs::path dir = fs::temp_directory_path() / "chromaflow_test_pipeline" / "data";
        fs::remove_all(dir);
        DatasetOptions o;
        o.height = 32;
        o.width = 32;
        o.frames = 3;
        return make_dataset(10, 21, dir, o);
    }();
    return m;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.epochs = 1;
    c.images_per_epoch = 3;
    c.pairs_per_epoch = 2;
    c.joint_epochs = 1;
    c.joint_pairs_per_epoch = 2;
    c.validation_pairs = 2;
    c.knn.sample_size = 128;
    return c;
}

bool same_weights(const nn::NetworkWeights& a, const nn::NetworkWeights& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (const auto& [name, t] : a.entries) {
        const auto it = b.entries.find(name);
        if (it == b.entries.end() || it->second.shape() != t.shape()) return false;
        if (std::memcmp(t.data().data(), it->second.data().data(), t.data().size_bytes()) != 0) return false;
    }
    return true;
}

bool same_pixels(const Image& a, const Image& b) {
    return a.same_shape(b) && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

VideoClip solid_clip(const Rgb& c, int frames = 2) {
    VideoClip v;
    for (int i = 0; i < frames; ++i) {
        Image img(4, 4, 3);
        for (int p = 0; p < 16; ++p) {
            for (int ch = 0; ch < 3; ++ch) img.data()[static_cast<std::size_t>(p * 3 + ch)] = c[static_cast<std::size_t>(ch)];
        }
        v.frames.push_back(img);
    }
    return v;
}

VideoClip gray_clip(int frames, int size, std::uint64_t seed) {
    const SynthClip c = generate_clip(random_scene(seed, size, size, frames));
    return c.gray;
}

}  // namespace

TEST_CASE("zero epochs return the initial weights") {
    const nn::FeatureExtractor phi;
    TrainConfig c = tiny_config();
    c.epochs = 0;
    const nn::ColorizerNet init(c.model, 99);
    const auto w = train_colorizer(tiny_dataset(), c, phi, nullptr, {}, &init.weights());
    CHECK(same_weights(w, init.weights()));
    CHECK(same_weights(train_colorizer(tiny_dataset(), c, phi), train_colorizer(tiny_dataset(), c, phi)));
}

TEST_CASE("overfitting one frame halves the image loss") {
    const nn::FeatureExtractor phi;
    const SynthClip clip = generate_clip(random_scene(5, 32, 32, 1));
    TrainConfig cfg;
    cfg.knn.sample_size = 256;
    nn::ColorizerNet f(cfg.model, 3);
    ColorizerTrainer trainer(f, phi, cfg);
    const FrameSample s = make_sample(clip.gray.frames[0], clip.color.frames[0], phi, cfg.knn);
    const double first = trainer.step_image(s).total;
    for (int i = 1; i < 200; ++i) trainer.step_image(s);
    const double last = trainer.evaluate_image(s).total;
    MESSAGE("image loss " << first << " -> " << last);
    CHECK(last <= 0.5 * first);
}

TEST_CASE("training is bit-deterministic") {
    const nn::FeatureExtractor phi;
    const TrainConfig c = tiny_config();
    std::vector<EpochRecord> ca, cb;
    const auto fa = train_colorizer(tiny_dataset(), c, phi, &ca);
    const auto fb = train_colorizer(tiny_dataset(), c, phi, &cb);
    CHECK(same_weights(fa, fb));
    REQUIRE(ca.size() == 1);
    CHECK(ca[0].total == cb[0].total);
    CHECK(ca[0].steps == 5);
    CHECK(std::isfinite(ca[0].temporal_f));

    const JointResult ja = train_joint(tiny_dataset(), fa, c, phi);
    const JointResult jb = train_joint(tiny_dataset(), fa, c, phi);
    CHECK(same_weights(ja.f, jb.f));
    CHECK(same_weights(ja.g, jb.g));
    CHECK_FALSE(same_weights(ja.f, fa));
}

TEST_CASE("epoch callback sees every epoch and the current weights") {
    const nn::FeatureExtractor phi;
    TrainConfig c = tiny_config();
    c.epochs = 2;
    c.joint_epochs = 2;
    std::vector<std::string> seen;
    const auto f = train_colorizer(tiny_dataset(), c, phi, nullptr, [&](const EpochRecord& r, const TrainState& s) {
        CHECK(s.f != nullptr);
        CHECK(s.g == nullptr);
        seen.push_back(r.phase + std::to_string(r.epoch));
    });
    std::vector<EpochRecord> curve;
    train_joint(tiny_dataset(), f, c, phi, &curve, [&](const EpochRecord& r, const TrainState& s) {
        CHECK(s.g != nullptr);
        seen.push_back(r.phase + std::to_string(r.epoch));
    });
    CHECK(seen == std::vector<std::string>{"f1", "f2", "joint0", "joint1", "joint2"});
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].steps == 0);
    CHECK(curve[0].validation_temporal_g > 0.0);
    CHECK(to_json_line(curve[1]).find("\"phase\":\"joint\"") != std::string::npos);
}

TEST_CASE("a zeroed refiner head starts at the candidates' own error") {
    const nn::FeatureExtractor phi;
    const SynthClip clip = generate_clip(random_scene(8, 32, 32, 2));
    nn::ColorizerNet f(nn::ColorizerConfig{}, 4);
    nn::RefinerNet g;
    const ConfidenceParams p;
    const PairContext ctx = make_pair_context(clip.gray.frames[0], clip.gray.frames[1], clip.flow_fwd[0],
                                              clip.occ_fwd[0], p);
    const double loss =
        joint_pair_loss(f, g, phi, clip.gray.frames[0], clip.gray.frames[1], clip.color.frames[0], ctx, p);
    double expected = 0.0;
    for (const Image& c : f.colorize(clip.gray.frames[0], phi)) expected += temporal_loss_g(c, clip.color.frames[0]);
    expected /= 4.0;
    CHECK(loss == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("window pairs follow the temporal radius") {
    const auto one = window_pairs(4, 1);
    CHECK(one == std::vector<std::pair<int, int>>{{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}});
    for (int n : {1, 2, 5, 8}) {
        for (int lambda : {0, 1, 2, 3}) {
            const auto pairs = window_pairs(n, lambda);
            std::set<std::pair<int, int>> uniq(pairs.begin(), pairs.end());
            CHECK(uniq.size() == pairs.size());
            std::size_t expected = 0;
            for (int s = 0; s < n; ++s) {
                for (int t = 0; t < n; ++t) expected += (s != t && std::abs(s - t) <= lambda);
            }
            CHECK(pairs.size() == expected);
            for (const auto& [s, t] : pairs) CHECK((s != t && std::abs(s - t) <= lambda));
        }
    }
    CHECK(window_pairs(1, 1).empty());
}

TEST_CASE("training rejects unusable inputs") {
    const nn::FeatureExtractor phi;
    TrainConfig bad = tiny_config();
    bad.lambda_t = 0;
    CHECK_THROWS_AS(train_colorizer(tiny_dataset(), bad, phi), std::invalid_argument);
    bad = tiny_config();
    bad.images_per_epoch = 0;
    bad.pairs_per_epoch = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tiny_config();
    bad.weights.diversity = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    Manifest empty = tiny_dataset();
    empty.clips.erase(std::remove_if(empty.clips.begin(), empty.clips.end(),
                                     [](const ClipRecord& r) { return r.split == Split::Train; }),
                      empty.clips.end());
    CHECK_THROWS_AS(train_colorizer(empty, tiny_config(), phi), std::invalid_argument);

    const fs::path dir = fs::temp_directory_path() / "chromaflow_test_pipeline" / "single";
    fs::remove_all(dir);
    DatasetOptions o;
    o.height = 32;
    o.width = 32;
    o.frames = 1;
    const Manifest single = make_dataset(10, 3, dir, o);
    const nn::ColorizerNet f;
    CHECK_THROWS_AS(train_joint(single, f.weights(), tiny_config(), phi), std::invalid_argument);
}

TEST_CASE("saturation selection") {
    CHECK(select_by_saturation({solid_clip({0.5f, 0.5f, 0.5f}), solid_clip({1.0f, 0.0f, 0.0f})}) == 1);
    CHECK(select_by_saturation({solid_clip({0.2f, 0.6f, 0.3f}), solid_clip({0.2f, 0.6f, 0.3f})}) == 0);
    std::vector<double> means;
    const int best = select_by_saturation(
        {solid_clip({1.0f, 0.8f, 0.8f}), solid_clip({1.0f, 0.5f, 0.5f}), solid_clip({1.0f, 0.7f, 0.7f})}, &means);
    CHECK(best == 1);
    REQUIRE(means.size() == 3);
    CHECK(means[0] == doctest::Approx(0.2));
    CHECK(means[1] == doctest::Approx(0.5));
    CHECK(means[2] == doctest::Approx(0.3));
    CHECK_THROWS_AS(select_by_saturation({}), std::invalid_argument);
}

TEST_CASE("saturation selection is the argmax and survives uniform scaling") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<float> u(0.05f, 0.9f);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> sats(4);
        for (float& s : sats) s = u(rng);
        const float scale = std::uniform_real_distribution<float>(0.2f, 1.0f)(rng);
        std::vector<VideoClip> a, b;
        for (float s : sats) {
            a.push_back(solid_clip({1.0f, 1.0f - s, 1.0f - s}));
            b.push_back(solid_clip({1.0f, 1.0f - s * scale, 1.0f - s * scale}));
        }
        std::vector<double> means;
        const int idx = select_by_saturation(a, &means);
        CHECK(idx == static_cast<int>(std::max_element(means.begin(), means.end()) - means.begin()));
        CHECK(select_by_saturation(b) == idx);
    }
}

TEST_CASE("a single frame is never refined") {
    const nn::FeatureExtractor phi;
    nn::ColorizerNet f(nn::ColorizerConfig{}, 5);
    nn::RefinerNet g(32, 6);
    // A refiner with a live head would change frames if it were ever applied.
    for (auto& [name, t] : g.weights().entries) {
        for (float& v : t.data()) v += 0.05f;
    }
    const VideoClip gray = gray_clip(1, 32, 9);
    InferConfig cfg;
    cfg.passes = 2;
    const ColorizeResult two = colorize_video(gray, f, g, phi, cfg);
    cfg.passes = 0;
    const ColorizeResult zero = colorize_video(gray, f, g, phi, cfg);
    REQUIRE(two.passes.size() == 3);
    REQUIRE(zero.passes.size() == 1);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(same_pixels(two.final_candidates()[i].frames[0], zero.final_candidates()[i].frames[0]));
    }
    CHECK(two.selected == zero.selected);
}

TEST_CASE("zero passes return the post-processed raw candidates") {
    const nn::FeatureExtractor phi;
    nn::ColorizerNet f(nn::ColorizerConfig{}, 5);
    nn::RefinerNet g(32, 6);
    for (auto& [name, t] : g.weights().entries) {
        for (float& v : t.data()) v += 0.05f;
    }
    const VideoClip gray = gray_clip(3, 32, 10);
    InferConfig cfg;
    cfg.passes = 0;
    cfg.replace_luminance = false;
    const ColorizeResult r = colorize_video(gray, f, g, phi, cfg);
    for (std::size_t t = 0; t < 3; ++t) {
        const auto raw = f.colorize(gray.frames[t], phi);
        for (std::size_t i = 0; i < 4; ++i) CHECK(same_pixels(r.final_candidates()[i].frames[t], raw[i]));
    }
    cfg.passes = 1;
    const ColorizeResult refined = colorize_video(gray, f, g, phi, cfg);
    CHECK_FALSE(same_pixels(refined.final_candidates()[0].frames[1], r.final_candidates()[0].frames[1]));
    CHECK(same_pixels(refined.passes[0][0].frames[1], r.final_candidates()[0].frames[1]));
}

TEST_CASE("colorized streams are bounded and keep the input luma") {
    const nn::FeatureExtractor phi;
    nn::ColorizerNet f(nn::ColorizerConfig{}, 7);
    nn::RefinerNet g(32, 8);
    for (auto& [name, t] : g.weights().entries) {
        for (float& v : t.data()) v += 0.05f;
    }
    const VideoClip gray = gray_clip(4, 32, 11);
    for (bool quantize : {false, true}) {
        InferConfig cfg;
        cfg.quantize_output = quantize;
        const ColorizeResult r = colorize_video(gray, f, g, phi, cfg);
        for (const auto& pass : r.passes) {
            for (const auto& clip : pass) {
                for (std::size_t t = 0; t < gray.size(); ++t) {
                    const Image luma = to_grayscale(clip.frames[t]);
                    for (float v : clip.frames[t].data()) CHECK((v >= 0.0f && v <= 1.0f));
                    const float tol = quantize ? 2.5e-3f : 1e-3f;
                    for (std::size_t p = 0; p < luma.data().size(); ++p) {
                        CHECK(std::fabs(luma.data()[p] - gray.frames[t].data()[p]) <= tol);
                    }
                }
            }
        }
        std::vector<double> means;
        CHECK(r.selected == select_by_saturation(r.final_candidates(), &means));
        CHECK(means == r.mean_saturation);
    }
}

TEST_CASE("inference is independent of the worker count") {
    const nn::FeatureExtractor phi;
    nn::ColorizerNet f(nn::ColorizerConfig{}, 12);
    nn::RefinerNet g(32, 13);
    for (auto& [name, t] : g.weights().entries) {
        for (float& v : t.data()) v += 0.02f;
    }
    const VideoClip gray = gray_clip(4, 32, 14);
    InferConfig one, three;
    one.lambda_t = three.lambda_t = 2;
    three.workers = 3;
    const ColorizeResult a = colorize_video(gray, f, g, phi, one);
    const ColorizeResult b = colorize_video(gray, f, g, phi, three);
    for (std::size_t k = 0; k < a.passes.size(); ++k) {
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t t = 0; t < 4; ++t) CHECK(same_pixels(a.passes[k][i].frames[t], b.passes[k][i].frames[t]));
        }
    }
}

TEST_CASE("supplied flows replace estimation for adjacent pairs") {
    const nn::FeatureExtractor phi;
    nn::ColorizerNet f(nn::ColorizerConfig{}, 15);
    nn::RefinerNet g(32, 16);
    const SynthClip clip = generate_clip(random_scene(17, 32, 32, 3));
    ClipFlows flows{clip.flow_fwd, clip.flow_bwd};
    const ColorizeResult r = colorize_video(clip.gray, f, g, phi, InferConfig{}, &flows);
    CHECK(r.passes.size() == 3);
    flows.fwd.pop_back();
    CHECK_THROWS_AS(colorize_video(clip.gray, f, g, phi, InferConfig{}, &flows), FlowError);
    InferConfig bad;
    bad.passes = -1;
    CHECK_THROWS_AS(colorize_video(clip.gray, f, g, phi, bad), std::invalid_argument);
    CHECK_THROWS(colorize_video(clip.color, f, g, phi, InferConfig{}));
}

TEST_CASE("parallel_for covers every index and rethrows") {
    for (int workers : {1, 2, 4}) {
        std::vector<int> hits(37, 0);
        parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i] += 1; });
        CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
        CHECK_THROWS_AS(parallel_for(5, workers,
                                     [](std::size_t i) {
                                         if (i == 3) throw std::runtime_error("boom");
                                     }),
                        std::runtime_error);
    }
}

TEST_CASE("select mode names round trip") {
    for (SelectMode m : {SelectMode::MaxSaturation, SelectMode::Index, SelectMode::All}) {
        CHECK(select_mode_from_string(to_string(m)) == m);
    }
    CHECK_THROWS_AS(select_mode_from_string("best"), std::invalid_argument);
}
