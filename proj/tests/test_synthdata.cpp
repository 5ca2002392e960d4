#include "chromaflow/synthdata.hpp"

#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

using namespace chromaflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "chromaflow_test_synth" / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

bool same_pixels(const Image& a, const Image& b) {
    return a.same_shape(b) && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

}  // namespace

TEST_CASE("static scene has identical frames and zero flow") {
    SceneSpec spec;
    spec.seed = 4;
    ShapeSpec s;
    s.x = 20.0f;
    s.y = 25.0f;
    spec.shapes = {s};
    const SynthClip clip = generate_clip(spec);
    REQUIRE(clip.color.size() == 8);
    REQUIRE(clip.flow_fwd.size() == 7);
    for (std::size_t t = 1; t < clip.color.size(); ++t) CHECK(same_pixels(clip.color.frames[t], clip.color.frames[0]));
    for (const auto& f : clip.flow_fwd) {
        for (const auto& v : f.vectors()) CHECK((v.u == 0.0f && v.v == 0.0f));
    }
    for (const auto& m : clip.occ_fwd) CHECK(m.count() == 64u * 64u);
}

TEST_CASE("moving rectangle carries its velocity as flow") {
    SceneSpec spec;
    ShapeSpec s;
    s.size = 16.0f;
    s.x = 15.0f;
    s.y = 30.0f;
    s.vx = 2.0f;
    spec.shapes = {s};
    const SynthClip clip = generate_clip(spec);
    for (std::size_t t = 0; t < clip.flow_fwd.size(); ++t) {
        const int cx = 15 + 2 * static_cast<int>(t);
        for (int dy = -5; dy <= 5; ++dy) {
            for (int dx = -5; dx <= 5; ++dx) {
                const auto v = clip.flow_fwd[t].at(30 + dy, cx + dx);
                CHECK(v.u == 2.0f);
                CHECK(v.v == 0.0f);
                const auto b = clip.flow_bwd[t].at(30 + dy, cx + 2 + dx);
                CHECK(b.u == -2.0f);
            }
        }
    }
}

TEST_CASE("generation is deterministic and X is the luma of Y") {
    const SynthClip a = generate_clip(random_scene(99));
    const SynthClip b = generate_clip(random_scene(99));
    for (std::size_t t = 0; t < a.color.size(); ++t) {
        CHECK(same_pixels(a.color.frames[t], b.color.frames[t]));
        CHECK(same_pixels(a.gray.frames[t], to_grayscale(a.color.frames[t])));
    }
}

TEST_CASE("ground-truth flow warps the next frame onto the current one") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const SynthClip clip = generate_clip(random_scene(seed));
        for (std::size_t t = 0; t + 1 < clip.color.size(); ++t) {
            const WarpResult w = backward_warp(clip.color.frames[t + 1], clip.flow_fwd[t]);
            const Image& ref = clip.color.frames[t];
            double acc = 0.0;
            std::size_t n = 0;
            for (int y = 0; y < ref.height(); ++y) {
                for (int x = 0; x < ref.width(); ++x) {
                    if (!clip.occ_fwd[t].at(y, x)) continue;
                    ++n;
                    for (int c = 0; c < 3; ++c) acc += std::fabs(w.image.at(y, x, c) - ref.at(y, x, c));
                }
            }
            if (n > 0) CHECK(acc / (3.0 * static_cast<double>(n)) < 0.02);
        }
    }
}

TEST_CASE("random scenes validate and draw colors from the palette") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const SceneSpec s = random_scene(seed);
        CHECK_NOTHROW(s.validate());
        CHECK(!s.shapes.empty());
        for (const auto& sh : s.shapes) {
            bool in_palette = false;
            for (const auto& c : palette()) in_palette = in_palette || c == sh.color;
            CHECK(in_palette);
        }
    }
}

TEST_CASE("scene validation rejects bad specs") {
    SceneSpec s;
    ShapeSpec sh;
    sh.x = 2.0f;
    s.shapes = {sh};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);

    sh.x = 50.0f;
    sh.vx = 2.0f;
    s.shapes = {sh};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);  // leaves mid-clip
    s.allow_leaving = true;
    CHECK_NOTHROW(s.validate());

    sh.x = 32.0f;
    sh.vx = 9.0f;
    s.shapes = {sh};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);  // too fast
}

TEST_CASE("split rule is 80/10/10 by clip index") {
    int counts[3] = {0, 0, 0};
    for (std::size_t i = 0; i < 10; ++i) ++counts[static_cast<int>(split_for_index(i, 10))];
    CHECK(counts[0] == 8);
    CHECK(counts[1] == 1);
    CHECK(counts[2] == 1);
    CHECK(split_from_string(to_string(Split::Val)) == Split::Val);
    CHECK_THROWS(split_from_string("holdout"));
}

TEST_CASE("make_dataset writes files, manifest round trips and regeneration is byte-identical") {
    DatasetOptions opts;
    opts.frames = 3;
    const fs::path a = scratch("a"), b = scratch("b");
    const Manifest m = make_dataset(3, 7, a, opts);
    make_dataset(3, 7, b, opts);
    REQUIRE(m.clips.size() == 3);
    CHECK(m.clips_in(Split::Train).size() == 2);

    const Manifest back = load_manifest(a);
    CHECK(back.clips == m.clips);
    CHECK(back.base_seed == 7);

    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        CHECK(slurp(entry.path()) == slurp(b / rel));
    }

    const SynthClip clip = load_clip(back, back.clips[0]);
    CHECK(clip.color.size() == 3);
    CHECK(clip.flow_fwd.size() == 2);
    CHECK(clip.occ_bwd.size() == 2);

    CHECK_THROWS_AS(make_dataset(1, 0, "/proc/nope/data"), IoError);
    CHECK_THROWS_AS(load_manifest(scratch("empty")), IoError);
}
