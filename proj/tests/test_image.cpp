#include "chromaflow/image.hpp"

#include "doctest.h"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace chromaflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "chromaflow_test_image";
    fs::create_directories(dir);
    return dir / name;
}

// Writes raw 8-bit PNG bytes with an arbitrary color type.
void write_raw_png(const fs::path& path, int w, int h, int color_type, int bytes_per_px,
                   const std::vector<unsigned char>& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        png_write_row(png, const_cast<unsigned char*>(bytes.data()) + static_cast<std::size_t>(y) * w * bytes_per_px);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

Image random_image(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(h, w, c);
    for (float& v : img.data()) v = u(rng);
    return img;
}

}  // namespace

TEST_CASE("load_png maps bytes to unit range") {
    const auto p = scratch("gray255.png");
    write_raw_png(p, 1, 1, PNG_COLOR_TYPE_GRAY, 1, {255});
    CHECK(load_png(p).at(0, 0) == 1.0f);

    write_raw_png(p, 1, 1, PNG_COLOR_TYPE_GRAY, 1, {0});
    CHECK(load_png(p).at(0, 0) == 0.0f);

    const auto q = scratch("rgb.png");
    write_raw_png(q, 1, 1, PNG_COLOR_TYPE_RGB, 3, {51, 102, 204});
    const Image img = load_png(q);
    REQUIRE(img.channels() == 3);
    CHECK(std::fabs(img.at(0, 0, 0) - 0.2f) <= 1.0f / 510.0f);
    CHECK(std::fabs(img.at(0, 0, 1) - 0.4f) <= 1.0f / 510.0f);
    CHECK(std::fabs(img.at(0, 0, 2) - 0.8f) <= 1.0f / 510.0f);
}

TEST_CASE("load_png rejects alpha, missing files and non-PNG data") {
    const auto p = scratch("rgba.png");
    write_raw_png(p, 1, 1, PNG_COLOR_TYPE_RGBA, 4, {1, 2, 3, 4});
    CHECK_THROWS_AS(load_png(p), ImageError);
    CHECK_THROWS_AS(load_png(scratch("does_not_exist.png")), IoError);

    const auto junk = scratch("junk.png");
    std::FILE* f = std::fopen(junk.c_str(), "wb");
    std::fputs("definitely not a png", f);
    std::fclose(f);
    CHECK_THROWS_AS(load_png(junk), IoError);
}

TEST_CASE("save_png round trip stays within half a quantization step") {
    for (int c : {1, 3}) {
        const Image img = random_image(7, 5, c, 11 + c);
        const auto p = scratch("roundtrip.png");
        save_png(img, p);
        const Image back = load_png(p);
        REQUIRE(back.same_shape(img));
        for (std::size_t i = 0; i < img.data().size(); ++i) {
            CHECK(std::fabs(back.data()[i] - img.data()[i]) <= 1.0f / 510.0f + 1e-7f);
        }
    }
}

TEST_CASE("save_png of constant 0.5 stores 127 or 128") {
    const auto p = scratch("half.png");
    save_png(Image(2, 2, 1, 0.5f), p);
    const Image back = load_png(p);
    for (float v : back.data()) {
        const int byte = static_cast<int>(std::lround(v * 255.0f));
        CHECK((byte == 127 || byte == 128));
    }
}

TEST_CASE("save_png rejects empty images and unwritable paths") {
    CHECK_THROWS(save_png(Image(), scratch("empty.png")));
    CHECK_THROWS_AS(Image(1, 0, 1), ImageError);
    CHECK_THROWS_AS(save_png(Image(1, 1, 1), "/nonexistent_dir/x.png"), IoError);
}

TEST_CASE("to_grayscale uses Rec.601 luma") {
    Image px(1, 3, 3);
    const float colors[3][3] = {{1, 1, 1}, {0, 0, 0}, {1, 0, 0}};
    for (int x = 0; x < 3; ++x) {
        for (int c = 0; c < 3; ++c) px.at(0, x, c) = colors[x][c];
    }
    const Image g = to_grayscale(px);
    CHECK(g.at(0, 0) == doctest::Approx(1.0));
    CHECK(g.at(0, 1) == 0.0f);
    CHECK(g.at(0, 2) == doctest::Approx(0.299));
    CHECK_THROWS_AS(to_grayscale(Image(1, 1, 1)), ImageError);
}

TEST_CASE("saturation_map follows HSV S") {
    Image px(1, 3, 3);
    const float colors[3][3] = {{0.4f, 0.4f, 0.4f}, {1, 0, 0}, {0.5f, 0.25f, 0.25f}};
    for (int x = 0; x < 3; ++x) {
        for (int c = 0; c < 3; ++c) px.at(0, x, c) = colors[x][c];
    }
    const Image s = saturation_map(px);
    CHECK(s.at(0, 0) == 0.0f);
    CHECK(s.at(0, 1) == 1.0f);
    CHECK(s.at(0, 2) == doctest::Approx(0.5));
    CHECK(saturation_map(Image(2, 2, 3, 0.0f)).at(1, 1) == 0.0f);
    CHECK_THROWS_AS(saturation_map(Image(1, 1, 1)), ImageError);

    // A replicated gray image has zero saturation everywhere.
    const Image gray = to_grayscale(random_image(6, 6, 3, 3));
    const Image s2 = saturation_map(gray_to_rgb(gray));
    for (float v : s2.data()) CHECK(v == 0.0f);
}

TEST_CASE("psnr values, cap and symmetry") {
    const Image a = random_image(4, 4, 3, 1);
    CHECK(psnr(a, a) == 99.0);

    Image zero(10, 10, 1, 0.0f), tenth(10, 10, 1, 0.1f), one(10, 10, 1, 1.0f);
    CHECK(psnr(zero, tenth) == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(psnr(zero, one) == doctest::Approx(0.0));

    const Image b = random_image(4, 4, 3, 2);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK_THROWS_AS(psnr(a, Image(4, 4, 1)), ImageError);
}

TEST_CASE("replace_luminance matches target luma and keeps fixed points") {
    Image red(1, 1, 3);
    red.at(0, 0, 0) = 1.0f;
    const Image out = replace_luminance(red, Image(1, 1, 1, 0.299f));
    CHECK(out.at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(out.at(0, 0, 1) == doctest::Approx(0.0).epsilon(1e-3));
    CHECK(out.at(0, 0, 2) == doctest::Approx(0.0).epsilon(1e-3));

    const Image flat = replace_luminance(Image(2, 2, 3, 0.3f), Image(2, 2, 1, 0.7f));
    for (float v : flat.data()) CHECK(v == doctest::Approx(0.7));

    const Image c = random_image(8, 8, 3, 5);
    const Image same = replace_luminance(c, to_grayscale(c));
    for (std::size_t i = 0; i < c.data().size(); ++i) CHECK(std::fabs(same.data()[i] - c.data()[i]) <= 1e-6f);

    CHECK_THROWS_AS(replace_luminance(c, Image(4, 4, 1)), ImageError);
}

TEST_CASE("replace_luminance property: luma matches gray and range holds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Image c = random_image(5, 5, 3, 100 + seed);
        const Image g = random_image(5, 5, 1, 200 + seed);
        const Image out = replace_luminance(c, g);
        const Image luma = to_grayscale(out);
        for (std::size_t i = 0; i < g.data().size(); ++i) CHECK(std::fabs(luma.data()[i] - g.data()[i]) <= 1e-3f);
        for (float v : out.data()) CHECK((v >= 0.0f && v <= 1.0f));
    }
}

TEST_CASE("video directories round trip in frame order") {
    VideoClip clip;
    for (int i = 0; i < 3; ++i) clip.frames.push_back(Image(4, 4, 3, static_cast<float>(i) / 4.0f));
    const auto dir = scratch("video");
    fs::remove_all(dir);
    save_video_dir(clip, dir);
    CHECK(fs::exists(dir / "000002.png"));
    const VideoClip back = load_video_dir(dir);
    REQUIRE(back.size() == 3);
    CHECK(back.frames[2].at(0, 0, 0) == doctest::Approx(0.5).epsilon(1.0 / 510.0));

    VideoClip bad;
    bad.frames = {Image(2, 2, 1), Image(3, 3, 1)};
    CHECK_THROWS_AS(bad.validate(), ImageError);
    CHECK_THROWS_AS(VideoClip{}.validate(), ImageError);
}
