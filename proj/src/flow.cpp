#include "chromaflow/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace chromaflow {

namespace fs = std::filesystem;

FlowField::FlowField(int height, int width, FlowVector fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw FlowError("flow dimensions must be positive");
    vectors_.assign(static_cast<std::size_t>(height) * width, fill);
}

OcclusionMask::OcclusionMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
    if (height <= 0 || width <= 0) throw FlowError("mask dimensions must be positive");
    values_.assign(static_cast<std::size_t>(height) * width, fill ? 1 : 0);
}

std::size_t OcclusionMask::count() const {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

OcclusionMask OcclusionMask::operator&(const OcclusionMask& other) const {
    if (other.height_ != height_ || other.width_ != width_) throw FlowError("mask size mismatch");
    OcclusionMask out(height_, width_, 0);
    for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] = values_[i] & other.values_[i];
    return out;
}

Image OcclusionMask::to_image() const {
    Image img(height_, width_, 1);
    auto d = img.data();
    for (std::size_t i = 0; i < values_.size(); ++i) d[i] = values_[i] ? 1.0f : 0.0f;
    return img;
}

OcclusionMask OcclusionMask::from_image(const Image& img) {
    if (img.channels() != 1) throw FlowError("mask image must be single-channel");
    OcclusionMask m(img.height(), img.width(), 0);
    auto d = img.data();
    for (std::size_t i = 0; i < d.size(); ++i) m.values_[i] = d[i] >= 0.5f ? 1 : 0;
    return m;
}

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

FlowField read_flo(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12) throw FlowError("truncated .flo header: " + path.string());
    if (std::memcmp(bytes.data(), "PIEH", 4) != 0) throw FlowError("bad .flo magic: " + path.string());
    const auto width = static_cast<std::int32_t>(get_u32(bytes.data() + 4));
    const auto height = static_cast<std::int32_t>(get_u32(bytes.data() + 8));
    if (width < 1 || height < 1 || width > 99999 || height > 99999) {
        throw FlowError("illegal .flo dimensions: " + path.string());
    }
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (bytes.size() < 12 + n * 8) throw FlowError("truncated .flo payload: " + path.string());
    if (bytes.size() > 12 + n * 8) throw FlowError("trailing bytes in .flo file: " + path.string());

    FlowField field(height, width);
    auto vecs = field.vectors();
    const unsigned char* p = bytes.data() + 12;
    for (std::size_t i = 0; i < n; ++i, p += 8) {
        const float u = std::bit_cast<float>(get_u32(p));
        const float v = std::bit_cast<float>(get_u32(p + 4));
        if (!std::isfinite(u) || !std::isfinite(v)) throw FlowError("non-finite value in " + path.string());
        vecs[i] = {u, v};
    }
    return field;
}

void write_flo(const FlowField& field, const fs::path& path) {
    if (field.vectors().empty()) throw FlowError("cannot write an empty flow field");
    std::vector<char> out;
    out.reserve(12 + field.vectors().size() * 8);
    out.insert(out.end(), {'P', 'I', 'E', 'H'});
    put_u32(out, static_cast<std::uint32_t>(field.width()));
    put_u32(out, static_cast<std::uint32_t>(field.height()));
    for (const auto& fv : field.vectors()) {
        if (!std::isfinite(fv.u) || !std::isfinite(fv.v)) throw FlowError("non-finite flow vector");
        put_u32(out, std::bit_cast<std::uint32_t>(fv.u));
        put_u32(out, std::bit_cast<std::uint32_t>(fv.v));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

std::optional<BilinearTaps> bilinear_taps(float sy, float sx, int height, int width) {
    if (!(sx >= 0.0f && sy >= 0.0f && sx <= static_cast<float>(width - 1) &&
          sy <= static_cast<float>(height - 1))) {
        return std::nullopt;
    }
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const float fx = sx - static_cast<float>(x0);
    const float fy = sy - static_cast<float>(y0);
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    BilinearTaps t;
    t.y = {y0, y0, y1, y1};
    t.x = {x0, x1, x0, x1};
    t.w = {(1.0f - fx) * (1.0f - fy), fx * (1.0f - fy), (1.0f - fx) * fy, fx * fy};
    return t;
}

WarpResult backward_warp(const Image& source, const FlowField& flow) {
    if (!flow.same_size(source)) throw FlowError("backward_warp: flow and source sizes differ");
    const int h = flow.height(), w = flow.width(), c = source.channels();
    WarpResult r{Image(h, w, c, 0.0f), OcclusionMask(h, w, 0)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const FlowVector f = flow.at(y, x);
            const auto taps = bilinear_taps(static_cast<float>(y) + f.v, static_cast<float>(x) + f.u, h, w);
            if (!taps) continue;
            r.validity.at(y, x) = 1;
            for (int ch = 0; ch < c; ++ch) {
                float acc = 0.0f;
                for (int k = 0; k < 4; ++k) acc += taps->w[k] * source.at(taps->y[k], taps->x[k], ch);
                r.image.at(y, x, ch) = acc;
            }
        }
    }
    return r;
}

namespace {

FlowVector sample_flow(const FlowField& f, const BilinearTaps& t) {
    FlowVector out;
    for (int k = 0; k < 4; ++k) {
        const FlowVector& v = f.at(t.y[k], t.x[k]);
        out.u += t.w[k] * v.u;
        out.v += t.w[k] * v.v;
    }
    return out;
}

}  // namespace

OcclusionMask occlusion_mask(const FlowField& fwd, const FlowField& bwd) {
    if (!fwd.same_size(bwd)) throw FlowError("occlusion_mask: flow sizes differ");
    const int h = fwd.height(), w = fwd.width();
    OcclusionMask m(h, w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const FlowVector f = fwd.at(y, x);
            const auto taps = bilinear_taps(static_cast<float>(y) + f.v, static_cast<float>(x) + f.u, h, w);
            if (!taps) continue;
            const FlowVector b = sample_flow(bwd, *taps);
            const double su = static_cast<double>(f.u) + b.u;
            const double sv = static_cast<double>(f.v) + b.v;
            const double lhs = su * su + sv * sv;
            const double mag = static_cast<double>(f.u) * f.u + static_cast<double>(f.v) * f.v +
                               static_cast<double>(b.u) * b.u + static_cast<double>(b.v) * b.v;
            m.at(y, x) = lhs < 0.01 * mag + 0.5 ? 1 : 0;
        }
    }
    return m;
}

namespace {

// Single-channel float plane used internally by the estimator.
struct Plane {
    int h = 0, w = 0;
    std::vector<float> v;
    Plane() = default;
    Plane(int h_, int w_, float fill = 0.0f) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}
    float& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    float operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    float clamped(int y, int x) const { return (*this)(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); }
};

Plane halve(const Plane& p) {
    Plane out(std::max(1, p.h / 2), std::max(1, p.w / 2));
    for (int y = 0; y < out.h; ++y) {
        for (int x = 0; x < out.w; ++x) {
            out(y, x) = 0.25f * (p.clamped(2 * y, 2 * x) + p.clamped(2 * y, 2 * x + 1) +
                                 p.clamped(2 * y + 1, 2 * x) + p.clamped(2 * y + 1, 2 * x + 1));
        }
    }
    return out;
}

float sample_clamped(const Plane& p, float sy, float sx) {
    sx = std::clamp(sx, 0.0f, static_cast<float>(p.w - 1));
    sy = std::clamp(sy, 0.0f, static_cast<float>(p.h - 1));
    const auto t = bilinear_taps(sy, sx, p.h, p.w);
    float acc = 0.0f;
    for (int k = 0; k < 4; ++k) acc += t->w[k] * p(t->y[k], t->x[k]);
    return acc;
}

// Resample a coarse flow component onto a finer grid, scaling magnitudes.
Plane upsample_flow(const Plane& coarse, int h, int w) {
    Plane out(h, w);
    const float sy = static_cast<float>(coarse.h) / static_cast<float>(h);
    const float sx = static_cast<float>(coarse.w) / static_cast<float>(w);
    const float scale = static_cast<float>(w) / static_cast<float>(coarse.w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float cy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
            const float cx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            out(y, x) = scale * sample_clamped(coarse, cy, cx);
        }
    }
    return out;
}

// Horn-Schunck neighbourhood average (4-neighbours weighted 1/6, diagonals 1/12).
float hs_average(const Plane& p, int y, int x) {
    return (p.clamped(y - 1, x) + p.clamped(y + 1, x) + p.clamped(y, x - 1) + p.clamped(y, x + 1)) / 6.0f +
           (p.clamped(y - 1, x - 1) + p.clamped(y - 1, x + 1) + p.clamped(y + 1, x - 1) +
            p.clamped(y + 1, x + 1)) / 12.0f;
}

void refine_level(const Plane& a, const Plane& b, Plane& u, Plane& v, const FlowConfig& cfg) {
    const int h = a.h, w = a.w;
    for (int warp = 0; warp < std::max(cfg.warps, 1); ++warp) {
        Plane bw(h, w), ix(h, w), iy(h, w), it(h, w);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                bw(y, x) = sample_clamped(b, static_cast<float>(y) + v(y, x), static_cast<float>(x) + u(y, x));
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                ix(y, x) = 0.25f * (a.clamped(y, x + 1) - a.clamped(y, x - 1) + bw.clamped(y, x + 1) -
                                    bw.clamped(y, x - 1));
                iy(y, x) = 0.25f * (a.clamped(y + 1, x) - a.clamped(y - 1, x) + bw.clamped(y + 1, x) -
                                    bw.clamped(y - 1, x));
                it(y, x) = bw(y, x) - a(y, x);
            }
        }
        const Plane u0 = u, v0 = v;
        const float alpha2 = cfg.smoothness * cfg.smoothness;
        for (int iter = 0; iter < cfg.iterations; ++iter) {
            Plane un(h, w), vn(h, w);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const float ub = hs_average(u, y, x);
                    const float vb = hs_average(v, y, x);
                    const float gx = ix(y, x), gy = iy(y, x);
                    const float r = gx * (ub - u0(y, x)) + gy * (vb - v0(y, x)) + it(y, x);
                    const float k = r / (alpha2 + gx * gx + gy * gy);
                    un(y, x) = ub - gx * k;
                    vn(y, x) = vb - gy * k;
                }
            }
            u = std::move(un);
            v = std::move(vn);
        }
    }
}

}  // namespace

FlowField estimate_flow(const Image& a, const Image& b, const FlowConfig& cfg) {
    if (a.channels() != 1 || b.channels() != 1) throw FlowError("estimate_flow expects grayscale frames");
    if (!a.same_shape(b)) throw FlowError("estimate_flow: frame sizes differ");
    if (cfg.levels < 1) throw FlowError("estimate_flow: levels must be >= 1");
    if (cfg.iterations < 0 || cfg.smoothness <= 0.0f) throw FlowError("estimate_flow: invalid config");
    const int coarse_h = a.height() >> (cfg.levels - 1);
    const int coarse_w = a.width() >> (cfg.levels - 1);
    if (coarse_h < 8 || coarse_w < 8) {
        throw FlowError("estimate_flow: coarsest pyramid level is smaller than 8x8");
    }

    std::vector<Plane> pa(1), pb(1);
    pa[0] = Plane(a.height(), a.width());
    pb[0] = Plane(b.height(), b.width());
    std::copy(a.data().begin(), a.data().end(), pa[0].v.begin());
    std::copy(b.data().begin(), b.data().end(), pb[0].v.begin());
    for (int l = 1; l < cfg.levels; ++l) {
        pa.push_back(halve(pa.back()));
        pb.push_back(halve(pb.back()));
    }

    Plane u(pa.back().h, pa.back().w), v(pa.back().h, pa.back().w);
    for (int l = cfg.levels - 1; l >= 0; --l) {
        if (u.h != pa[l].h || u.w != pa[l].w) {
            u = upsample_flow(u, pa[l].h, pa[l].w);
            v = upsample_flow(v, pa[l].h, pa[l].w);
        }
        if (cfg.iterations > 0) refine_level(pa[l], pb[l], u, v, cfg);
    }

    FlowField out(a.height(), a.width());
    auto vecs = out.vectors();
    for (std::size_t i = 0; i < vecs.size(); ++i) vecs[i] = {u.v[i], v.v[i]};
    return out;
}

double mean_endpoint_error(const FlowField& estimate, const FlowField& truth, const OcclusionMask* region) {
    if (!estimate.same_size(truth)) throw FlowError("endpoint error: flow sizes differ");
    double acc = 0.0;
    std::size_t n = 0;
    auto e = estimate.vectors();
    auto t = truth.vectors();
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (region && region->values()[i] == 0) continue;
        acc += std::hypot(static_cast<double>(e[i].u) - t[i].u, static_cast<double>(e[i].v) - t[i].v);
        ++n;
    }
    return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace chromaflow
