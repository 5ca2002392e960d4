#include "chromaflow/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>

namespace chromaflow::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Chw {
    int c, h, w;
};

Chw chw_of(const Var& x, const char* op) {
    const Shape& s = x.shape();
    if (s.size() != 3) throw ShapeError(std::string(op) + " expects a (C,H,W) tensor, got " + shape_string(s));
    return {s[0], s[1], s[2]};
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void accumulate(std::span<float> dst, std::span<const float> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Elementwise map with derivative f'(x, y) evaluated from input and output.
template <class F, class D>
Var unary(Var x, F f, D df) {
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return x.tape->push(std::move(out), {x}, [x, df](Tape& t, int self) {
        if (!x.requires_grad()) return;
        const Tensor& in = t.value(x.id);
        const Tensor& y = t.value(self);
        auto g = t.grad(self);
        auto gx = t.grad(x.id);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(in[i], y[i]);
    });
}

void im2col(std::span<const float> x, Chw s, Padding pad, std::vector<float>& cols) {
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    cols.assign(static_cast<std::size_t>(s.c) * 9 * hw, 0.0f);
    for (int c = 0; c < s.c; ++c) {
        const float* plane = x.data() + static_cast<std::size_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                float* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                for (int y = 0; y < s.h; ++y) {
                    int sy = y + ky - 1;
                    if (pad == Padding::Zero && (sy < 0 || sy >= s.h)) continue;
                    sy = std::clamp(sy, 0, s.h - 1);
                    const float* src = plane + static_cast<std::size_t>(sy) * s.w;
                    float* dst = row + static_cast<std::size_t>(y) * s.w;
                    for (int xx = 0; xx < s.w; ++xx) {
                        int sx = xx + kx - 1;
                        if (sx < 0 || sx >= s.w) {
                            if (pad == Padding::Zero) continue;
                            sx = std::clamp(sx, 0, s.w - 1);
                        }
                        dst[xx] = src[sx];
                    }
                }
            }
        }
    }
}

void col2im(std::span<const float> cols, Chw s, Padding pad, std::span<float> gx) {
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    for (int c = 0; c < s.c; ++c) {
        float* plane = gx.data() + static_cast<std::size_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = cols.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * hw;
                for (int y = 0; y < s.h; ++y) {
                    int sy = y + ky - 1;
                    if (pad == Padding::Zero && (sy < 0 || sy >= s.h)) continue;
                    sy = std::clamp(sy, 0, s.h - 1);
                    float* dst = plane + static_cast<std::size_t>(sy) * s.w;
                    const float* src = row + static_cast<std::size_t>(y) * s.w;
                    for (int xx = 0; xx < s.w; ++xx) {
                        int sx = xx + kx - 1;
                        if (sx < 0 || sx >= s.w) {
                            if (pad == Padding::Zero) continue;
                            sx = std::clamp(sx, 0, s.w - 1);
                        }
                        dst[sx] += src[xx];
                    }
                }
            }
        }
    }
}

// out(O,HW) = W(O,K) * cols(K,HW) + b, shared by 3x3 and 1x1 convolutions.
Var gemm_conv(Var x, Var weight, Var bias, Chw s, int k, std::shared_ptr<const std::vector<float>> cols,
              std::function<void(std::span<const float>, std::span<float>)> scatter) {
    const int o = weight.shape()[0];
    const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
    Tensor out({o, s.h, s.w});
    MapR om(out.data().data(), o, static_cast<Eigen::Index>(hw));
    CMapR wm(weight.value().data().data(), o, k);
    CMapR cm(cols->data(), k, static_cast<Eigen::Index>(hw));
    om.noalias() = wm * cm;
    const Tensor& b = bias.value();
    for (int i = 0; i < o; ++i) om.row(i).array() += b[static_cast<std::size_t>(i)];

    return x.tape->push(std::move(out), {x, weight, bias},
                        [x, weight, bias, s, k, o, hw, cols, scatter](Tape& t, int self) {
        CMapR gm(t.grad(self).data(), o, static_cast<Eigen::Index>(hw));
        if (weight.requires_grad()) {
            MapR gw(t.grad(weight.id).data(), o, k);
            gw.noalias() += gm * CMapR(cols->data(), k, static_cast<Eigen::Index>(hw)).transpose();
        }
        if (bias.requires_grad()) {
            auto gb = t.grad(bias.id);
            // Plain loop: Eigen's vectorized sum depends on buffer alignment.
            const float* g = t.grad(self).data();
            for (int i = 0; i < o; ++i) {
                double acc = 0.0;
                for (std::size_t p = 0; p < hw; ++p) acc += g[static_cast<std::size_t>(i) * hw + p];
                gb[static_cast<std::size_t>(i)] += static_cast<float>(acc);
            }
        }
        if (x.requires_grad()) {
            MatR gcols = CMapR(t.value(weight.id).data().data(), o, k).transpose() * gm;
            scatter(std::span<const float>(gcols.data(), static_cast<std::size_t>(gcols.size())),
                    t.grad(x.id));
        }
    });
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, Padding pad) {
    const Chw s = chw_of(x, "conv2d");
    const Shape& ws = weight.shape();
    if (ws.size() != 4 || ws[1] != s.c || ws[2] != 3 || ws[3] != 3) {
        throw ShapeError("conv2d: weight " + shape_string(ws) + " incompatible with input " +
                         shape_string(x.shape()));
    }
    if (bias.shape() != Shape{ws[0]}) throw ShapeError("conv2d: bias shape mismatch");
    auto cols = std::make_shared<std::vector<float>>();
    im2col(x.value().data(), s, pad, *cols);
    return gemm_conv(x, weight, bias, s, s.c * 9, std::move(cols),
                     [s, pad](std::span<const float> gcols, std::span<float> gx) { col2im(gcols, s, pad, gx); });
}

Var conv1x1(Var x, Var weight, Var bias) {
    const Chw s = chw_of(x, "conv1x1");
    const Shape& ws = weight.shape();
    if (ws.size() != 4 || ws[1] != s.c || ws[2] != 1 || ws[3] != 1) {
        throw ShapeError("conv1x1: weight " + shape_string(ws) + " incompatible with input " +
                         shape_string(x.shape()));
    }
    if (bias.shape() != Shape{ws[0]}) throw ShapeError("conv1x1: bias shape mismatch");
    auto cols = std::make_shared<std::vector<float>>(x.value().data().begin(), x.value().data().end());
    return gemm_conv(x, weight, bias, s, s.c, std::move(cols),
                     [](std::span<const float> gcols, std::span<float> gx) { accumulate(gx, gcols); });
}

Var leaky_relu(Var x, float slope) {
    return unary(
        x, [slope](float v) { return v > 0.0f ? v : slope * v; },
        [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Var relu(Var x) {
    return unary(
        x, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var abs(Var x) {
    return unary(
        x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Var mul_scalar(Var x, float s) {
    return unary(
        x, [s](float v) { return s * v; }, [s](float, float) { return s; });
}

Var add_scalar(Var x, float s) {
    return unary(
        x, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Var clamp01(Var x) {
    return unary(
        x, [](float v) { return std::clamp(v, 0.0f, 1.0f); },
        [](float v, float) { return (v >= 0.0f && v <= 1.0f) ? 1.0f : 0.0f; });
}

Var sigmoid(Var x) {
    return unary(
        x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); }, [](float, float y) { return y * (1.0f - y); });
}

Var downsample(Var x) {
    const Chw s = chw_of(x, "downsample");
    if (s.h % 2 || s.w % 2) throw ShapeError("downsample needs even height and width");
    const int h2 = s.h / 2, w2 = s.w / 2;
    const Tensor& in = x.value();
    Tensor out({s.c, h2, w2});
    for (int c = 0; c < s.c; ++c) {
        for (int y = 0; y < h2; ++y) {
            for (int xx = 0; xx < w2; ++xx) {
                const std::size_t base = (static_cast<std::size_t>(c) * s.h + 2 * y) * s.w + 2 * xx;
                out[(static_cast<std::size_t>(c) * h2 + y) * w2 + xx] =
                    0.25f * (in[base] + in[base + 1] + in[base + s.w] + in[base + s.w + 1]);
            }
        }
    }
    return x.tape->push(std::move(out), {x}, [x, s, h2, w2](Tape& t, int self) {
        auto g = t.grad(self);
        auto gx = t.grad(x.id);
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < h2; ++y) {
                for (int xx = 0; xx < w2; ++xx) {
                    const float v = 0.25f * g[(static_cast<std::size_t>(c) * h2 + y) * w2 + xx];
                    const std::size_t base = (static_cast<std::size_t>(c) * s.h + 2 * y) * s.w + 2 * xx;
                    gx[base] += v;
                    gx[base + 1] += v;
                    gx[base + s.w] += v;
                    gx[base + s.w + 1] += v;
                }
            }
        }
    });
}

namespace {

struct Lerp {
    int i0, i1;
    float w0, w1;
};

// Source taps for doubling an axis of length n with half-pixel centers.
std::vector<Lerp> doubling_taps(int n) {
    std::vector<Lerp> taps(static_cast<std::size_t>(2 * n));
    for (int o = 0; o < 2 * n; ++o) {
        const float src = std::clamp((static_cast<float>(o) + 0.5f) * 0.5f - 0.5f, 0.0f, static_cast<float>(n - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, n - 1);
        const float f = src - static_cast<float>(i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0f - f, f};
    }
    return taps;
}

}  // namespace

Var upsample(Var x) {
    const Chw s = chw_of(x, "upsample");
    const int h2 = 2 * s.h, w2 = 2 * s.w;
    auto ty = std::make_shared<std::vector<Lerp>>(doubling_taps(s.h));
    auto tx = std::make_shared<std::vector<Lerp>>(doubling_taps(s.w));
    const Tensor& in = x.value();
    Tensor out({s.c, h2, w2});
    for (int c = 0; c < s.c; ++c) {
        const float* p = in.data().data() + static_cast<std::size_t>(c) * s.h * s.w;
        float* q = out.data().data() + static_cast<std::size_t>(c) * h2 * w2;
        for (int y = 0; y < h2; ++y) {
            const Lerp& ly = (*ty)[static_cast<std::size_t>(y)];
            const float* r0 = p + static_cast<std::size_t>(ly.i0) * s.w;
            const float* r1 = p + static_cast<std::size_t>(ly.i1) * s.w;
            for (int xx = 0; xx < w2; ++xx) {
                const Lerp& lx = (*tx)[static_cast<std::size_t>(xx)];
                q[static_cast<std::size_t>(y) * w2 + xx] = ly.w0 * (lx.w0 * r0[lx.i0] + lx.w1 * r0[lx.i1]) +
                                                           ly.w1 * (lx.w0 * r1[lx.i0] + lx.w1 * r1[lx.i1]);
            }
        }
    }
    return x.tape->push(std::move(out), {x}, [x, s, h2, w2, ty, tx](Tape& t, int self) {
        auto g = t.grad(self);
        auto gx = t.grad(x.id);
        for (int c = 0; c < s.c; ++c) {
            const float* q = g.data() + static_cast<std::size_t>(c) * h2 * w2;
            float* p = gx.data() + static_cast<std::size_t>(c) * s.h * s.w;
            for (int y = 0; y < h2; ++y) {
                const Lerp& ly = (*ty)[static_cast<std::size_t>(y)];
                float* r0 = p + static_cast<std::size_t>(ly.i0) * s.w;
                float* r1 = p + static_cast<std::size_t>(ly.i1) * s.w;
                for (int xx = 0; xx < w2; ++xx) {
                    const Lerp& lx = (*tx)[static_cast<std::size_t>(xx)];
                    const float v = q[static_cast<std::size_t>(y) * w2 + xx];
                    r0[lx.i0] += ly.w0 * lx.w0 * v;
                    r0[lx.i1] += ly.w0 * lx.w1 * v;
                    r1[lx.i0] += ly.w1 * lx.w0 * v;
                    r1[lx.i1] += ly.w1 * lx.w1 * v;
                }
            }
        }
    });
}

Var concat(std::initializer_list<Var> xs) { return concat(std::span<const Var>(xs.begin(), xs.size())); }

Var concat(std::span<const Var> xs) {
    if (xs.empty()) throw ShapeError("concat of nothing");
    const Chw s0 = chw_of(xs[0], "concat");
    int channels = 0;
    for (const Var& v : xs) {
        const Chw s = chw_of(v, "concat");
        if (s.h != s0.h || s.w != s0.w) throw ShapeError("concat: spatial sizes differ");
        channels += s.c;
    }
    Tensor out({channels, s0.h, s0.w});
    std::size_t offset = 0;
    for (const Var& v : xs) {
        auto d = v.value().data();
        std::copy(d.begin(), d.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += d.size();
    }
    std::vector<Var> parents(xs.begin(), xs.end());
    Tape* tape = xs[0].tape;
    return tape->push(std::move(out), xs, [parents](Tape& t, int self) {
        auto g = t.grad(self);
        std::size_t off = 0;
        for (const Var& p : parents) {
            const std::size_t n = t.value(p.id).size();
            if (p.requires_grad()) accumulate(t.grad(p.id), g.subspan(off, n));
            off += n;
        }
    });
}

Var slice_channels(Var x, int begin, int count) {
    const Chw s = chw_of(x, "slice_channels");
    if (begin < 0 || count <= 0 || begin + count > s.c) throw ShapeError("slice_channels: range out of bounds");
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const std::size_t off = static_cast<std::size_t>(begin) * plane;
    const std::size_t n = static_cast<std::size_t>(count) * plane;
    auto d = x.value().data().subspan(off, n);
    Tensor out({count, s.h, s.w}, std::vector<float>(d.begin(), d.end()));
    return x.tape->push(std::move(out), {x}, [x, off, n](Tape& t, int self) {
        accumulate(t.grad(x.id).subspan(off, n), t.grad(self));
    });
}

Var add(Var a, Var b) {
    require_same(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        auto g = t.grad(self);
        if (a.requires_grad()) accumulate(t.grad(a.id), g);
        if (b.requires_grad()) accumulate(t.grad(b.id), g);
    });
}

Var sub(Var a, Var b) {
    require_same(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        auto g = t.grad(self);
        if (a.requires_grad()) accumulate(t.grad(a.id), g);
        if (b.requires_grad()) {
            auto gb = t.grad(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    const bool broadcast = a.shape() != b.shape();
    std::size_t plane = 0;
    if (broadcast) {
        const Chw sa = chw_of(a, "mul");
        const Chw sb = chw_of(b, "mul");
        if (sb.c != 1 || sa.h != sb.h || sa.w != sb.w) {
            throw ShapeError("mul: cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
        }
        plane = static_cast<std::size_t>(sa.h) * sa.w;
    }
    auto bidx = [broadcast, plane](std::size_t i) { return broadcast ? i % plane : i; };
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[bidx(i)];
    return a.tape->push(std::move(out), {a, b}, [a, b, bidx](Tape& t, int self) {
        auto g = t.grad(self);
        const Tensor& av = t.value(a.id);
        const Tensor& bv = t.value(b.id);
        if (a.requires_grad()) {
            auto ga = t.grad(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[bidx(i)];
        }
        if (b.requires_grad()) {
            auto gb = t.grad(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[bidx(i)] += g[i] * av[i];
        }
    });
}

Var sum(Var x) {
    double acc = 0.0;
    for (float v : x.value().data()) acc += v;
    return x.tape->push(Tensor::scalar(static_cast<float>(acc)), {x}, [x](Tape& t, int self) {
        const float g = t.grad(self)[0];
        for (float& v : t.grad(x.id)) v += g;
    });
}

Var mean(Var x) {
    const float n = static_cast<float>(x.value().size());
    double acc = 0.0;
    for (float v : x.value().data()) acc += v;
    return x.tape->push(Tensor::scalar(static_cast<float>(acc / n)), {x}, [x, n](Tape& t, int self) {
        const float g = t.grad(self)[0] / n;
        for (float& v : t.grad(x.id)) v += g;
    });
}

Var mean_channels(Var x) {
    const Chw s = chw_of(x, "mean_channels");
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    Tensor out({1, s.h, s.w});
    const Tensor& in = x.value();
    for (std::size_t p = 0; p < plane; ++p) {
        float acc = 0.0f;
        for (int c = 0; c < s.c; ++c) acc += in[static_cast<std::size_t>(c) * plane + p];
        out[p] = acc / static_cast<float>(s.c);
    }
    return x.tape->push(std::move(out), {x}, [x, s, plane](Tape& t, int self) {
        auto g = t.grad(self);
        auto gx = t.grad(x.id);
        const float inv = 1.0f / static_cast<float>(s.c);
        for (int c = 0; c < s.c; ++c) {
            for (std::size_t p = 0; p < plane; ++p) gx[static_cast<std::size_t>(c) * plane + p] += g[p] * inv;
        }
    });
}

Var channel_l2_normalize(Var x, float eps) {
    const Chw s = chw_of(x, "channel_l2_normalize");
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    const Tensor& in = x.value();
    auto norms = std::make_shared<std::vector<float>>(plane);
    Tensor out(in.shape());
    for (std::size_t p = 0; p < plane; ++p) {
        float acc = eps;
        for (int c = 0; c < s.c; ++c) {
            const float v = in[static_cast<std::size_t>(c) * plane + p];
            acc += v * v;
        }
        const float n = std::sqrt(acc);
        (*norms)[p] = n;
        for (int c = 0; c < s.c; ++c) out[static_cast<std::size_t>(c) * plane + p] = in[static_cast<std::size_t>(c) * plane + p] / n;
    }
    return x.tape->push(std::move(out), {x}, [x, s, plane, norms](Tape& t, int self) {
        auto g = t.grad(self);
        auto gx = t.grad(x.id);
        const Tensor& y = t.value(self);
        for (std::size_t p = 0; p < plane; ++p) {
            float dot = 0.0f;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * plane + p;
                dot += g[i] * y[i];
            }
            const float inv = 1.0f / (*norms)[p];
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * plane + p;
                gx[i] += (g[i] - y[i] * dot) * inv;
            }
        }
    });
}

Var warp(Var x, const FlowField& flow) {
    const Chw s = chw_of(x, "warp");
    if (flow.height() != s.h || flow.width() != s.w) throw ShapeError("warp: flow size differs from input");
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    auto taps = std::make_shared<std::vector<std::optional<BilinearTaps>>>(plane);
    for (int y = 0; y < s.h; ++y) {
        for (int xx = 0; xx < s.w; ++xx) {
            const FlowVector f = flow.at(y, xx);
            (*taps)[static_cast<std::size_t>(y) * s.w + xx] =
                bilinear_taps(static_cast<float>(y) + f.v, static_cast<float>(xx) + f.u, s.h, s.w);
        }
    }
    const Tensor& in = x.value();
    Tensor out(in.shape(), 0.0f);
    for (int c = 0; c < s.c; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            const auto& tp = (*taps)[p];
            if (!tp) continue;
            float acc = 0.0f;
            for (int k = 0; k < 4; ++k) {
                acc += tp->w[k] * in[base + static_cast<std::size_t>(tp->y[k]) * s.w + tp->x[k]];
            }
            out[base + p] = acc;
        }
    }
    return x.tape->push(std::move(out), {x}, [x, s, plane, taps](Tape& t, int self) {
        auto g = t.grad(self);
        auto gx = t.grad(x.id);
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const auto& tp = (*taps)[p];
                if (!tp) continue;
                for (int k = 0; k < 4; ++k) {
                    gx[base + static_cast<std::size_t>(tp->y[k]) * s.w + tp->x[k]] += tp->w[k] * g[base + p];
                }
            }
        }
    });
}

Var minimum(std::span<const Var> scalars) {
    if (scalars.empty()) throw ShapeError("minimum of nothing");
    std::size_t best = 0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].value().size() != 1) throw ShapeError("minimum expects scalar operands");
        if (scalars[i].value()[0] < scalars[best].value()[0]) best = i;
    }
    const Var chosen = scalars[best];
    return chosen.tape->push(Tensor::scalar(chosen.value()[0]), scalars, [chosen](Tape& t, int self) {
        if (chosen.requires_grad()) t.grad(chosen.id)[0] += t.grad(self)[0];
    });
}

float item(Var x) {
    if (x.value().size() != 1) throw ShapeError("item() on a non-scalar tensor");
    return x.value()[0];
}

}  // namespace chromaflow::nn
