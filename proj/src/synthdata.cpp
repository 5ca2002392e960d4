#include "chromaflow/synthdata.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace chromaflow {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneSpec::validate() const {
    if (height <= 0 || width <= 0 || frames < 1) throw std::invalid_argument("scene: bad canvas or frame count");
    if (texture_noise < 0.0f) throw std::invalid_argument("scene: texture noise must be >= 0");
    const float vmax = static_cast<float>(std::min(height, width)) / static_cast<float>(frames);
    for (const auto& s : shapes) {
        if (!(s.size > 0.0f)) throw std::invalid_argument("scene: shape size must be positive");
        const float half = s.size / 2.0f;
        auto inside = [&](float cx, float cy) {
            return cx - half >= 0.0f && cy - half >= 0.0f && cx + half <= static_cast<float>(width - 1) &&
                   cy + half <= static_cast<float>(height - 1);
        };
        if (!inside(s.x, s.y)) throw std::invalid_argument("scene: shape does not fit the canvas at frame 0");
        if (!(std::hypot(s.vx, s.vy) < vmax)) throw std::invalid_argument("scene: shape velocity too large");
        if (!allow_leaving) {
            for (int t = 1; t < frames; ++t) {
                const float ft = static_cast<float>(t);
                if (!inside(s.x + s.vx * ft, s.y + s.vy * ft)) {
                    throw std::invalid_argument("scene: shape leaves the canvas mid-clip");
                }
            }
        }
    }
}

const std::array<Rgb, 8>& palette() {
    static const std::array<Rgb, 8> colors{{
        {0.85f, 0.15f, 0.15f},  // red
        {0.20f, 0.75f, 0.20f},  // green
        {0.15f, 0.25f, 0.85f},  // blue
        {0.90f, 0.80f, 0.15f},  // yellow
        {0.80f, 0.20f, 0.75f},  // magenta
        {0.15f, 0.75f, 0.80f},  // cyan
        {0.95f, 0.50f, 0.10f},  // orange
        {0.45f, 0.15f, 0.70f},  // purple
    }};
    return colors;
}

int palette_index(ShapeKind kind, int size_class) {
    if (size_class < 0 || size_class >= static_cast<int>(kSizeClasses.size())) {
        throw std::out_of_range("size class out of range");
    }
    return (kind == ShapeKind::Rectangle ? 0 : 4) + size_class;
}

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic noise in [-1, 1] keyed on (seed, surface, local coordinates).
float texture(std::uint64_t seed, std::int64_t surface, std::int64_t lx, std::int64_t ly) {
    std::uint64_t h = mix(seed);
    h = mix(h ^ static_cast<std::uint64_t>(surface));
    h = mix(h ^ static_cast<std::uint64_t>(lx));
    h = mix(h ^ static_cast<std::uint64_t>(ly));
    return static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0);
}

bool covers(const ShapeSpec& s, float cx, float cy, int px, int py) {
    const float dx = static_cast<float>(px) - cx;
    const float dy = static_cast<float>(py) - cy;
    const float half = s.size / 2.0f;
    if (s.kind == ShapeKind::Rectangle) return std::fabs(dx) < half && std::fabs(dy) < half;
    return dx * dx + dy * dy < half * half;
}

// Index of the topmost shape at each pixel for frame t, or -1 for background.
std::vector<int> label_map(const SceneSpec& spec, int t) {
    std::vector<int> labels(static_cast<std::size_t>(spec.height) * spec.width, -1);
    const float ft = static_cast<float>(t);
    for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
        const auto& s = spec.shapes[i];
        const float cx = s.x + s.vx * ft, cy = s.y + s.vy * ft;
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                if (covers(s, cx, cy, x, y)) labels[static_cast<std::size_t>(y) * spec.width + x] = static_cast<int>(i);
            }
        }
    }
    return labels;
}

Image render(const SceneSpec& spec, const std::vector<int>& labels, int t) {
    Image img(spec.height, spec.width, 3);
    const float ft = static_cast<float>(t);
    for (int y = 0; y < spec.height; ++y) {
        const float a = spec.height > 1 ? static_cast<float>(y) / static_cast<float>(spec.height - 1) : 0.0f;
        for (int x = 0; x < spec.width; ++x) {
            const int label = labels[static_cast<std::size_t>(y) * spec.width + x];
            Rgb base;
            float n;
            if (label < 0) {
                for (int c = 0; c < 3; ++c) base[c] = (1.0f - a) * spec.background_top[c] + a * spec.background_bottom[c];
                n = texture(spec.seed, -1, x, y);
            } else {
                const auto& s = spec.shapes[static_cast<std::size_t>(label)];
                base = s.color;
                const auto lx = static_cast<std::int64_t>(std::floor(static_cast<float>(x) - (s.x + s.vx * ft)));
                const auto ly = static_cast<std::int64_t>(std::floor(static_cast<float>(y) - (s.y + s.vy * ft)));
                n = texture(spec.seed, label, lx, ly);
            }
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(base[c] + spec.texture_noise * n, 0.0f, 1.0f);
        }
    }
    return img;
}

// Flow on `from`'s grid into `to`, with sign +1 for forward time.
void pair_truth(const SceneSpec& spec, const std::vector<int>& from, const std::vector<int>& to, float sign,
                FlowField& flow, OcclusionMask& mask) {
    const int h = spec.height, w = spec.width;
    flow = FlowField(h, w);
    mask = OcclusionMask(h, w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int label = from[static_cast<std::size_t>(y) * w + x];
            FlowVector f;
            if (label >= 0) {
                f = {sign * spec.shapes[static_cast<std::size_t>(label)].vx,
                     sign * spec.shapes[static_cast<std::size_t>(label)].vy};
            }
            flow.at(y, x) = f;
            const auto taps = bilinear_taps(static_cast<float>(y) + f.v, static_cast<float>(x) + f.u, h, w);
            if (!taps) continue;
            bool same = true;
            for (int k = 0; k < 4; ++k) {
                if (taps->w[k] > 0.0f && to[static_cast<std::size_t>(taps->y[k]) * w + taps->x[k]] != label) same = false;
            }
            mask.at(y, x) = same ? 1 : 0;
        }
    }
}

}  // namespace

SceneSpec random_scene(std::uint64_t seed, int height, int width, int frames) {
    std::mt19937_64 rng(seed);
    SceneSpec spec;
    spec.height = height;
    spec.width = width;
    spec.frames = frames;
    spec.seed = seed;
    std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
    const Rgb top{0.55f, 0.62f, 0.75f}, bottom{0.50f, 0.45f, 0.35f};
    for (int c = 0; c < 3; ++c) {
        spec.background_top[c] = top[c] + jitter(rng);
        spec.background_bottom[c] = bottom[c] + jitter(rng);
    }
    const int n = std::uniform_int_distribution<int>(1, 3)(rng);
    std::uniform_int_distribution<int> vel(-2, 2);
    for (int i = 0; i < n; ++i) {
        ShapeSpec s;
        s.kind = std::bernoulli_distribution(0.5)(rng) ? ShapeKind::Rectangle : ShapeKind::Disk;
        const int cls = std::uniform_int_distribution<int>(0, static_cast<int>(kSizeClasses.size()) - 1)(rng);
        s.size = kSizeClasses[static_cast<std::size_t>(cls)];
        s.color = palette()[static_cast<std::size_t>(palette_index(s.kind, cls))];
        const int half = static_cast<int>(std::ceil(s.size / 2.0f));
        const int span = frames - 1;
        int vx = vel(rng), vy = vel(rng);
        auto range = [&](int v, int extent) {
            const int lo = half - std::min(0, v * span);
            const int hi = extent - 1 - half - std::max(0, v * span);
            return std::pair{lo, hi};
        };
        if (auto [lo, hi] = range(vx, width); lo > hi) vx = 0;
        if (auto [lo, hi] = range(vy, height); lo > hi) vy = 0;
        const auto [xlo, xhi] = range(vx, width);
        const auto [ylo, yhi] = range(vy, height);
        s.x = static_cast<float>(std::uniform_int_distribution<int>(xlo, xhi)(rng));
        s.y = static_cast<float>(std::uniform_int_distribution<int>(ylo, yhi)(rng));
        s.vx = static_cast<float>(vx);
        s.vy = static_cast<float>(vy);
        spec.shapes.push_back(s);
    }
    return spec;
}

SynthClip generate_clip(const SceneSpec& spec) {
    spec.validate();
    SynthClip clip;
    std::vector<std::vector<int>> labels;
    for (int t = 0; t < spec.frames; ++t) {
        labels.push_back(label_map(spec, t));
        clip.color.frames.push_back(render(spec, labels.back(), t));
        clip.gray.frames.push_back(to_grayscale(clip.color.frames.back()));
    }
    for (int t = 0; t + 1 < spec.frames; ++t) {
        FlowField f, b;
        OcclusionMask mf, mb;
        pair_truth(spec, labels[static_cast<std::size_t>(t)], labels[static_cast<std::size_t>(t) + 1], 1.0f, f, mf);
        pair_truth(spec, labels[static_cast<std::size_t>(t) + 1], labels[static_cast<std::size_t>(t)], -1.0f, b, mb);
        clip.flow_fwd.push_back(std::move(f));
        clip.flow_bwd.push_back(std::move(b));
        clip.occ_fwd.push_back(std::move(mf));
        clip.occ_bwd.push_back(std::move(mb));
    }
    return clip;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

Split split_for_index(std::size_t index, std::size_t n_clips) {
    const std::size_t n_train = n_clips * 8 / 10;
    const std::size_t n_val = n_clips / 10;
    if (index < n_train) return Split::Train;
    if (index < n_train + n_val) return Split::Val;
    return Split::Test;
}

std::vector<const ClipRecord*> Manifest::clips_in(Split s) const {
    std::vector<const ClipRecord*> out;
    for (const auto& c : clips) {
        if (c.split == s) out.push_back(&c);
    }
    return out;
}

std::uint64_t clip_seed(std::uint64_t base_seed, std::size_t index) {
    return mix(mix(base_seed) ^ static_cast<std::uint64_t>(index));
}

namespace {

std::string numbered(const std::string& dir, std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu", i);
    return dir + "/" + buf + ext;
}

json record_to_json(const ClipRecord& r) {
    return json{{"clip_id", r.clip_id},         {"seed", r.seed},
                {"split", to_string(r.split)},  {"frames", r.frames},
                {"gray_frames", r.gray_frames}, {"flows", r.flows},
                {"flows_bwd", r.flows_bwd},     {"occlusions", r.occlusions},
                {"occlusions_bwd", r.occlusions_bwd}};
}

ClipRecord record_from_json(const json& j) {
    ClipRecord r;
    r.clip_id = j.at("clip_id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.split = split_from_string(j.at("split").get<std::string>());
    r.frames = j.at("frames").get<std::vector<std::string>>();
    r.gray_frames = j.value("gray_frames", std::vector<std::string>{});
    r.flows = j.value("flows", std::vector<std::string>{});
    r.flows_bwd = j.value("flows_bwd", std::vector<std::string>{});
    r.occlusions = j.value("occlusions", std::vector<std::string>{});
    r.occlusions_bwd = j.value("occlusions_bwd", std::vector<std::string>{});
    return r;
}

}  // namespace

Manifest make_dataset(std::size_t n_clips, std::uint64_t base_seed, const fs::path& out_dir,
                      const DatasetOptions& opts) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory " + out_dir.string());
    Manifest m;
    m.root = out_dir;
    m.base_seed = base_seed;
    m.height = opts.height;
    m.width = opts.width;
    m.frames = opts.frames;
    for (std::size_t i = 0; i < n_clips; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "clip_%04zu", i);
        ClipRecord r;
        r.clip_id = id;
        r.seed = clip_seed(base_seed, i);
        r.split = split_for_index(i, n_clips);
        const SynthClip clip = generate_clip(random_scene(r.seed, opts.height, opts.width, opts.frames));
        const fs::path dir = out_dir / r.clip_id;
        for (const char* sub : {"color", "gray", "flow", "flow_bwd", "occ", "occ_bwd"}) {
            fs::create_directories(dir / sub, ec);
            if (ec) throw IoError("cannot create " + (dir / sub).string());
        }
        for (std::size_t t = 0; t < clip.color.size(); ++t) {
            r.frames.push_back(numbered(r.clip_id + "/color", t, ".png"));
            r.gray_frames.push_back(numbered(r.clip_id + "/gray", t, ".png"));
            save_png(clip.color.frames[t], out_dir / r.frames.back());
            save_png(clip.gray.frames[t], out_dir / r.gray_frames.back());
        }
        for (std::size_t t = 0; t < clip.flow_fwd.size(); ++t) {
            r.flows.push_back(numbered(r.clip_id + "/flow", t, ".flo"));
            r.flows_bwd.push_back(numbered(r.clip_id + "/flow_bwd", t, ".flo"));
            r.occlusions.push_back(numbered(r.clip_id + "/occ", t, ".png"));
            r.occlusions_bwd.push_back(numbered(r.clip_id + "/occ_bwd", t, ".png"));
            write_flo(clip.flow_fwd[t], out_dir / r.flows.back());
            write_flo(clip.flow_bwd[t], out_dir / r.flows_bwd.back());
            save_png(clip.occ_fwd[t].to_image(), out_dir / r.occlusions.back());
            save_png(clip.occ_bwd[t].to_image(), out_dir / r.occlusions_bwd.back());
        }
        m.clips.push_back(std::move(r));
    }
    save_manifest(m);
    return m;
}

void save_manifest(const Manifest& m) {
    json clips = json::array();
    for (const auto& c : m.clips) clips.push_back(record_to_json(c));
    const json j{{"version", 1},      {"base_seed", m.base_seed}, {"height", m.height},
                 {"width", m.width},  {"frames", m.frames},       {"clips", clips}};
    std::ofstream f(m.root / "manifest.json");
    if (!f) throw IoError("cannot write manifest in " + m.root.string());
    f << j.dump(2) << '\n';
}

Manifest load_manifest(const fs::path& path_or_dir) {
    const fs::path file = fs::is_directory(path_or_dir) ? path_or_dir / "manifest.json" : path_or_dir;
    std::ifstream f(file);
    if (!f) throw IoError("cannot open manifest " + file.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + file.string() + ": " + e.what());
    }
    Manifest m;
    m.root = file.parent_path();
    try {
        m.base_seed = j.value("base_seed", std::uint64_t{0});
        m.height = j.value("height", 64);
        m.width = j.value("width", 64);
        m.frames = j.value("frames", 8);
        for (const auto& c : j.at("clips")) m.clips.push_back(record_from_json(c));
    } catch (const json::exception& e) {
        throw IoError("invalid manifest " + file.string() + ": " + e.what());
    }
    return m;
}

SynthClip load_clip(const Manifest& m, const ClipRecord& rec) {
    SynthClip c;
    for (const auto& p : rec.frames) c.color.frames.push_back(load_png(m.root / p));
    if (!rec.gray_frames.empty()) {
        for (const auto& p : rec.gray_frames) c.gray.frames.push_back(load_png(m.root / p));
    } else {
        for (const auto& f : c.color.frames) c.gray.frames.push_back(to_grayscale(f));
    }
    for (const auto& p : rec.flows) c.flow_fwd.push_back(read_flo(m.root / p));
    for (const auto& p : rec.flows_bwd) c.flow_bwd.push_back(read_flo(m.root / p));
    for (const auto& p : rec.occlusions) c.occ_fwd.push_back(OcclusionMask::from_image(load_png(m.root / p)));
    for (const auto& p : rec.occlusions_bwd) c.occ_bwd.push_back(OcclusionMask::from_image(load_png(m.root / p)));
    c.color.validate();
    c.gray.validate();
    return c;
}

}  // namespace chromaflow
