#include "chromaflow/nets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace chromaflow::nn {

namespace fs = std::filesystem;

Tensor& NetworkWeights::at(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end()) throw WeightsError("missing weight entry '" + name + "'");
    return it->second;
}

const Tensor& NetworkWeights::at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw WeightsError("missing weight entry '" + name + "'");
    return it->second;
}

std::string NetworkWeights::fingerprint() const {
    std::ostringstream os;
    for (const auto& [name, t] : entries) os << name << shape_string(t.shape()) << ';';
    return os.str();
}

void NetworkWeights::zero_grad() {
    for (auto& [_, t] : entries) t.zero_grad();
}

std::size_t NetworkWeights::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries) n += t.size();
    return n;
}

namespace {

template <class T>
void put_le(std::vector<char>& out, T v) {
    using U = std::make_unsigned_t<T>;
    const U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
}

class Reader {
public:
    Reader(std::vector<unsigned char> bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    template <class T>
    T le() {
        need(sizeof(T));
        std::make_unsigned_t<T> v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::make_unsigned_t<T>>(static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i));
        }
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw WeightsError("truncated weight file: " + name_);
    }
    std::vector<unsigned char> bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const NetworkWeights& w, const fs::path& path) {
    std::vector<char> out;
    out.insert(out.end(), {'C', 'W', 'F', '1'});
    put_le<std::uint32_t>(out, kWeightsVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.entries.size()));
    for (const auto& [name, t] : w.entries) {
        if (name.size() > 0xFFFF) throw WeightsError("weight name too long: " + name);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (int d : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

NetworkWeights load_weights(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    Reader r(std::vector<unsigned char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()),
             path.string());
    if (r.str(4) != "CWF1") throw WeightsError("bad weight file magic: " + path.string());
    const auto version = r.le<std::uint32_t>();
    if (version != kWeightsVersion) throw WeightsError("unsupported weight file version " + std::to_string(version));
    const auto count = r.le<std::uint32_t>();
    NetworkWeights w;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = r.le<std::uint16_t>();
        std::string name = r.str(len);
        const auto rank = r.le<std::uint8_t>();
        if (rank < 1 || rank > 4) throw WeightsError("bad tensor rank in " + path.string());
        Shape shape;
        for (int d = 0; d < rank; ++d) {
            const auto dim = r.le<std::uint32_t>();
            if (dim == 0 || dim > (1u << 24)) throw WeightsError("bad tensor dimension in " + path.string());
            shape.push_back(static_cast<int>(dim));
        }
        std::vector<float> data(numel(shape));
        for (float& v : data) v = std::bit_cast<float>(r.le<std::uint32_t>());
        if (!w.entries.emplace(name, Tensor(shape, std::move(data))).second) {
            throw WeightsError("duplicate weight entry '" + name + "'");
        }
    }
    if (!r.done()) throw WeightsError("trailing bytes in weight file: " + path.string());
    return w;
}

NetworkWeights load_weights(const fs::path& path, const std::string& expected_fingerprint) {
    NetworkWeights w = load_weights(path);
    if (w.fingerprint() != expected_fingerprint) {
        throw WeightsError("architecture fingerprint mismatch for " + path.string());
    }
    return w;
}

void adam_step(NetworkWeights& w, AdamState& state, const AdamParams& p) {
    ++state.step;
    const double c1 = 1.0 - std::pow(static_cast<double>(p.beta1), static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(static_cast<double>(p.beta2), static_cast<double>(state.step));
    for (auto& [name, t] : w.entries) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) {
            m.assign(t.size(), 0.0f);
            v.assign(t.size(), 0.0f);
        }
        if (m.size() != t.size()) throw ShapeError("adam_step: state shape mismatch for " + name);
        if (!t.has_grad()) continue;
        auto g = t.grad();
        auto d = t.data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            m[i] = p.beta1 * m[i] + (1.0f - p.beta1) * g[i];
            v[i] = p.beta2 * v[i] + (1.0f - p.beta2) * g[i] * g[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            d[i] -= static_cast<float>(p.lr * mh / (std::sqrt(vh) + p.eps));
        }
    }
}

Tensor image_to_tensor(const Image& img) {
    const int c = img.channels(), h = img.height(), w = img.width();
    Tensor t({c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto src = img.data();
    for (std::size_t p = 0; p < plane; ++p) {
        for (int ch = 0; ch < c; ++ch) t[static_cast<std::size_t>(ch) * plane + p] = src[p * c + ch];
    }
    return t;
}

Image tensor_to_image(std::span<const float> chw, int channels, int height, int width) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    if (chw.size() != plane * channels) throw ShapeError("tensor_to_image: size mismatch");
    std::vector<float> data(chw.size());
    for (std::size_t p = 0; p < plane; ++p) {
        for (int ch = 0; ch < channels; ++ch) {
            data[p * channels + ch] = std::clamp(chw[static_cast<std::size_t>(ch) * plane + p], 0.0f, 1.0f);
        }
    }
    return Image(height, width, channels, std::move(data));
}

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("tensor_to_image expects (C,H,W)");
    return tensor_to_image(t.data(), t.dim(0), t.dim(1), t.dim(2));
}

namespace {

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Tensor t(std::move(shape));
    for (float& v : t.data()) v = static_cast<float>(n(rng));
    return t;
}

void add_conv(NetworkWeights& w, const std::string& name, int out, int in, int k, std::mt19937_64& rng,
              double gain = 1.0, double bias_std = 0.0) {
    const double fan_in = static_cast<double>(in * k * k);
    w.entries[name + ".w"] = gaussian({out, in, k, k}, gain * std::sqrt(2.0 / fan_in), rng);
    w.entries[name + ".b"] = bias_std > 0.0 ? gaussian({out}, bias_std, rng) : Tensor({out}, 0.0f);
}

Var conv3(std::map<std::string, Var>& p, const std::string& name, Var x, Padding pad = Padding::Zero) {
    return conv2d(x, p.at(name + ".w"), p.at(name + ".b"), pad);
}

Var conv1(std::map<std::string, Var>& p, const std::string& name, Var x) {
    return conv1x1(x, p.at(name + ".w"), p.at(name + ".b"));
}

void check_divisible(int h, int w) {
    if (h % 4 != 0 || w % 4 != 0) throw ShapeError("frame height and width must be divisible by 4");
}

}  // namespace

std::map<std::string, Var> bind(Tape& tape, NetworkWeights& w, bool trainable) {
    std::map<std::string, Var> out;
    for (auto& [name, t] : w.entries) out.emplace(name, trainable ? tape.variable(t) : tape.constant(t));
    return out;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    add_conv(weights_, "phi.s1", kStageWidths[0], 3, 3, rng, 1.0, 0.2);
    add_conv(weights_, "phi.s2", kStageWidths[1], kStageWidths[0], 3, rng, 1.0, 0.2);
    add_conv(weights_, "phi.s3", kStageWidths[2], kStageWidths[1], 3, rng, 1.0, 0.2);
}

FeatureExtractor::FeatureExtractor(NetworkWeights weights) : weights_(std::move(weights)) {
    if (weights_.fingerprint() != FeatureExtractor().weights().fingerprint()) {
        throw WeightsError("feature extractor weights do not match the 3-stage bank layout");
    }
}

std::vector<Var> FeatureExtractor::stages(Var rgb) const {
    const Shape& s = rgb.shape();
    if (s.size() != 3 || s[0] != 3) throw ShapeError("feature extractor expects a (3,H,W) tensor");
    check_divisible(s[1], s[2]);
    Tape& tape = *rgb.tape;
    auto c = [&](const std::string& n) { return tape.constant(weights_.at(n)); };
    Var x = add_scalar(rgb, -0.5f);
    Var s1 = leaky_relu(conv2d(x, c("phi.s1.w"), c("phi.s1.b"), Padding::Replicate));
    Var s2 = leaky_relu(conv2d(downsample(s1), c("phi.s2.w"), c("phi.s2.b"), Padding::Replicate));
    Var s3 = leaky_relu(conv2d(downsample(s2), c("phi.s3.w"), c("phi.s3.b"), Padding::Replicate));
    return {channel_l2_normalize(s1), channel_l2_normalize(s2), channel_l2_normalize(s3)};
}

Var FeatureExtractor::forward(Var rgb) const {
    auto st = stages(rgb);
    return concat({st[0], upsample(st[1]), upsample(upsample(st[2]))});
}

Tensor FeatureExtractor::hypercolumn(const Image& gray) const {
    if (gray.channels() != 1) throw ShapeError("hypercolumn expects a grayscale image");
    return features(gray_to_rgb(gray));
}

Tensor FeatureExtractor::features(const Image& rgb) const {
    Tape tape;
    Var x = tape.constant(image_to_tensor(rgb));
    return forward(x).value();
}

void UNet::init(NetworkWeights& w, std::uint64_t seed, bool zero_head) const {
    std::mt19937_64 rng(seed);
    const int r = cfg_.reduce_channels;
    const int* wd = cfg_.widths;
    add_conv(w, "reduce", r, cfg_.in_channels, 1, rng);
    add_conv(w, "enc1.0", wd[0], r, 3, rng);
    add_conv(w, "enc1.1", wd[0], wd[0], 3, rng);
    add_conv(w, "enc2.0", wd[1], wd[0], 3, rng);
    add_conv(w, "enc2.1", wd[1], wd[1], 3, rng);
    add_conv(w, "enc3.0", wd[2], wd[1], 3, rng);
    add_conv(w, "enc3.1", wd[2], wd[2], 3, rng);
    add_conv(w, "dec2.0", wd[1], wd[2] + wd[1], 3, rng);
    add_conv(w, "dec2.1", wd[1], wd[1], 3, rng);
    add_conv(w, "dec1.0", wd[0], wd[1] + wd[0], 3, rng);
    add_conv(w, "dec1.1", wd[0], wd[0], 3, rng);
    add_conv(w, "head", cfg_.out_channels, wd[0], 1, rng, 0.1);
    if (zero_head) {
        std::fill(w.at("head.w").data().begin(), w.at("head.w").data().end(), 0.0f);
    }
}

Var UNet::forward(Tape&, std::map<std::string, Var>& p, Var x) const {
    auto block = [&](const std::string& name, Var in) {
        return leaky_relu(conv3(p, name + ".1", leaky_relu(conv3(p, name + ".0", in))));
    };
    Var r = leaky_relu(conv1(p, "reduce", x));
    Var e1 = block("enc1", r);
    Var e2 = block("enc2", downsample(e1));
    Var e3 = block("enc3", downsample(e2));
    Var d2 = block("dec2", concat({upsample(e3), e2}));
    Var d1 = block("dec1", concat({upsample(d2), e1}));
    return conv1(p, "head", d1);
}

ColorizerNet::ColorizerNet(ColorizerConfig cfg, std::uint64_t seed)
    : cfg_(cfg), trunk_(UNetConfig{1 + FeatureExtractor::kChannels, cfg.reduce_channels, {16, 32, 64}, 3 * cfg.candidates}) {
    if (cfg.candidates < 1) throw ShapeError("colorizer needs at least one candidate");
    trunk_.init(weights_, seed, false);
}

ColorizerNet::ColorizerNet(ColorizerConfig cfg, NetworkWeights weights)
    : cfg_(cfg),
      trunk_(UNetConfig{1 + FeatureExtractor::kChannels, cfg.reduce_channels, {16, 32, 64}, 3 * cfg.candidates}),
      weights_(std::move(weights)) {
    if (weights_.fingerprint() != expected_fingerprint(cfg)) {
        throw WeightsError("colorizer weights do not match the configured architecture");
    }
}

std::string ColorizerNet::expected_fingerprint(ColorizerConfig cfg) { return ColorizerNet(cfg, 0).fingerprint(); }

std::vector<Var> ColorizerNet::forward(Tape& tape, Var gray, Var hypercolumn, bool trainable) {
    const Shape& s = gray.shape();
    if (s.size() != 3 || s[0] != 1) throw ShapeError("colorizer expects a (1,H,W) gray tensor");
    check_divisible(s[1], s[2]);
    auto params = bind(tape, weights_, trainable);
    Var out = sigmoid(trunk_.forward(tape, params, concat({gray, hypercolumn})));
    std::vector<Var> cands;
    for (int i = 0; i < cfg_.candidates; ++i) cands.push_back(slice_channels(out, 3 * i, 3));
    return cands;
}

std::vector<Image> ColorizerNet::colorize(const Image& gray, const FeatureExtractor& phi) {
    if (gray.channels() != 1) throw ShapeError("colorize expects a grayscale image");
    check_divisible(gray.height(), gray.width());
    Tape tape;
    Var g = tape.constant(image_to_tensor(gray));
    Var h = tape.constant(phi.hypercolumn(gray));
    std::vector<Image> out;
    for (Var c : forward(tape, g, h, false)) out.push_back(tensor_to_image(c.value()));
    return out;
}

RefinerNet::RefinerNet(int reduce_channels, std::uint64_t seed)
    : trunk_(UNetConfig{kInputChannels, reduce_channels, {16, 32, 64}, 3}) {
    trunk_.init(weights_, seed, true);
}

RefinerNet::RefinerNet(NetworkWeights weights, int reduce_channels)
    : trunk_(UNetConfig{kInputChannels, reduce_channels, {16, 32, 64}, 3}), weights_(std::move(weights)) {
    if (weights_.fingerprint() != expected_fingerprint(reduce_channels)) {
        throw WeightsError("refiner weights do not match the configured architecture");
    }
}

std::string RefinerNet::expected_fingerprint(int reduce_channels) {
    return RefinerNet(reduce_channels, 0).fingerprint();
}

Var RefinerNet::forward(Tape& tape, Var c_s, Var warped_c_t, Var w_color, Var w_gray, bool trainable) {
    const Shape& s = c_s.shape();
    if (s.size() != 3 || s[0] != 3) throw ShapeError("refiner expects a (3,H,W) frame");
    if (warped_c_t.shape() != s || w_color.shape() != Shape{1, s[1], s[2]} || w_gray.shape() != Shape{1, s[1], s[2]}) {
        throw ShapeError("refiner inputs differ in size");
    }
    check_divisible(s[1], s[2]);
    auto params = bind(tape, weights_, trainable);
    Var corr = trunk_.forward(tape, params, concat({c_s, warped_c_t, w_color, w_gray}));
    return clamp01(add(c_s, corr));
}

Image RefinerNet::refine(const Image& c_s, const Image& warped_c_t, const Image& w_color, const Image& w_gray) {
    if (!c_s.same_shape(warped_c_t) || !c_s.same_size(w_color) || !c_s.same_size(w_gray)) {
        throw ShapeError("refiner inputs differ in size");
    }
    Tape tape;
    Var out = forward(tape, tape.constant(image_to_tensor(c_s)), tape.constant(image_to_tensor(warped_c_t)),
                      tape.constant(image_to_tensor(w_color)), tape.constant(image_to_tensor(w_gray)), false);
    return tensor_to_image(out.value());
}

}  // namespace chromaflow::nn
