#include "chromaflow/pipeline.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

namespace chromaflow {

using nn::Tape;
using nn::Tensor;
using nn::Var;

void TrainConfig::validate() const {
    if (epochs < 0 || joint_epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (images_per_epoch < 0 || pairs_per_epoch < 0 || joint_pairs_per_epoch < 0) {
        throw std::invalid_argument("train: sample counts must be >= 0");
    }
    if (epochs > 0 && images_per_epoch + pairs_per_epoch == 0) {
        throw std::invalid_argument("train: an epoch needs at least one sample");
    }
    if (!(lr >= 0.0f) || !(joint_f_lr_scale >= 0.0f)) throw std::invalid_argument("train: learning rates must be >= 0");
    if (lambda_t < 1) throw std::invalid_argument("train: lambda_t must be >= 1");
    if (validation_pairs < 0 || checkpoint_every < 0) throw std::invalid_argument("train: negative count");
    for (double w : {weights.bilateral, weights.temporal_f, weights.temporal_g, weights.diversity}) {
        if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("train: loss weights must be finite and >= 0");
    }
    if (diversity.d != model.candidates) throw std::invalid_argument("train: diversity d must equal model candidates");
    knn.validate();
    diversity.validate();
    confidence.validate();
}

std::string to_json_line(const EpochRecord& r) {
    const nlohmann::json j{{"phase", r.phase},
                           {"epoch", r.epoch},
                           {"bilateral", r.bilateral},
                           {"diversity", r.diversity},
                           {"temporal_f", r.temporal_f},
                           {"temporal_g", r.temporal_g},
                           {"validation_temporal_g", r.validation_temporal_g},
                           {"total", r.total},
                           {"steps", r.steps},
                           {"wall_seconds", r.wall_seconds}};
    return j.dump();
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " loss");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Lazily loaded clips of one split, kept in memory for the whole run.
class ClipCache {
public:
    ClipCache(const Manifest& m, std::vector<const ClipRecord*> recs) : m_(m), recs_(std::move(recs)) {}

    std::size_t size() const { return recs_.size(); }
    const ClipRecord& record(std::size_t i) const { return *recs_[i]; }
    const SynthClip& clip(std::size_t i) {
        auto it = cache_.find(i);
        if (it == cache_.end()) it = cache_.emplace(i, load_clip(m_, *recs_[i])).first;
        return it->second;
    }

private:
    const Manifest& m_;
    std::vector<const ClipRecord*> recs_;
    std::map<std::size_t, SynthClip> cache_;
};

// Flow on frame a's grid into frame b plus its usable-pixel mask.
std::pair<FlowField, OcclusionMask> pair_flow(const SynthClip& clip, int a, int b, bool use_gt, const FlowConfig& fc) {
    if (use_gt && std::abs(a - b) == 1) {
        const auto t = static_cast<std::size_t>(std::min(a, b));
        if (b == a + 1 && t < clip.flow_fwd.size() && t < clip.occ_fwd.size()) {
            return {clip.flow_fwd[t], clip.occ_fwd[t]};
        }
        if (a == b + 1 && t < clip.flow_bwd.size() && t < clip.occ_bwd.size()) {
            return {clip.flow_bwd[t], clip.occ_bwd[t]};
        }
    }
    const Image& ga = clip.gray.frames[static_cast<std::size_t>(a)];
    const Image& gb = clip.gray.frames[static_cast<std::size_t>(b)];
    FlowField ab = estimate_flow(ga, gb, fc);
    FlowField ba = estimate_flow(gb, ga, fc);
    OcclusionMask mask = occlusion_mask(ab, ba);
    return {std::move(ab), std::move(mask)};
}

KnnParams frame_knn(const KnnParams& base, const ClipRecord& rec, std::size_t frame) {
    KnnParams p = base;
    p.seed = mix(mix(base.seed, rec.seed), frame);
    return p;
}

}  // namespace

FrameSample make_sample(const Image& gray, const Image& color, const nn::FeatureExtractor& phi, const KnnParams& knn) {
    FrameSample s;
    s.gray = gray;
    s.color = color;
    s.hypercolumn = phi.hypercolumn(gray);
    s.truth_features = phi.features(color);
    s.graph = build_knn_graph(color, knn);
    return s;
}

ColorizerTrainer::ColorizerTrainer(nn::ColorizerNet& f, const nn::FeatureExtractor& phi, const TrainConfig& cfg)
    : f_(f), phi_(phi), cfg_(cfg) {
    cfg_.validate();
}

Var ColorizerTrainer::image_terms(Tape& tape, const FrameSample& s, std::vector<Var>& cands, StepLosses& out) {
    cands = f_.forward(tape, tape.constant(nn::image_to_tensor(s.gray)), tape.constant(s.hypercolumn), true);
    Var bil = bilateral_loss(cands[0], s.graph);
    for (std::size_t i = 1; i < cands.size(); ++i) bil = nn::add(bil, bilateral_loss(cands[i], s.graph));
    bil = nn::mul_scalar(bil, 1.0f / static_cast<float>(cands.size()));
    Var div = diversity_loss(cands, tape.constant(s.truth_features), phi_, cfg_.diversity);
    out.bilateral += nn::item(bil);
    out.diversity += nn::item(div);
    return nn::add(nn::mul_scalar(bil, static_cast<float>(cfg_.weights.bilateral)),
                   nn::mul_scalar(div, static_cast<float>(cfg_.weights.diversity)));
}

void ColorizerTrainer::apply(Tape& tape, Var loss) {
    check_finite(nn::item(loss), "colorizer");
    f_.weights().zero_grad();
    tape.backward(loss);
    nn::AdamParams p;
    p.lr = cfg_.lr;
    nn::adam_step(f_.weights(), adam_, p);
}

StepLosses ColorizerTrainer::step_image(const FrameSample& s) {
    Tape tape;
    StepLosses out;
    std::vector<Var> cands;
    Var loss = image_terms(tape, s, cands, out);
    out.total = nn::item(loss);
    apply(tape, loss);
    return out;
}

StepLosses ColorizerTrainer::evaluate_image(const FrameSample& s) {
    Tape tape;
    StepLosses out;
    std::vector<Var> cands;
    out.total = nn::item(image_terms(tape, s, cands, out));
    return out;
}

StepLosses ColorizerTrainer::step_pair(const FrameSample& a, const FrameSample& b, const FlowField& flow,
                                       const OcclusionMask& mask) {
    Tape tape;
    StepLosses out;
    std::vector<Var> ca, cb;
    Var loss = nn::add(image_terms(tape, a, ca, out), image_terms(tape, b, cb, out));
    out.bilateral *= 0.5;
    out.diversity *= 0.5;
    loss = nn::mul_scalar(loss, 0.5f);
    Var temporal = tape.constant(Tensor::scalar(0.0f));
    for (std::size_t i = 0; i < ca.size(); ++i) temporal = nn::add(temporal, temporal_loss_f(ca[i], cb[i], flow, mask).loss);
    temporal = nn::mul_scalar(temporal, 1.0f / static_cast<float>(ca.size()));
    out.temporal_f = nn::item(temporal);
    loss = nn::add(loss, nn::mul_scalar(temporal, static_cast<float>(cfg_.weights.temporal_f)));
    out.total = nn::item(loss);
    apply(tape, loss);
    return out;
}

nn::NetworkWeights train_colorizer(const Manifest& m, const TrainConfig& cfg, const nn::FeatureExtractor& phi,
                                   std::vector<EpochRecord>* curve, const EpochCallback& on_epoch,
                                   const nn::NetworkWeights* init) {
    cfg.validate();
    ClipCache train(m, m.clips_in(Split::Train));
    if (train.size() == 0) throw std::invalid_argument("train_colorizer: manifest has no train clips");
    nn::ColorizerNet f = init ? nn::ColorizerNet(cfg.model, *init) : nn::ColorizerNet(cfg.model, mix(cfg.seed, 1));
    ColorizerTrainer trainer(f, phi, cfg);
    std::mt19937_64 rng(mix(cfg.seed, 2));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<bool> is_pair(static_cast<std::size_t>(cfg.images_per_epoch), false);
        is_pair.resize(is_pair.size() + static_cast<std::size_t>(cfg.pairs_per_epoch), true);
        std::shuffle(is_pair.begin(), is_pair.end(), rng);

        EpochRecord rec;
        rec.phase = "f";
        rec.epoch = epoch;
        std::size_t n_pairs = 0;
        for (bool pair : is_pair) {
            const std::size_t ci = std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng);
            const SynthClip& clip = train.clip(ci);
            const ClipRecord& cr = train.record(ci);
            const int frames = static_cast<int>(clip.color.size());
            StepLosses l;
            if (!pair || frames < 2) {
                const int t = std::uniform_int_distribution<int>(0, frames - 1)(rng);
                const auto ut = static_cast<std::size_t>(t);
                l = trainer.step_image(make_sample(clip.gray.frames[ut], clip.color.frames[ut], phi,
                                                   frame_knn(cfg.knn, cr, ut)));
            } else {
                const int t = std::uniform_int_distribution<int>(0, frames - 2)(rng);
                const bool forward = std::bernoulli_distribution(0.5)(rng);
                const int a = forward ? t : t + 1, b = forward ? t + 1 : t;
                const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
                auto [flow, mask] = pair_flow(clip, a, b, cfg.use_gt_flow, cfg.flow);
                l = trainer.step_pair(
                    make_sample(clip.gray.frames[ua], clip.color.frames[ua], phi, frame_knn(cfg.knn, cr, ua)),
                    make_sample(clip.gray.frames[ub], clip.color.frames[ub], phi, frame_knn(cfg.knn, cr, ub)), flow,
                    mask);
                rec.temporal_f += l.temporal_f;
                ++n_pairs;
            }
            rec.bilateral += l.bilateral;
            rec.diversity += l.diversity;
            rec.total += l.total;
            ++rec.steps;
        }
        if (rec.steps > 0) {
            const double n = static_cast<double>(rec.steps);
            rec.bilateral /= n;
            rec.diversity /= n;
            rec.total /= n;
        }
        if (n_pairs > 0) rec.temporal_f /= static_cast<double>(n_pairs);
        rec.wall_seconds = seconds_since(t0);
        if (curve) curve->push_back(rec);
        if (on_epoch) on_epoch(rec, {&f.weights(), nullptr});
    }
    return f.weights();
}

PairContext make_pair_context(const Image& gray_s, const Image& gray_t, const FlowField& flow,
                              const OcclusionMask& mask, const ConfidenceParams& params) {
    PairContext ctx;
    ctx.flow = flow;
    const WarpResult w = backward_warp(gray_t, flow);
    ctx.mask = mask & w.validity;
    ctx.gray_confidence = confidence_map(gray_s, w.image, ctx.mask, params);
    return ctx;
}

Var refine_candidate(Tape& tape, nn::RefinerNet& g, Var c_s, Var c_t, const PairContext& ctx,
                     const ConfidenceParams& params, bool trainable) {
    Var warped = nn::warp(c_t, ctx.flow);
    Var w_color = confidence_map(c_s, warped, mask_tensor(ctx.mask), params);
    Var w_gray = tape.constant(nn::image_to_tensor(ctx.gray_confidence));
    return g.forward(tape, c_s, warped, w_color, w_gray, trainable);
}

double joint_pair_loss(nn::ColorizerNet& f, nn::RefinerNet& g, const nn::FeatureExtractor& phi, const Image& gray_s,
                       const Image& gray_t, const Image& color_s, const PairContext& ctx, const ConfidenceParams& p) {
    Tape tape;
    const auto cs = f.forward(tape, tape.constant(nn::image_to_tensor(gray_s)), tape.constant(phi.hypercolumn(gray_s)),
                              false);
    const auto ct = f.forward(tape, tape.constant(nn::image_to_tensor(gray_t)), tape.constant(phi.hypercolumn(gray_t)),
                              false);
    Var truth = tape.constant(nn::image_to_tensor(color_s));
    double acc = 0.0;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        acc += nn::item(temporal_loss_g(refine_candidate(tape, g, cs[i], ct[i], ctx, p, false), truth));
    }
    return acc / static_cast<double>(cs.size());
}

std::vector<std::pair<int, int>> window_pairs(int frames, int lambda) {
    std::vector<std::pair<int, int>> out;
    for (int s = 0; s < frames; ++s) {
        for (int t = std::max(0, s - lambda); t <= std::min(frames - 1, s + lambda); ++t) {
            if (t != s) out.emplace_back(s, t);
        }
    }
    return out;
}

JointResult train_joint(const Manifest& m, const nn::NetworkWeights& f_weights, const TrainConfig& cfg,
                        const nn::FeatureExtractor& phi, std::vector<EpochRecord>* curve,
                        const EpochCallback& on_epoch, const nn::NetworkWeights* g_init) {
    cfg.validate();
    ClipCache train(m, m.clips_in(Split::Train));
    if (train.size() == 0) throw std::invalid_argument("train_joint: manifest has no train clips");
    bool any_pair = false;
    for (std::size_t i = 0; i < train.size(); ++i) any_pair = any_pair || train.record(i).frames.size() > 1;
    if (!any_pair) throw std::invalid_argument("train_joint: no frame pairs in the train split");

    nn::ColorizerNet f(cfg.model, f_weights);
    nn::RefinerNet g = g_init ? nn::RefinerNet(*g_init, cfg.model.reduce_channels)
                              : nn::RefinerNet(cfg.model.reduce_channels, mix(cfg.seed, 3));
    nn::AdamState adam_f, adam_g;
    std::mt19937_64 rng(mix(cfg.seed, 4));

    // Fixed validation pairs: adjacent frames of the val split (train if empty).
    auto val_recs = m.clips_in(Split::Val);
    if (val_recs.empty()) val_recs = m.clips_in(Split::Train);
    ClipCache val(m, val_recs);
    struct ValPair {
        std::size_t clip;
        int s, t;
        PairContext ctx;
    };
    std::vector<ValPair> val_pairs;
    for (std::size_t c = 0; c < val.size() && static_cast<int>(val_pairs.size()) < cfg.validation_pairs; ++c) {
        const SynthClip& clip = val.clip(c);
        for (int s = 0; s + 1 < static_cast<int>(clip.color.size()) &&
                        static_cast<int>(val_pairs.size()) < cfg.validation_pairs;
             s += 3) {
            auto [flow, mask] = pair_flow(clip, s, s + 1, cfg.use_gt_flow, cfg.flow);
            val_pairs.push_back({c, s, s + 1,
                                 make_pair_context(clip.gray.frames[static_cast<std::size_t>(s)],
                                                   clip.gray.frames[static_cast<std::size_t>(s) + 1], flow, mask,
                                                   cfg.confidence)});
        }
    }
    auto validation = [&] {
        if (val_pairs.empty()) return 0.0;
        double acc = 0.0;
        for (const auto& vp : val_pairs) {
            const SynthClip& clip = val.clip(vp.clip);
            acc += joint_pair_loss(f, g, phi, clip.gray.frames[static_cast<std::size_t>(vp.s)],
                                   clip.gray.frames[static_cast<std::size_t>(vp.t)],
                                   clip.color.frames[static_cast<std::size_t>(vp.s)], vp.ctx, cfg.confidence);
        }
        return acc / static_cast<double>(val_pairs.size());
    };

    {
        EpochRecord rec;
        rec.phase = "joint";
        rec.epoch = 0;
        const auto t0 = std::chrono::steady_clock::now();
        rec.validation_temporal_g = validation();
        rec.wall_seconds = seconds_since(t0);
        if (curve) curve->push_back(rec);
        if (on_epoch) on_epoch(rec, {&f.weights(), &g.weights()});
    }

    for (int epoch = 1; epoch <= cfg.joint_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.phase = "joint";
        rec.epoch = epoch;
        for (int step = 0; step < cfg.joint_pairs_per_epoch; ++step) {
            std::size_t ci;
            do {
                ci = std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng);
            } while (train.record(ci).frames.size() < 2);
            const SynthClip& clip = train.clip(ci);
            const auto pairs = window_pairs(static_cast<int>(clip.color.size()), cfg.lambda_t);
            const auto [s, t] = pairs[std::uniform_int_distribution<std::size_t>(0, pairs.size() - 1)(rng)];
            const auto us = static_cast<std::size_t>(s), ut = static_cast<std::size_t>(t);
            auto [flow, mask] = pair_flow(clip, s, t, cfg.use_gt_flow, cfg.flow);
            const PairContext ctx =
                make_pair_context(clip.gray.frames[us], clip.gray.frames[ut], flow, mask, cfg.confidence);

            Tape tape;
            const auto cs = f.forward(tape, tape.constant(nn::image_to_tensor(clip.gray.frames[us])),
                                      tape.constant(phi.hypercolumn(clip.gray.frames[us])), true);
            const auto ct = f.forward(tape, tape.constant(nn::image_to_tensor(clip.gray.frames[ut])),
                                      tape.constant(phi.hypercolumn(clip.gray.frames[ut])), true);
            Var truth = tape.constant(nn::image_to_tensor(clip.color.frames[us]));
            Var loss = tape.constant(Tensor::scalar(0.0f));
            for (std::size_t i = 0; i < cs.size(); ++i) {
                loss = nn::add(loss, temporal_loss_g(refine_candidate(tape, g, cs[i], ct[i], ctx, cfg.confidence, true),
                                                     truth));
            }
            loss = nn::mul_scalar(loss, 1.0f / static_cast<float>(cs.size()));
            const double value = nn::item(loss);
            check_finite(value, "refiner");
            f.weights().zero_grad();
            g.weights().zero_grad();
            tape.backward(nn::mul_scalar(loss, static_cast<float>(cfg.weights.temporal_g)));
            nn::AdamParams pg;
            pg.lr = cfg.lr;
            nn::adam_step(g.weights(), adam_g, pg);
            nn::AdamParams pf = pg;
            pf.lr = cfg.lr * cfg.joint_f_lr_scale;
            nn::adam_step(f.weights(), adam_f, pf);
            rec.temporal_g += value;
            ++rec.steps;
        }
        if (rec.steps > 0) rec.temporal_g /= static_cast<double>(rec.steps);
        rec.total = cfg.weights.temporal_g * rec.temporal_g;
        rec.validation_temporal_g = validation();
        rec.wall_seconds = seconds_since(t0);
        if (curve) curve->push_back(rec);
        if (on_epoch) on_epoch(rec, {&f.weights(), &g.weights()});
    }
    return {f.weights(), g.weights()};
}

std::string to_string(SelectMode m) {
    switch (m) {
        case SelectMode::MaxSaturation: return "max_saturation";
        case SelectMode::Index: return "index_k";
        case SelectMode::All: return "all";
    }
    return "max_saturation";
}

SelectMode select_mode_from_string(const std::string& s) {
    if (s == "max_saturation") return SelectMode::MaxSaturation;
    if (s == "index_k") return SelectMode::Index;
    if (s == "all") return SelectMode::All;
    throw std::invalid_argument("unknown select_mode '" + s + "'");
}

void InferConfig::validate() const {
    if (lambda_t < 0) throw std::invalid_argument("infer: lambda_t must be >= 0");
    if (passes < 0) throw std::invalid_argument("infer: passes must be >= 0");
    if (select_index < 0) throw std::invalid_argument("infer: select_index must be >= 0");
    if (workers < 1) throw std::invalid_argument("infer: workers must be >= 1");
    confidence.validate();
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

int select_by_saturation(const std::vector<VideoClip>& candidates, std::vector<double>* means) {
    if (candidates.empty()) throw std::invalid_argument("select_by_saturation: no candidates");
    std::vector<double> m;
    for (const auto& clip : candidates) {
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& frame : clip.frames) {
            const Image s = saturation_map(frame);
            for (float v : s.data()) acc += v;
            n += s.data().size();
        }
        m.push_back(n ? acc / static_cast<double>(n) : 0.0);
    }
    int best = 0;
    for (std::size_t i = 1; i < m.size(); ++i) {
        if (m[i] > m[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    if (means) *means = std::move(m);
    return best;
}

ColorizeResult colorize_video(const VideoClip& gray, nn::ColorizerNet& f, nn::RefinerNet& g,
                              const nn::FeatureExtractor& phi, const InferConfig& cfg, const ClipFlows* flows) {
    cfg.validate();
    gray.validate();
    if (gray.frames[0].channels() != 1) throw ImageError("colorize_video expects grayscale frames");
    const std::size_t n = gray.size();
    const auto d = static_cast<std::size_t>(f.candidates());
    if (cfg.select_mode == SelectMode::Index && static_cast<std::size_t>(cfg.select_index) >= d) {
        throw std::invalid_argument("infer: select_index out of range");
    }
    if (flows && (flows->fwd.size() != n - 1 || flows->bwd.size() != n - 1)) {
        throw FlowError("colorize_video: supplied flows do not match the frame count");
    }

    std::vector<std::vector<Image>> raw(n);
    parallel_for(n, cfg.workers, [&](std::size_t t) { raw[t] = f.colorize(gray.frames[t], phi); });
    std::vector<VideoClip> streams(d);
    for (std::size_t i = 0; i < d; ++i) {
        streams[i].frame_rate = gray.frame_rate;
        for (std::size_t t = 0; t < n; ++t) streams[i].frames.push_back(raw[t][i]);
    }

    auto postprocess = [&](const std::vector<VideoClip>& in) {
        std::vector<VideoClip> out = in;
        for (auto& clip : out) {
            for (std::size_t t = 0; t < n; ++t) {
                Image& fr = clip.frames[t];
                if (cfg.replace_luminance) fr = replace_luminance(fr, gray.frames[t]);
                if (cfg.quantize_output) fr = quantize_8bit(fr);
            }
        }
        return out;
    };

    ColorizeResult result;
    result.passes.push_back(postprocess(streams));

    if (cfg.passes > 0 && cfg.lambda_t > 0 && n > 1) {
        // Pair contexts for every (s, t) with 0 < |s - t| <= lambda.
        std::vector<std::vector<std::pair<std::size_t, PairContext>>> neighbours(n);
        const auto pairs = window_pairs(static_cast<int>(n), cfg.lambda_t);
        // Flows once per unordered pair (a < b): ab on a's grid into b, ba back.
        std::map<std::pair<int, int>, std::size_t> slot;
        std::vector<std::pair<int, int>> unordered;
        for (const auto& [s, t] : pairs) {
            if (s < t) {
                slot[{s, t}] = unordered.size();
                unordered.emplace_back(s, t);
            }
        }
        std::vector<std::pair<FlowField, FlowField>> pair_flows(unordered.size());
        parallel_for(unordered.size(), cfg.workers, [&](std::size_t k) {
            const auto a = static_cast<std::size_t>(unordered[k].first), b = static_cast<std::size_t>(unordered[k].second);
            if (flows && b == a + 1) {
                pair_flows[k] = {flows->fwd[a], flows->bwd[a]};
            } else {
                pair_flows[k] = {estimate_flow(gray.frames[a], gray.frames[b], cfg.flow),
                                 estimate_flow(gray.frames[b], gray.frames[a], cfg.flow)};
            }
        });
        std::vector<PairContext> contexts(pairs.size());
        parallel_for(pairs.size(), cfg.workers, [&](std::size_t k) {
            const auto [s, t] = pairs[k];
            const auto& [ab, ba] = pair_flows[slot.at({std::min(s, t), std::max(s, t)})];
            const FlowField& st = s < t ? ab : ba;
            const FlowField& ts = s < t ? ba : ab;
            contexts[k] = make_pair_context(gray.frames[static_cast<std::size_t>(s)],
                                            gray.frames[static_cast<std::size_t>(t)], st, occlusion_mask(st, ts),
                                            cfg.confidence);
        });
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            neighbours[static_cast<std::size_t>(pairs[k].first)].emplace_back(static_cast<std::size_t>(pairs[k].second),
                                                                         std::move(contexts[k]));
        }

        for (int pass = 0; pass < cfg.passes; ++pass) {
            std::vector<VideoClip> next = streams;
            parallel_for(n * d, cfg.workers, [&](std::size_t job) {
                const std::size_t i = job / n, s = job % n;
                const auto& nb = neighbours[s];
                if (nb.empty()) return;
                Image acc(gray.frames[s].height(), gray.frames[s].width(), 3, 0.0f);
                for (const auto& [t, ctx] : nb) {
                    Tape tape;
                    Var cs = tape.constant(nn::image_to_tensor(streams[i].frames[s]));
                    Var ct = tape.constant(nn::image_to_tensor(streams[i].frames[t]));
                    const Image r = nn::tensor_to_image(refine_candidate(tape, g, cs, ct, ctx, cfg.confidence, false).value());
                    for (std::size_t k = 0; k < acc.data().size(); ++k) acc.data()[k] += r.data()[k];
                }
                const float inv = 1.0f / static_cast<float>(nb.size());
                for (float& v : acc.data()) v = std::clamp(v * inv, 0.0f, 1.0f);
                next[i].frames[s] = std::move(acc);
            });
            streams = std::move(next);
            result.passes.push_back(postprocess(streams));
        }
    } else {
        for (int pass = 0; pass < cfg.passes; ++pass) result.passes.push_back(result.passes.front());
    }

    const int by_saturation = select_by_saturation(result.passes.back(), &result.mean_saturation);
    result.selected = cfg.select_mode == SelectMode::Index ? cfg.select_index : by_saturation;
    return result;
}

}  // namespace chromaflow
