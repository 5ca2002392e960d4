#include "chromaflow/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace chromaflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Strict reader for one config object: typed lookups, unknown keys rejected.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
    }

    template <typename T>
    bool get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return false;
        const json& v = j_.at(key);
        bool ok = true;
        if constexpr (std::is_same_v<T, bool>) {
            ok = v.is_boolean();
        } else if constexpr (std::is_integral_v<T>) {
            ok = v.is_number_integer() || v.is_number_unsigned();
        } else if constexpr (std::is_floating_point_v<T>) {
            ok = v.is_number();
        } else if constexpr (std::is_same_v<T, std::string>) {
            ok = v.is_string();
        }
        if (!ok) throw ConfigError(path_ + "." + key + " has the wrong type");
        try {
            out = v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
        return true;
    }

    Reader section(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Reader(j_.contains(key) ? j_.at(key) : empty, path_ + "." + key);
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<float> default_betas(int d) {
    std::vector<float> b;
    float v = 0.30f;
    for (int i = 0; i < d; ++i, v *= 0.5f) b.push_back(v);
    return b;
}

}  // namespace

void RunConfig::sync() {
    train.model.candidates = model.candidates;
    train.model.reduce_channels = model.reduce_channels;
    train.diversity.d = model.candidates;
    ConfidenceParams conf;
    conf.alpha = model.confidence_alpha;
    conf.zero_confidence_at_occlusion = model.zero_confidence_at_occlusion;
    train.confidence = conf;
    infer.confidence = conf;
    train.flow = flow;
    infer.flow = flow;
    train.seed = seed;
    train.knn.seed = seed;
    infer.workers = workers;
    eval.workers = workers;
}

void RunConfig::validate() const {
    if (data.clips < 1) throw ConfigError("data.clips must be >= 1");
    if (data.frames < 1) throw ConfigError("data.frames must be >= 1");
    if (data.height < 4 || data.width < 4 || data.height % 4 || data.width % 4) {
        throw ConfigError("data.height and data.width must be positive multiples of 4");
    }
    if (model.candidates < 1 || model.reduce_channels < 1) throw ConfigError("model sizes must be >= 1");
    if (flow.levels < 1 || flow.iterations < 0 || flow.warps < 1 || !(flow.smoothness > 0.0f)) {
        throw ConfigError("flow: levels >= 1, iterations >= 0, warps >= 1 and smoothness > 0 required");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (!(eval.distinct_threshold >= 0.0)) throw ConfigError("eval.distinct_threshold must be >= 0");
    try {
        train.validate();
        infer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    Reader root(j, "config");
    root.get("seed", c.seed);
    root.get("workers", c.workers);

    Reader data = root.section("data");
    data.get("clips", c.data.clips);
    data.get("height", c.data.height);
    data.get("width", c.data.width);
    data.get("frames", c.data.frames);
    data.finish();

    Reader model = root.section("model");
    model.get("candidates", c.model.candidates);
    model.get("reduce_channels", c.model.reduce_channels);
    model.get("feature_seed", c.model.feature_seed);
    model.get("confidence_alpha", c.model.confidence_alpha);
    model.get("zero_confidence_at_occlusion", c.model.zero_confidence_at_occlusion);
    model.finish();

    TrainConfig& t = c.train;
    Reader train = root.section("train");
    train.get("epochs", t.epochs);
    train.get("images_per_epoch", t.images_per_epoch);
    train.get("pairs_per_epoch", t.pairs_per_epoch);
    train.get("joint_epochs", t.joint_epochs);
    train.get("joint_pairs_per_epoch", t.joint_pairs_per_epoch);
    train.get("lr", t.lr);
    train.get("joint_f_lr_scale", t.joint_f_lr_scale);
    train.get("lambda_t", t.lambda_t);
    train.get("use_gt_flow", t.use_gt_flow);
    train.get("validation_pairs", t.validation_pairs);
    train.get("checkpoint_every", t.checkpoint_every);
    Reader weights = train.section("weights");
    weights.get("bilateral", t.weights.bilateral);
    weights.get("temporal_f", t.weights.temporal_f);
    weights.get("temporal_g", t.weights.temporal_g);
    weights.get("diversity", t.weights.diversity);
    weights.finish();
    Reader knn = train.section("knn");
    knn.get("k", t.knn.k);
    knn.get("lambda", t.knn.lambda);
    knn.get("sample_size", t.knn.sample_size);
    knn.finish();
    Reader div = train.section("diversity");
    if (!div.get("betas", t.diversity.betas)) t.diversity.betas = default_betas(c.model.candidates);
    div.get("rank_sorted", t.diversity.rank_sorted);
    div.finish();
    train.finish();

    Reader infer = root.section("infer");
    infer.get("lambda_t", c.infer.lambda_t);
    infer.get("passes", c.infer.passes);
    std::string mode = to_string(c.infer.select_mode);
    if (infer.get("select_mode", mode)) {
        try {
            c.infer.select_mode = select_mode_from_string(mode);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("infer.select_mode: ") + e.what());
        }
    }
    infer.get("select_index", c.infer.select_index);
    infer.get("replace_luminance", c.infer.replace_luminance);
    infer.finish();

    Reader eval = root.section("eval");
    eval.get("distinct_threshold", c.eval.distinct_threshold);
    eval.finish();

    Reader flow = root.section("flow");
    flow.get("levels", c.flow.levels);
    flow.get("iterations", c.flow.iterations);
    flow.get("smoothness", c.flow.smoothness);
    flow.get("warps", c.flow.warps);
    flow.finish();
    root.finish();

    c.sync();
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

namespace {

// Shortest decimal that reads back as the same float, so echoes show 0.1 not 0.100000001.
double tidy(float v) {
    for (int digits = 6; digits <= 9; ++digits) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.*g", digits, static_cast<double>(v));
        if (std::strtof(buf, nullptr) == v) return std::strtod(buf, nullptr);
    }
    return v;
}

std::vector<double> tidy(const std::vector<float>& v) {
    std::vector<double> out;
    for (float x : v) out.push_back(tidy(x));
    return out;
}

json config_json(const RunConfig& c) {
    const TrainConfig& t = c.train;
    return json{
        {"seed", c.seed},
        {"workers", c.workers},
        {"data", {{"clips", c.data.clips}, {"height", c.data.height}, {"width", c.data.width}, {"frames", c.data.frames}}},
        {"model",
         {{"candidates", c.model.candidates},
          {"reduce_channels", c.model.reduce_channels},
          {"feature_seed", c.model.feature_seed},
          {"confidence_alpha", tidy(c.model.confidence_alpha)},
          {"zero_confidence_at_occlusion", c.model.zero_confidence_at_occlusion}}},
        {"train",
         {{"epochs", t.epochs},
          {"images_per_epoch", t.images_per_epoch},
          {"pairs_per_epoch", t.pairs_per_epoch},
          {"joint_epochs", t.joint_epochs},
          {"joint_pairs_per_epoch", t.joint_pairs_per_epoch},
          {"lr", tidy(t.lr)},
          {"joint_f_lr_scale", tidy(t.joint_f_lr_scale)},
          {"lambda_t", t.lambda_t},
          {"use_gt_flow", t.use_gt_flow},
          {"validation_pairs", t.validation_pairs},
          {"checkpoint_every", t.checkpoint_every},
          {"weights",
           {{"bilateral", t.weights.bilateral},
            {"temporal_f", t.weights.temporal_f},
            {"temporal_g", t.weights.temporal_g},
            {"diversity", t.weights.diversity}}},
          {"knn", {{"k", t.knn.k}, {"lambda", t.knn.lambda}, {"sample_size", t.knn.sample_size}}},
          {"diversity", {{"betas", tidy(t.diversity.betas)}, {"rank_sorted", t.diversity.rank_sorted}}}}},
        {"infer",
         {{"lambda_t", c.infer.lambda_t},
          {"passes", c.infer.passes},
          {"select_mode", to_string(c.infer.select_mode)},
          {"select_index", c.infer.select_index},
          {"replace_luminance", c.infer.replace_luminance}}},
        {"eval", {{"distinct_threshold", c.eval.distinct_threshold}}},
        {"flow",
         {{"levels", c.flow.levels},
          {"iterations", c.flow.iterations},
          {"smoothness", tidy(c.flow.smoothness)},
          {"warps", c.flow.warps}}}};
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return config_json(cfg).dump(2); }

namespace {

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + p.string());
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json provenance(const RunConfig& cfg) { return json{{"config", config_json(cfg)}, {"seed", cfg.seed}}; }

void save_weights_with_sidecar(const nn::NetworkWeights& w, const fs::path& p, const RunConfig& cfg,
                               const std::string& role) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    nn::save_weights(w, p);
    json side = provenance(cfg);
    side["network"] = role;
    side["fingerprint"] = w.fingerprint();
    side["parameters"] = w.parameter_count();
    write_text(fs::path(p.string() + ".json"), side.dump(2) + "\n");
}

// Options every subcommand shares; applied after the config file.
struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    int workers = 0;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* workers_opt = nullptr;

    void add(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run configuration");
        seed_opt = app->add_option("--seed", seed, "Seed (overrides CHROMAFLOW_SEED and the config)");
        workers_opt = app->add_option("--workers", workers, "Cap on data-parallel workers");
    }

    RunConfig base() const {
        RunConfig c = config_path.empty() ? config_from_json("{}") : load_config(config_path);
        if (const char* env = std::getenv("CHROMAFLOW_SEED")) {
            try {
                std::size_t used = 0;
                const std::string s(env);
                c.seed = std::stoull(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                throw ConfigError("CHROMAFLOW_SEED must be an unsigned integer");
            }
        }
        if (seed_opt->count()) c.seed = seed;
        if (workers_opt->count()) c.workers = workers;
        return c;
    }
};

void finalize(RunConfig& c) {
    c.sync();
    c.validate();
}

Image as_gray(const Image& img) {
    if (img.channels() == 1) return img;
    if (img.channels() == 3) return to_grayscale(img);
    throw ImageError("expected a grayscale or RGB image");
}

// ---- synth-gen ----

struct SynthGen {
    Common common;
    int clips = 0;
    std::string out;
    CLI::Option* clips_opt = nullptr;

    void add(CLI::App& app) {
        CLI::App* s = app.add_subcommand("synth-gen", "Generate a synthetic moving-shape dataset");
        common.add(s);
        clips_opt = s->add_option("--clips", clips, "Number of clips");
        s->add_option("--out", out, "Output directory")->required();
    }

    int run(std::ostream& os) {
        RunConfig c = common.base();
        if (clips_opt->count()) c.data.clips = clips;
        finalize(c);
        DatasetOptions opts;
        opts.height = c.data.height;
        opts.width = c.data.width;
        opts.frames = c.data.frames;
        const Manifest m = make_dataset(static_cast<std::size_t>(c.data.clips), c.seed, out, opts);
        write_text(fs::path(out) / "run.json", provenance(c).dump(2) + "\n");
        os << "wrote " << m.clips.size() << " clips to " << out << "\n";
        return kOk;
    }
};

// ---- flow-estimate ----

struct FlowEstimate {
    Common common;
    std::string a, b, out;

    void add(CLI::App& app) {
        CLI::App* s = app.add_subcommand("flow-estimate", "Estimate optical flow from frame A into frame B");
        common.add(s);
        s->add_option("in_a", a, "Reference frame (PNG)")->required();
        s->add_option("in_b", b, "Target frame (PNG)")->required();
        s->add_option("out", out, "Output .flo path")->required();
    }

    int run(std::ostream& os) {
        RunConfig c = common.base();
        finalize(c);
        const FlowField f = estimate_flow(as_gray(load_png(a)), as_gray(load_png(b)), c.flow);
        write_flo(f, out);
        os << "wrote " << out << "\n";
        return kOk;
    }
};

// ---- train ----

struct Train {
    Common common;
    std::string data, out, phase = "both", init_f;
    int epochs = 0, joint_epochs = 0;
    float lr = 0.0f;
    CLI::Option *epochs_opt = nullptr, *joint_opt = nullptr, *lr_opt = nullptr;

    void add(CLI::App& app) {
        CLI::App* s = app.add_subcommand("train", "Train f, then g jointly with f");
        common.add(s);
        s->add_option("--data", data, "Dataset directory or manifest.json")->required();
        s->add_option("--out", out, "Checkpoint directory")->required();
        s->add_option("--phase", phase, "f | joint | both")->check(CLI::IsMember({"f", "joint", "both"}));
        s->add_option("--init-f", init_f, "Starting weights for f (required for --phase joint without out/f.cwf)");
        epochs_opt = s->add_option("--epochs", epochs, "Phase-one epochs");
        joint_opt = s->add_option("--joint-epochs", joint_epochs, "Joint-phase epochs");
        lr_opt = s->add_option("--lr", lr, "Learning rate");
    }

    int run(std::ostream& os) {
        RunConfig c = common.base();
        if (epochs_opt->count()) c.train.epochs = epochs;
        if (joint_opt->count()) c.train.joint_epochs = joint_epochs;
        if (lr_opt->count()) c.train.lr = lr;
        finalize(c);

        const Manifest m = load_manifest(data);
        const nn::FeatureExtractor phi(c.model.feature_seed);
        const fs::path dir(out);
        fs::create_directories(dir);
        write_text(dir / "run.json", provenance(c).dump(2) + "\n");

        std::ofstream curve(dir / "loss.jsonl", std::ios::binary);
        if (!curve) throw IoError("cannot write " + (dir / "loss.jsonl").string());
        curve << json{{"record", "config"}, {"config", config_json(c)}, {"seed", c.seed}}.dump() << "\n";
        const std::string fp = nn::ColorizerNet::expected_fingerprint(c.train.model);

        auto on_epoch = [&](const EpochRecord& r, const TrainState& s) {
            curve << to_json_line(r) << "\n";
            curve.flush();
            os << to_json_line(r) << "\n";
            const int every = c.train.checkpoint_every;
            if (every > 0 && r.epoch > 0 && r.epoch % every == 0) {
                char name[64];
                std::snprintf(name, sizeof(name), "%s_epoch_%03d", r.phase.c_str(), r.epoch);
                if (s.f) save_weights_with_sidecar(*s.f, dir / "checkpoints" / (std::string(name) + "_f.cwf"), c, "f");
                if (s.g) save_weights_with_sidecar(*s.g, dir / "checkpoints" / (std::string(name) + "_g.cwf"), c, "g");
            }
        };

        std::optional<nn::NetworkWeights> f;
        if (!init_f.empty()) f = nn::load_weights(init_f, fp);
        if (phase == "f" || phase == "both") {
            f = train_colorizer(m, c.train, phi, nullptr, on_epoch, f ? &*f : nullptr);
            save_weights_with_sidecar(*f, dir / "f.cwf", c, "f");
        }
        if (phase == "joint" || phase == "both") {
            if (!f) {
                if (!fs::exists(dir / "f.cwf")) throw ConfigError("--phase joint needs --init-f or an existing f.cwf");
                f = nn::load_weights(dir / "f.cwf", fp);
            }
            const JointResult jr = train_joint(m, *f, c.train, phi, nullptr, on_epoch);
            save_weights_with_sidecar(jr.f, dir / "f.cwf", c, "f");
            save_weights_with_sidecar(jr.g, dir / "g.cwf", c, "g");
        }
        if (!curve) throw IoError("cannot write " + (dir / "loss.jsonl").string());
        os << "wrote checkpoints to " << out << "\n";
        return kOk;
    }
};

// ---- colorize ----

struct Colorize {
    Common common;
    std::string weights, input, manifest, split = "test", out, flows;
    bool all_candidates = false, dataset_flows = false;
    int passes = 0, select_index = 0;
    std::string select_mode;
    CLI::Option *passes_opt = nullptr, *mode_opt = nullptr, *index_opt = nullptr;

    void add(CLI::App& app) {
        CLI::App* s = app.add_subcommand("colorize", "Colorize grayscale frames");
        common.add(s);
        s->add_option("--weights", weights, "Checkpoint directory holding f.cwf (and g.cwf)")->required();
        auto* in = s->add_option("--input", input, "Directory of frames 000000.png ...");
        auto* man = s->add_option("--manifest", manifest, "Dataset directory or manifest.json");
        in->excludes(man);
        s->add_option("--split", split, "Manifest split")->check(CLI::IsMember({"train", "val", "test"}));
        s->add_option("--out", out, "Output directory")->required();
        s->add_option("--flows", flows, "Directory with fwd/ and bwd/ .flo files for --input");
        s->add_flag("--dataset-flows", dataset_flows, "Use the manifest's flow files for adjacent pairs");
        s->add_flag("--all-candidates", all_candidates, "Write every candidate stream");
        passes_opt = s->add_option("--passes", passes, "Refinement passes");
        mode_opt = s->add_option("--select-mode", select_mode, "max_saturation | index_k | all");
        index_opt = s->add_option("--select-index", select_index, "Candidate index for index_k");
    }

    static ClipFlows read_flows(const fs::path& dir, std::size_t frames) {
        ClipFlows f;
        for (std::size_t t = 0; t + 1 < frames; ++t) {
            char name[32];
            std::snprintf(name, sizeof(name), "%06zu.flo", t);
            f.fwd.push_back(read_flo(dir / "fwd" / name));
            f.bwd.push_back(read_flo(dir / "bwd" / name));
        }
        return f;
    }

    void write_clip(const fs::path& dir, const ColorizeResult& r, const RunConfig& c, const std::string& id) const {
        save_video_dir(r.selected_stream(), dir / "selected");
        for (std::size_t k = 0; k < r.passes.size(); ++k) {
            save_video_dir(r.passes[k][static_cast<std::size_t>(r.selected)], dir / "passes" / ("pass_" + std::to_string(k)));
        }
        if (all_candidates || c.infer.select_mode == SelectMode::All) {
            for (std::size_t i = 0; i < r.final_candidates().size(); ++i) {
                save_video_dir(r.final_candidates()[i], dir / "candidates" / ("candidate_" + std::to_string(i)));
            }
        }
        json sel = provenance(c);
        sel["clip_id"] = id;
        sel["selected_index"] = r.selected;
        sel["select_mode"] = to_string(c.infer.select_mode);
        sel["mean_saturation"] = r.mean_saturation;
        sel["frames"] = r.selected_stream().size();
        sel["passes"] = r.passes.size() - 1;
        write_text(dir / "selection.json", sel.dump(2) + "\n");
    }

    int run(std::ostream& os) {
        RunConfig c = common.base();
        if (passes_opt->count()) c.infer.passes = passes;
        if (mode_opt->count()) {
            try {
                c.infer.select_mode = select_mode_from_string(select_mode);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        if (index_opt->count()) c.infer.select_index = select_index;
        c.infer.quantize_output = true;
        finalize(c);
        if (input.empty() == manifest.empty()) throw ConfigError("colorize needs exactly one of --input or --manifest");

        const fs::path wdir(weights);
        nn::ColorizerNet f(c.train.model,
                           nn::load_weights(wdir / "f.cwf", nn::ColorizerNet::expected_fingerprint(c.train.model)));
        nn::RefinerNet g = fs::exists(wdir / "g.cwf")
                               ? nn::RefinerNet(nn::load_weights(wdir / "g.cwf",
                                                                 nn::RefinerNet::expected_fingerprint(c.model.reduce_channels)),
                                                c.model.reduce_channels)
                               : nn::RefinerNet(c.model.reduce_channels);
        const nn::FeatureExtractor phi(c.model.feature_seed);

        if (!input.empty()) {
            VideoClip raw = load_video_dir(input);
            VideoClip gray;
            gray.frame_rate = raw.frame_rate;
            for (const auto& fr : raw.frames) gray.frames.push_back(as_gray(fr));
            std::optional<ClipFlows> cf;
            if (!flows.empty()) cf = read_flows(flows, gray.size());
            const ColorizeResult r = colorize_video(gray, f, g, phi, c.infer, cf ? &*cf : nullptr);
            write_clip(out, r, c, fs::path(input).filename().string());
            os << "colorized " << gray.size() << " frames; selected candidate " << r.selected << "\n";
            return kOk;
        }

        const Manifest m = load_manifest(manifest);
        for (const ClipRecord* rec : m.clips_in(split_from_string(split))) {
            const SynthClip clip = load_clip(m, *rec);
            std::optional<ClipFlows> cf;
            if (dataset_flows) cf = ClipFlows{clip.flow_fwd, clip.flow_bwd};
            const ColorizeResult r = colorize_video(clip.gray, f, g, phi, c.infer, cf ? &*cf : nullptr);
            write_clip(fs::path(out) / rec->clip_id, r, c, rec->clip_id);
            os << rec->clip_id << ": selected candidate " << r.selected << "\n";
        }
        return kOk;
    }
};

// ---- eval ----

struct Eval {
    Common common;
    std::string manifest, split = "test", colorized, out;

    void add(CLI::App& app) {
        CLI::App* s = app.add_subcommand("eval", "Score colorized clips against the dataset truth");
        common.add(s);
        s->add_option("--manifest", manifest, "Dataset directory or manifest.json")->required();
        s->add_option("--split", split, "Manifest split")->check(CLI::IsMember({"train", "val", "test"}));
        s->add_option("--colorized", colorized, "Output directory of colorize --manifest")->required();
        s->add_option("--out", out, "Report path (JSON)")->required();
    }

    int run(std::ostream& os) {
        RunConfig c = common.base();
        finalize(c);
        const Manifest m = load_manifest(manifest);
        std::vector<ClipStreams> streams;
        std::vector<ClipTruth> truth;
        for (const ClipRecord* rec : m.clips_in(split_from_string(split))) {
            const fs::path dir = fs::path(colorized) / rec->clip_id;
            SynthClip clip = load_clip(m, *rec);
            ClipStreams s;
            s.clip_id = rec->clip_id;
            s.selected = load_video_dir(dir / "selected");
            try {
                s.selected_index = json::parse(read_text(dir / "selection.json")).at("selected_index").get<int>();
            } catch (const json::exception& e) {
                throw IoError("malformed " + (dir / "selection.json").string() + ": " + e.what());
            }
            for (std::size_t k = 0; fs::is_directory(dir / "passes" / ("pass_" + std::to_string(k))); ++k) {
                s.passes.push_back(load_video_dir(dir / "passes" / ("pass_" + std::to_string(k))));
            }
            for (std::size_t i = 0; fs::is_directory(dir / "candidates" / ("candidate_" + std::to_string(i))); ++i) {
                s.candidates.push_back(load_video_dir(dir / "candidates" / ("candidate_" + std::to_string(i))));
            }
            streams.push_back(std::move(s));
            truth.push_back({std::move(clip.color), std::move(clip.gray), std::move(clip.flow_fwd), std::move(clip.occ_fwd)});
        }
        if (streams.empty()) throw ConfigError("split '" + split + "' has no clips");
        const nn::FeatureExtractor phi(c.model.feature_seed);
        EvalReport r = evaluate(streams, truth, phi, c.eval);
        r.config_json = config_json(c).dump();
        r.seed = c.seed;
        write_text(out, to_json(r) + "\n");
        os << "psnr " << r.psnr_mean << " dB (gray baseline " << r.gray_baseline_psnr_mean << " dB), warp error "
           << r.warp_error_mean << "\n";
        return kOk;
    }
};

// ---- inspect-knn ----

struct InspectKnn {
    Common common;
    std::string frame, out;
    int k = 0, sample_size = 0;
    double lambda = 0.0;
    CLI::Option *k_opt = nullptr, *n_opt = nullptr, *l_opt = nullptr;

    void add(CLI::App& app) {
        CLI::App* s = app.add_subcommand("inspect-knn", "Dump the bilateral KNN graph of one frame");
        common.add(s);
        s->add_option("--frame", frame, "RGB frame (PNG)")->required();
        s->add_option("--out", out, "Output directory")->required();
        k_opt = s->add_option("--k", k, "Neighbours per node");
        n_opt = s->add_option("--sample-size", sample_size, "Sampled nodes");
        l_opt = s->add_option("--lambda", lambda, "Spatial weight");
    }

    static void draw_line(Image& img, int y0, int x0, int y1, int x1, const Rgb& color) {
        const int steps = std::max(std::abs(y1 - y0), std::abs(x1 - x0));
        for (int s = 0; s <= steps; ++s) {
            const double t = steps ? static_cast<double>(s) / steps : 0.0;
            const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
            const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = color[static_cast<std::size_t>(ch)];
        }
    }

    int run(std::ostream& os) {
        RunConfig c = common.base();
        if (k_opt->count()) c.train.knn.k = k;
        if (n_opt->count()) c.train.knn.sample_size = sample_size;
        if (l_opt->count()) c.train.knn.lambda = lambda;
        finalize(c);
        Image img = load_png(frame);
        if (img.channels() == 1) img = gray_to_rgb(img);
        const KnnGraph g = build_knn_graph(img, c.train.knn);

        json dump = provenance(c);
        dump["height"] = img.height();
        dump["width"] = img.width();
        dump["k"] = c.train.knn.k;
        dump["lambda"] = c.train.knn.lambda;
        dump["nodes"] = g.nodes;
        dump["edges"] = g.edges;
        const fs::path dir(out);
        write_text(dir / "knn_edges.json", dump.dump() + "\n");

        Image overlay(img.height(), img.width(), 3);
        const Image gray = to_grayscale(img);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                for (int ch = 0; ch < 3; ++ch) overlay.at(y, x, ch) = 0.5f * gray.at(y, x);
            }
        }
        const int w = img.width();
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
            for (int j : g.edges[i]) {
                const int a = g.nodes[i], b = g.nodes[static_cast<std::size_t>(j)];
                draw_line(overlay, a / w, a % w, b / w, b % w, {1.0f, 0.85f, 0.1f});
            }
        }
        for (int node : g.nodes) {
            for (int ch = 0; ch < 3; ++ch) overlay.at(node / w, node % w, ch) = img.at(node / w, node % w, ch);
        }
        save_png(overlay, dir / "knn_overlay.png");
        os << "wrote " << g.edge_count() << " edges over " << g.nodes.size() << " nodes to " << out << "\n";
        return kOk;
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"chromaflow: automatic video colorization"};
    app.name("chromaflow");
    app.require_subcommand(1);
    SynthGen synth;
    FlowEstimate flow;
    Train train;
    Colorize colorize;
    Eval eval;
    InspectKnn knn;
    synth.add(app);
    flow.add(app);
    train.add(app);
    colorize.add(app);
    eval.add(app);
    knn.add(app);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (app.got_subcommand("synth-gen")) return synth.run(out);
        if (app.got_subcommand("flow-estimate")) return flow.run(out);
        if (app.got_subcommand("train")) return train.run(out);
        if (app.got_subcommand("colorize")) return colorize.run(out);
        if (app.got_subcommand("eval")) return eval.run(out);
        if (app.got_subcommand("inspect-knn")) return knn.run(out);
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::domain_error& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const nn::WeightsError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const FlowError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const ImageError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace chromaflow::cli
