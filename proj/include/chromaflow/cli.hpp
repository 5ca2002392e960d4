#pragma once

// Command-line front end: run configuration, subcommands and exit codes.

#include "chromaflow/evalkit.hpp"
#include "chromaflow/pipeline.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace chromaflow::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    int clips = 200;
    int height = 64;
    int width = 64;
    int frames = 8;
};

struct ModelConfig {
    int candidates = 4;
    int reduce_channels = 32;
    std::uint64_t feature_seed = nn::FeatureExtractor::kDefaultSeed;
    float confidence_alpha = 15.0f;
    bool zero_confidence_at_occlusion = true;
};

/// The JSON run document. Every field has a default; unknown keys are errors.
struct RunConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    InferConfig infer;
    EvalConfig eval;
    FlowConfig flow;
    std::uint64_t seed = 7;
    int workers = 1;

    /// Pushes shared fields (seed, model, flow, workers) into the sections.
    void sync();
    void validate() const;
};

RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::string& path);
/// Canonical echo of the effective configuration.
std::string config_to_json(const RunConfig& cfg);

/// Runs one command; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace chromaflow::cli
