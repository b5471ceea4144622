#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "c2vl/schedule.hpp"

namespace c2vl {

struct DatasetConfig {
    std::string path;
    std::string kind = "synth";  // ntu60|ntu120|pkummd2|synth
    std::string benchmark = "xsub";
    std::string split_file;  // default <path>/splits.json
    std::string bones_file;  // default: builtin table by joint count
};

struct LossModeConfig {
    std::string mode = "soft";  // soft|infonce
    double beta = 0.2;
    bool intra = true;
    bool inter = true;
    std::string target_temperature = "shared";  // shared|unit
};

struct TemperatureConfig {
    double init = 0.07;
    std::string mode = "learnable";  // learnable|fixed
};

struct ScheduleConfig {
    double alpha_start = 0.9;
    double alpha_end = 0.1;
    bool progressive = true;        // anneal alpha; otherwise alpha_fixed
    bool dynamic_partition = true;  // row-split batches; otherwise weight full batches
    double alpha_fixed = 0.5;
};

struct EncoderFileConfig {
    std::vector<int> channels = {16, 32, 64};
    std::vector<int> strides = {1, 2, 2};
    int temporal_kernel = 3;
    int projector_hidden = 64;
    int embed_dim = 8;  // must match the frozen encoder width
};

struct EngineFileConfig {
    std::string mode = "stub";  // stub|remote
    int frames = 1;
    double detector_threshold = 0.35;
    bool fallback_fullframe = false;
    int retries = 3;
    int workers = 1;
};

struct EvalFileConfig {
    int knn_k = 1;
    int probe_epochs = 100;
    double probe_lr = 0.1;
    std::vector<int> probe_milestones = {60, 80};
    int probe_batch_size = 128;
    int finetune_epochs = 50;
    double finetune_lr = 0.01;
    std::vector<int> finetune_milestones = {30, 40};
    std::vector<double> fractions = {0.01, 0.05, 0.10};
    bool full_finetune_semi = false;
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::string output_dir;
    DatasetConfig dataset;
    std::vector<std::string> streams = {"joint"};
    LossModeConfig loss;
    TemperatureConfig temperature;
    ScheduleConfig schedule;
    OptimizerConfig optimizer;
    EncoderFileConfig encoder;
    EngineFileConfig engine;
    std::string frozen_encoder = "stub";
    EvalFileConfig eval;

    nlohmann::json resolved;  // canonical fully-resolved tree
    std::string digest;       // fnv1a64 of the canonical dump
};

// The full default tree; doubles as the schema skeleton (unknown keys are
// those absent from this tree).
nlohmann::json default_config_json();

// Defaults <- file <- overrides, then validation. `file` may be empty.
// Overrides are (dotted.path, value) pairs; values parse as JSON when
// possible, otherwise as strings.
RunConfig resolve_config(const std::string& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides = {});

RunConfig config_from_json(nlohmann::json resolved);

// Serializes the resolved config + digest into <dir>/resolved_config.json.
void echo_config(const RunConfig& cfg, const std::string& dir);

}  // namespace c2vl
