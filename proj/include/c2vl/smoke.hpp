#pragma once

#include <cstdint>
#include <string>

#include "c2vl/config.hpp"
#include "c2vl/eval.hpp"

namespace c2vl {

// End-to-end synthetic pipeline: corpus -> stub prompts -> pretraining ->
// linear probe + knn on the held-out 30%.
struct SmokeOptions {
    int classes = 3;
    int per_class = 60;
    int epochs = 20;
    int batch_size = 32;
    std::uint64_t seed = 7;
    std::string out_dir;
    double noisy_fraction = 0.0;  // cross-class prompt shuffling
    std::string loss_mode = "soft";
};

struct SmokeResult {
    double linear_top1 = 0.0;
    double knn_top1 = 0.0;
    std::string checkpoint_path;
    std::string data_dir;
    std::string cache_path;
    RunConfig config;
};

SmokeResult run_synth_smoke(const SmokeOptions& opts);

}  // namespace c2vl
