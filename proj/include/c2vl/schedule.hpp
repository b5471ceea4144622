#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "c2vl/common.hpp"

namespace c2vl {

// Cosine annealing of the intra/inter mixing weight, start >= end.
struct AlphaSchedule {
    double alpha_start = 0.9;
    double alpha_end = 0.1;
    int total_epochs = 150;
};

inline double alpha_at(int epoch, const AlphaSchedule& sched) {
    if (sched.total_epochs < 1) throw ConfigError("alpha schedule: total_epochs must be >= 1");
    if (!(sched.alpha_end >= 0.0 && sched.alpha_end <= sched.alpha_start && sched.alpha_start <= 1.0))
        throw ConfigError("alpha schedule: need 0 <= alpha_end <= alpha_start <= 1");
    if (epoch < 0 || epoch > sched.total_epochs) {
        warn("alpha_at: epoch " + std::to_string(epoch) + " outside [0, " +
             std::to_string(sched.total_epochs) + "], clamping");
        epoch = epoch < 0 ? 0 : sched.total_epochs;
    }
    double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(sched.total_epochs);
    return sched.alpha_end + (sched.alpha_start - sched.alpha_end) * (1.0 + std::cos(phase)) / 2.0;
}

// First `intra` rows of a batch take the self-similarity targets, the
// remaining `inter` rows take the cross-consistency targets.
struct BatchPartition {
    int batch = 0;
    int intra = 0;
    int inter = 0;
    double alpha = 1.0;
};

inline BatchPartition partition_batch(int batch, double alpha) {
    if (batch < 1) throw ConfigError("partition_batch: batch must be >= 1");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("partition_batch: alpha must be in [0,1]");
    double x = alpha * static_cast<double>(batch);
    double r = std::nearbyint(x);
    // snap to the exact integer when alpha*B is one up to fp rounding
    int intra = std::abs(x - r) < 1e-9 ? static_cast<int>(r) : static_cast<int>(std::floor(x));
    BatchPartition p;
    p.batch = batch;
    p.intra = intra;
    p.inter = batch - intra;
    p.alpha = alpha;
    return p;
}

struct OptimizerConfig {
    std::string kind = "sgd";
    double lr0 = 0.1;
    std::vector<int> milestones = {130, 140};
    double gamma = 0.1;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    int epochs = 150;
    int batch_size = 400;
};

inline double lr_at(int epoch, const OptimizerConfig& cfg) {
    if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
    double lr = cfg.lr0;
    for (int m : cfg.milestones) {
        if (epoch >= m) lr *= cfg.gamma;
    }
    return lr;
}

}  // namespace c2vl
