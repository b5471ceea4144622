#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2vl/dataset.hpp"
#include "c2vl/prompts.hpp"
#include "c2vl/skeleton.hpp"

namespace c2vl {

// Desk-scale verification corpus: class-distinct motion templates with small
// per-sample noise, paired one-to-one with class-consistent stub prompts.
struct SynthCorpus {
    std::vector<SkeletonSequence> sequences;
    std::vector<PromptRecord> prompts;  // crops kept in-memory
    std::vector<int> labels;

    std::unordered_map<std::string, int> label_map() const;
};

SynthCorpus synth_generate(int n_classes, int n_per_class, std::uint64_t seed);

// Per-class mean of the motion-template coordinates; rows are classes.
Eigen::MatrixXd class_motion_templates(const SynthCorpus& corpus);

// Writes container + xsub split definition (subjects 1..7 train, 8..10 test,
// a stratified 70/30 split by construction).
void write_synth_dataset(const SynthCorpus& corpus, const std::string& dir);

// Replaces the prompts of round(fraction*N) samples with another class's
// canonical prompt; every replaced pairing is cross-class.
void shuffle_prompts_across_classes(SynthCorpus& corpus, double fraction, std::uint64_t seed);

}  // namespace c2vl
