#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2vl/skeleton.hpp"

namespace c2vl {

inline constexpr const char* kSkeletonContainerVersion = "c2vl-skel-v1";
inline constexpr const char* kSplitDefinitionVersion = "c2vl-split-v1";

enum class Benchmark { xsub, xview, xset };

std::string to_string(Benchmark b);
Benchmark benchmark_from_string(const std::string& s);

struct DatasetSplit {
    Benchmark benchmark = Benchmark::xsub;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
};

// Train-side id lists per benchmark; anything not listed goes to test.
struct SplitDefinition {
    std::vector<int> train_subjects;  // xsub
    std::vector<int> train_cameras;   // xview
    std::vector<int> train_setups;    // xset
};

SplitDefinition load_split_definition(const std::string& path, Benchmark benchmark);
void save_split_definition(const std::string& path, const SplitDefinition& def);

// ---------------------------------------------------------------------------
// Container: index.json + little-endian float32 blob (data.bin)
// ---------------------------------------------------------------------------

void save_container(const std::string& dir, const std::vector<SkeletonSequence>& sequences);
std::vector<SkeletonSequence> load_container(const std::string& dir);

// Loads the container, validates preprocessing, and derives the benchmark
// split from the definition file (default: <dir>/splits.json).
std::pair<std::vector<SkeletonSequence>, DatasetSplit> load_dataset(
    const std::string& dir, Benchmark benchmark, const std::string& split_file = "");

DatasetSplit make_split(const std::vector<SkeletonSequence>& sequences, Benchmark benchmark,
                        const SplitDefinition& def);

// ---------------------------------------------------------------------------
// Stratified label-fraction subsets (semi-supervised protocol)
// ---------------------------------------------------------------------------

// Picks round(fraction * class_size) indices per class (minimum one),
// deterministically under the seed. Returns sorted indices.
std::vector<int> semi_subset(const std::vector<int>& labels, double fraction,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Raw-format ingestion
// ---------------------------------------------------------------------------

// Converts a directory of raw skeleton files into the container format.
// ntu60/ntu120: *.skeleton text files named S...C...P...R...A... .
// pkummd2: per-sequence joint text files plus .label segment files.
// Returns the number of sequences written.
int ingest_raw(const std::string& raw_dir, const std::string& out_dir,
               const std::string& dataset_kind, int target_frames = 64);

// Single NTU-format .skeleton file -> raw (unpreprocessed) sequence.
SkeletonSequence parse_ntu_skeleton_file(const std::string& path);

}  // namespace c2vl
