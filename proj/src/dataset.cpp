#include "c2vl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "c2vl/common.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c2vl {

std::string to_string(Benchmark b) {
    switch (b) {
        case Benchmark::xsub: return "xsub";
        case Benchmark::xview: return "xview";
        case Benchmark::xset: return "xset";
    }
    return "xsub";
}

Benchmark benchmark_from_string(const std::string& s) {
    if (s == "xsub") return Benchmark::xsub;
    if (s == "xview") return Benchmark::xview;
    if (s == "xset") return Benchmark::xset;
    throw ConfigError("unknown benchmark: " + s + " (expected xsub|xview|xset)");
}

SplitDefinition load_split_definition(const std::string& path, Benchmark benchmark) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open split definition");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(path, 0, std::string("invalid JSON: ") + e.what());
    }
    if (j.value("version", "") != kSplitDefinitionVersion)
        throw ParseError(path, 0, "split definition version mismatch, expected " +
                                      std::string(kSplitDefinitionVersion));
    SplitDefinition def;
    const std::string key = to_string(benchmark);
    if (!j.contains(key))
        throw ConfigError("split definition " + path + " has no entry for benchmark " + key);
    const json& b = j.at(key);
    if (benchmark == Benchmark::xsub) def.train_subjects = b.at("train_subjects").get<std::vector<int>>();
    if (benchmark == Benchmark::xview) def.train_cameras = b.at("train_cameras").get<std::vector<int>>();
    if (benchmark == Benchmark::xset) def.train_setups = b.at("train_setups").get<std::vector<int>>();
    return def;
}

void save_split_definition(const std::string& path, const SplitDefinition& def) {
    json j;
    j["version"] = kSplitDefinitionVersion;
    if (!def.train_subjects.empty()) j["xsub"]["train_subjects"] = def.train_subjects;
    if (!def.train_cameras.empty()) j["xview"]["train_cameras"] = def.train_cameras;
    if (!def.train_setups.empty()) j["xset"]["train_setups"] = def.train_setups;
    atomic_write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Container IO
// ---------------------------------------------------------------------------

void save_container(const std::string& dir, const std::vector<SkeletonSequence>& sequences) {
    fs::create_directories(dir);
    json index;
    index["version"] = kSkeletonContainerVersion;
    index["blob"] = "data.bin";
    json samples = json::array();

    std::string blob;
    for (const auto& s : sequences) {
        json meta;
        meta["sample_id"] = s.sample_id;
        meta["label"] = s.label;
        meta["subject_id"] = s.subject_id;
        meta["camera_id"] = s.camera_id;
        meta["setup_id"] = s.setup_id;
        meta["byte_offset"] = blob.size();
        meta["frames"] = s.frames();
        meta["joints"] = s.joints;
        meta["coords"] = 3;
        meta["bodies"] = s.bodies;
        samples.push_back(std::move(meta));

        for (int t = 0; t < s.frames(); ++t) {
            for (int c = 0; c < s.row_width(); ++c) {
                float v = static_cast<float>(s.data(t, c));
                const char* p = reinterpret_cast<const char*>(&v);
                blob.append(p, sizeof(float));  // little-endian on all supported targets
            }
        }
    }
    index["samples"] = std::move(samples);
    write_file_bytes(dir + "/data.bin", blob.data(), blob.size());
    atomic_write_file(dir + "/index.json", index.dump(2) + "\n");
}

std::vector<SkeletonSequence> load_container(const std::string& dir) {
    const std::string index_path = dir + "/index.json";
    std::ifstream in(index_path);
    if (!in) throw ParseError(index_path, 0, "cannot open container index");
    json index;
    try {
        in >> index;
    } catch (const std::exception& e) {
        throw ParseError(index_path, 0, std::string("invalid JSON: ") + e.what());
    }
    if (index.value("version", "") != kSkeletonContainerVersion)
        throw ParseError(index_path, 0, "container version mismatch, expected " +
                                            std::string(kSkeletonContainerVersion));
    const std::string blob_path = dir + "/" + index.value("blob", "data.bin");
    std::string blob = read_file_bytes(blob_path);

    std::vector<SkeletonSequence> out;
    for (const auto& meta : index.at("samples")) {
        SkeletonSequence s;
        s.sample_id = meta.at("sample_id").get<std::string>();
        s.label = meta.at("label").get<int>();
        s.subject_id = meta.at("subject_id").get<int>();
        s.camera_id = meta.at("camera_id").get<int>();
        s.setup_id = meta.at("setup_id").get<int>();
        s.joints = meta.at("joints").get<int>();
        s.bodies = meta.at("bodies").get<int>();
        const int frames = meta.at("frames").get<int>();
        const std::uint64_t offset = meta.at("byte_offset").get<std::uint64_t>();
        const std::size_t need = static_cast<std::size_t>(frames) * s.row_width() * sizeof(float);
        if (offset + need > blob.size())
            throw ParseError(blob_path, offset,
                             "record for " + s.sample_id + " truncated (needs " +
                                 std::to_string(need) + " bytes)");
        s.data.resize(frames, s.row_width());
        const char* p = blob.data() + offset;
        for (int t = 0; t < frames; ++t) {
            for (int c = 0; c < s.row_width(); ++c) {
                float v;
                std::memcpy(&v, p, sizeof(float));
                p += sizeof(float);
                s.data(t, c) = static_cast<double>(v);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

DatasetSplit make_split(const std::vector<SkeletonSequence>& sequences, Benchmark benchmark,
                        const SplitDefinition& def) {
    const std::vector<int>* train_ids = nullptr;
    switch (benchmark) {
        case Benchmark::xsub: train_ids = &def.train_subjects; break;
        case Benchmark::xview: train_ids = &def.train_cameras; break;
        case Benchmark::xset: train_ids = &def.train_setups; break;
    }
    if (train_ids->empty())
        throw ConfigError("split definition lacks train ids for benchmark " +
                          to_string(benchmark));
    std::unordered_set<int> train_set(train_ids->begin(), train_ids->end());

    DatasetSplit split;
    split.benchmark = benchmark;
    for (const auto& s : sequences) {
        int key = benchmark == Benchmark::xsub    ? s.subject_id
                  : benchmark == Benchmark::xview ? s.camera_id
                                                  : s.setup_id;
        (train_set.count(key) != 0 ? split.train_ids : split.test_ids).push_back(s.sample_id);
    }
    return split;
}

std::pair<std::vector<SkeletonSequence>, DatasetSplit> load_dataset(
    const std::string& dir, Benchmark benchmark, const std::string& split_file) {
    auto sequences = load_container(dir);
    for (const auto& s : sequences) s.validate();
    const std::string sf = split_file.empty() ? dir + "/splits.json" : split_file;
    SplitDefinition def = load_split_definition(sf, benchmark);
    DatasetSplit split = make_split(sequences, benchmark, def);
    if (split.train_ids.size() + split.test_ids.size() != sequences.size())
        throw DataError("split does not partition the dataset");
    return {std::move(sequences), std::move(split)};
}

// ---------------------------------------------------------------------------
// semi_subset
// ---------------------------------------------------------------------------

std::vector<int> semi_subset(const std::vector<int>& labels, double fraction,
                             std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("semi_subset: fraction must be in (0, 1]");
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));

    std::vector<int> picked;
    for (auto& [cls, idx] : by_class) {
        if (idx.empty()) continue;
        auto n = static_cast<std::size_t>(
            std::max<long>(1, std::lround(fraction * static_cast<double>(idx.size()))));
        n = std::min(n, idx.size());
        std::mt19937_64 rng(seed ^ fnv1a64_bytes(&cls, sizeof(cls)));
        std::shuffle(idx.begin(), idx.end(), rng);
        picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

// ---------------------------------------------------------------------------
// NTU raw parsing
// ---------------------------------------------------------------------------

namespace {

// Filename pattern SsssCcccPpppRrrrAaaa; returns false when absent.
bool parse_ntu_name(const std::string& stem, int* setup, int* camera, int* subject, int* action) {
    auto find_num = [&](char tag, int* out) {
        auto pos = stem.find(tag);
        if (pos == std::string::npos || pos + 4 > stem.size()) return false;
        int v = 0;
        for (int i = 1; i <= 3; ++i) {
            char c = stem[pos + i];
            if (c < '0' || c > '9') return false;
            v = v * 10 + (c - '0');
        }
        *out = v;
        return true;
    };
    return find_num('S', setup) && find_num('C', camera) && find_num('P', subject) &&
           find_num('A', action);
}

}  // namespace

SkeletonSequence parse_ntu_skeleton_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open skeleton file");

    auto fail = [&](const std::string& msg) -> ParseError {
        auto pos = in.tellg();
        return ParseError(path, pos < 0 ? 0 : static_cast<std::uint64_t>(pos), msg);
    };
    auto next_int = [&](const char* what) {
        long long v;
        if (!(in >> v)) throw fail(std::string("expected integer: ") + what);
        return v;
    };
    auto next_double = [&](const char* what) {
        double v;
        if (!(in >> v)) throw fail(std::string("expected number: ") + what);
        return v;
    };

    const long long n_frames = next_int("frame count");
    if (n_frames <= 0) throw fail("non-positive frame count");

    SkeletonSequence seq;
    seq.joints = 25;
    seq.bodies = 2;  // absent second body stays zero padding
    seq.data.setZero(n_frames, seq.row_width());

    int max_bodies_seen = 0;
    for (long long t = 0; t < n_frames; ++t) {
        const long long n_bodies = next_int("body count");
        if (n_bodies < 0 || n_bodies > 10) throw fail("implausible body count");
        for (long long b = 0; b < n_bodies; ++b) {
            // body header: tracking id + 9 state fields
            for (int k = 0; k < 10; ++k) next_double("body header");
            const long long n_joints = next_int("joint count");
            if (n_joints != 25) throw fail("expected 25 joints");
            for (long long j = 0; j < n_joints; ++j) {
                double x = next_double("x"), y = next_double("y"), z = next_double("z");
                // remaining 9 per-joint fields (depth/color coords, orientation, state)
                for (int k = 0; k < 9; ++k) next_double("joint fields");
                if (b < 2) {
                    seq.data(t, seq.col(static_cast<int>(j), 0, static_cast<int>(b))) = x;
                    seq.data(t, seq.col(static_cast<int>(j), 1, static_cast<int>(b))) = y;
                    seq.data(t, seq.col(static_cast<int>(j), 2, static_cast<int>(b))) = z;
                }
            }
        }
        max_bodies_seen = std::max<int>(max_bodies_seen, static_cast<int>(n_bodies));
    }

    std::string stem = fs::path(path).stem().string();
    seq.sample_id = stem;
    int setup = 0, camera = 0, subject = 0, action = 0;
    if (parse_ntu_name(stem, &setup, &camera, &subject, &action)) {
        seq.setup_id = setup;
        seq.camera_id = camera;
        seq.subject_id = subject;
        seq.label = action - 1;
    }
    if (max_bodies_seen <= 1) {
        // drop the all-zero second body channel
        Eigen::MatrixXd one = seq.data.leftCols(25 * 3);
        seq.bodies = 1;
        seq.data = std::move(one);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// PKU-style raw parsing: <name>.txt with one frame per line (150 floats),
// <name>.label with "label,start,end" action segments.
// ---------------------------------------------------------------------------

namespace {

std::vector<SkeletonSequence> parse_pku_pair(const std::string& data_path,
                                             const std::string& label_path) {
    std::ifstream in(data_path);
    if (!in) throw ParseError(data_path, 0, "cannot open data file");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (is_whitespace_only(line)) continue;
        std::istringstream ss(line);
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (vals.size() != 150)
            throw ParseError(data_path, static_cast<std::uint64_t>(rows.size()),
                             "expected 150 values per line, got " + std::to_string(vals.size()));
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw ParseError(data_path, 0, "empty data file");

    std::ifstream lab(label_path);
    if (!lab) throw ParseError(label_path, 0, "cannot open label file");
    std::string stem = fs::path(data_path).stem().string();
    int camera = 0;
    if (!stem.empty()) {
        char view = stem.back();
        camera = view == 'L' ? 1 : view == 'M' ? 2 : view == 'R' ? 3 : 0;
    }

    std::vector<SkeletonSequence> out;
    int seg = 0;
    while (std::getline(lab, line)) {
        if (is_whitespace_only(line)) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        long long label, start, end;
        if (!(ss >> label >> start >> end))
            throw ParseError(label_path, static_cast<std::uint64_t>(seg),
                             "expected 'label,start,end'");
        start = std::clamp<long long>(start, 0, static_cast<long long>(rows.size()) - 1);
        end = std::clamp<long long>(end, start + 1, static_cast<long long>(rows.size()));

        SkeletonSequence s;
        s.joints = 25;
        s.bodies = 2;
        s.label = static_cast<int>(label) - 1;
        s.camera_id = camera;
        s.sample_id = stem + "_seg" + std::to_string(seg);
        s.data.resize(end - start, s.row_width());
        for (long long t = start; t < end; ++t)
            for (int c = 0; c < 150; ++c) s.data(t - start, c) = rows[t][c];
        out.push_back(std::move(s));
        ++seg;
    }
    return out;
}

}  // namespace

int ingest_raw(const std::string& raw_dir, const std::string& out_dir,
               const std::string& dataset_kind, int target_frames) {
    if (dataset_kind != "ntu60" && dataset_kind != "ntu120" && dataset_kind != "pkummd2")
        throw ConfigError("ingest: unknown dataset kind: " + dataset_kind);
    if (!fs::is_directory(raw_dir)) throw ConfigError("ingest: not a directory: " + raw_dir);

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(raw_dir)) {
        if (!entry.is_regular_file()) continue;
        files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());

    std::vector<SkeletonSequence> all;
    if (dataset_kind == "pkummd2") {
        for (const auto& f : files) {
            if (fs::path(f).extension() != ".txt") continue;
            std::string label_path = fs::path(f).replace_extension(".label").string();
            if (!fs::exists(label_path))
                throw ParseError(label_path, 0, "missing label file for " + f);
            for (auto& s : parse_pku_pair(f, label_path))
                all.push_back(downsample_frames(s, target_frames));
        }
    } else {
        for (const auto& f : files) {
            if (fs::path(f).extension() != ".skeleton") continue;
            all.push_back(downsample_frames(parse_ntu_skeleton_file(f), target_frames));
        }
    }
    if (all.empty()) throw DataError("ingest: no raw skeleton files found in " + raw_dir);
    save_container(out_dir, all);
    return static_cast<int>(all.size());
}

}  // namespace c2vl
