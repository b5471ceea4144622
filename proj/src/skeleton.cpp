#include "c2vl/skeleton.hpp"

#include <cmath>
#include <fstream>

#include "c2vl/common.hpp"
#include "json.hpp"

namespace c2vl {

void SkeletonSequence::validate() const {
    if (frames() != 64)
        throw DataError("sample " + sample_id + ": expected 64 frames after preprocessing, got " +
                        std::to_string(frames()));
    if (bodies < 1 || bodies > 2)
        throw DataError("sample " + sample_id + ": bodies must be 1 or 2");
    if (data.cols() != row_width())
        throw DataError("sample " + sample_id + ": data width " + std::to_string(data.cols()) +
                        " does not match bodies*joints*3 = " + std::to_string(row_width()));
    if (!data.allFinite())
        throw DataError("sample " + sample_id + ": data contains NaN/Inf");
}

std::string to_string(StreamKind kind) {
    switch (kind) {
        case StreamKind::joint: return "joint";
        case StreamKind::motion: return "motion";
        case StreamKind::bone: return "bone";
    }
    return "joint";
}

StreamKind stream_kind_from_string(const std::string& s) {
    if (s == "joint") return StreamKind::joint;
    if (s == "motion") return StreamKind::motion;
    if (s == "bone") return StreamKind::bone;
    throw ConfigError("unknown stream kind: " + s);
}

BoneTable BoneTable::ntu25() {
    // Kinect-v2 25-joint skeleton, joint->parent in 0-based indexing.
    // Root is joint 20 (spine shoulder).
    static const int kParent[25] = {
        1,  20, 20, 2,  20, 4,  5,  6,  20, 8,  9,  10, 0,
        12, 13, 14, 0,  16, 17, 18, 20, 22, 7,  24, 11};
    BoneTable b;
    b.joints = 25;
    b.parent.assign(kParent, kParent + 25);
    return b;
}

BoneTable BoneTable::chain(int joints) {
    BoneTable b;
    b.joints = joints;
    b.parent.resize(joints);
    b.parent[0] = 0;
    for (int j = 1; j < joints; ++j) b.parent[j] = j - 1;
    return b;
}

BoneTable BoneTable::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open bone table");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ParseError(path, 0, std::string("invalid JSON: ") + e.what());
    }
    BoneTable b;
    b.joints = j.at("joints").get<int>();
    b.parent = j.at("parent").get<std::vector<int>>();
    b.validate();
    return b;
}

void BoneTable::validate() const {
    if (joints <= 0 || static_cast<int>(parent.size()) != joints)
        throw ConfigError("bone table: parent list size must equal joint count");
    for (int j = 0; j < joints; ++j) {
        if (parent[j] < 0 || parent[j] >= joints)
            throw ConfigError("bone table: joint " + std::to_string(j) +
                              " has parent outside [0, " + std::to_string(joints) + ")");
    }
}

Eigen::MatrixXd normalized_adjacency(const BoneTable& bones) {
    bones.validate();
    const int V = bones.joints;
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(V, V);
    for (int j = 0; j < V; ++j) {
        int p = bones.parent[j];
        if (p != j) {
            a(j, p) = 1.0;
            a(p, j) = 1.0;
        }
    }
    Eigen::VectorXd dinv_sqrt = a.rowwise().sum().array().sqrt().inverse();
    return dinv_sqrt.asDiagonal() * a * dinv_sqrt.asDiagonal();
}

SkeletonSequence downsample_frames(const SkeletonSequence& seq, int target) {
    const int t_in = seq.frames();
    if (t_in < 1) throw DataError("sample " + seq.sample_id + ": empty sequence (0 frames)");
    if (target < 1) throw ConfigError("downsample target must be >= 1");
    SkeletonSequence out = seq;
    out.data.resize(target, seq.data.cols());
    for (int k = 0; k < target; ++k) {
        // integer arithmetic keeps the index exact for any t_in/target ratio
        int idx = static_cast<int>((static_cast<std::int64_t>(k) * t_in) / target);
        out.data.row(k) = seq.data.row(idx);
    }
    return out;
}

ModalityStream derive_stream(const SkeletonSequence& seq, StreamKind kind, const BoneTable& bones) {
    ModalityStream out;
    out.kind = kind;
    switch (kind) {
        case StreamKind::joint:
            out.data = seq.data;
            break;
        case StreamKind::motion: {
            const int t = seq.frames();
            out.data.setZero(t, seq.data.cols());
            if (t > 1)
                out.data.topRows(t - 1) = seq.data.bottomRows(t - 1) - seq.data.topRows(t - 1);
            break;
        }
        case StreamKind::bone: {
            if (bones.joints != seq.joints)
                throw ConfigError("bone table has " + std::to_string(bones.joints) +
                                  " joints but sequence " + seq.sample_id + " has " +
                                  std::to_string(seq.joints));
            out.data.setZero(seq.frames(), seq.data.cols());
            for (int b = 0; b < seq.bodies; ++b) {
                for (int j = 0; j < seq.joints; ++j) {
                    int p = bones.parent[j];
                    if (p == j) continue;  // root bone stays zero
                    for (int c = 0; c < 3; ++c) {
                        out.data.col(seq.col(j, c, b)) =
                            seq.data.col(seq.col(j, c, b)) - seq.data.col(seq.col(p, c, b));
                    }
                }
            }
            break;
        }
    }
    return out;
}

}  // namespace c2vl
