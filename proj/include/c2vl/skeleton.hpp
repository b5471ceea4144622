#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace c2vl {

// One action sample. Coordinates live in a frames x (bodies*joints*3) matrix;
// column layout is (body, joint, coord) major-to-minor, so each frame row is
// contiguous in the on-disk float32 blob.
struct SkeletonSequence {
    std::string sample_id;
    int joints = 25;
    int bodies = 1;
    int label = -1;  // -1 = unlabeled
    int subject_id = 0;
    int camera_id = 0;
    int setup_id = 0;
    Eigen::MatrixXd data;

    int frames() const { return static_cast<int>(data.rows()); }
    int row_width() const { return bodies * joints * 3; }
    int col(int joint, int coord, int body) const { return (body * joints + joint) * 3 + coord; }

    double at(int t, int joint, int coord, int body = 0) const { return data(t, col(joint, coord, body)); }
    double& at(int t, int joint, int coord, int body = 0) { return data(t, col(joint, coord, body)); }

    // frames==64, shape consistency, finite entries
    void validate() const;
};

enum class StreamKind { joint, motion, bone };

std::string to_string(StreamKind kind);
StreamKind stream_kind_from_string(const std::string& s);

struct ModalityStream {
    StreamKind kind = StreamKind::joint;
    Eigen::MatrixXd data;  // same shape as the source sequence
};

// Joint -> parent edges for the bone stream and the encoder graph.
// parent[j] == j marks the root (its bone is zero).
struct BoneTable {
    int joints = 0;
    std::vector<int> parent;

    static BoneTable ntu25();
    // Simple chain 0-1-...-(n-1), used by the synthetic corpus.
    static BoneTable chain(int joints);
    static BoneTable from_json_file(const std::string& path);

    void validate() const;
};

// Symmetrically normalized adjacency with self-loops:
// D^{-1/2} (A + I) D^{-1/2} over the undirected bone graph.
Eigen::MatrixXd normalized_adjacency(const BoneTable& bones);

// Uniform temporal resampling to `target` frames via indices floor(k*T/target);
// repeats frames when the input is shorter than the target.
SkeletonSequence downsample_frames(const SkeletonSequence& seq, int target = 64);

// joint: identity copy. motion[t] = joint[t+1]-joint[t], last frame zero.
// bone[j] = joint[j] - joint[parent(j)], root zero.
ModalityStream derive_stream(const SkeletonSequence& seq, StreamKind kind, const BoneTable& bones);

}  // namespace c2vl
