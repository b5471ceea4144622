#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "c2vl/config.hpp"
#include "c2vl/pretrain.hpp"

namespace c2vl {

struct EvalReport {
    std::string protocol;
    std::string benchmark;
    double top1 = 0.0;            // percent
    Eigen::VectorXd per_class;    // percent, indexed by class
    Eigen::MatrixXd confusion;    // rows = ground truth, cols = prediction
    std::string config_digest;

    // accuracy recomputed from the confusion matrix (consistency invariant)
    double accuracy_from_confusion() const;
    nlohmann::json to_json() const;
    // writes <dir>/<stem>.json and <dir>/<stem>_confusion.csv
    void save(const std::string& dir, const std::string& stem) const;
};

struct HeadOptions {
    int epochs = 100;
    double lr = 0.1;
    std::vector<int> milestones = {60, 80};
    double gamma = 0.1;
    double weight_decay = 0.0;
    double momentum = 0.9;
    int batch_size = 128;
    std::uint64_t seed = 0;
};

struct LinearHead {
    Eigen::MatrixXd w;           // F x K
    Eigen::RowVectorXd b;        // 1 x K
    Eigen::RowVectorXd mean;     // per-dim standardization fitted on the train split
    Eigen::RowVectorXd inv_std;
};

// (x - mean) * diag(inv_std)
Eigen::MatrixXd standardize_features(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean,
                                     const Eigen::RowVectorXd& inv_std);
void fit_standardizer(const Eigen::MatrixXd& x, Eigen::RowVectorXd* mean,
                      Eigen::RowVectorXd* inv_std);

// ---------------------------------------------------------------------------
// Feature extraction and heads
// ---------------------------------------------------------------------------

// Inference-mode features for a set of sequences, batched.
Eigen::MatrixXd extract_features(GraphEncoder& encoder,
                                 const std::vector<const SkeletonSequence*>& seqs,
                                 StreamKind stream, const BoneTable& bones,
                                 int batch_size = 256);

LinearHead train_linear_head(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                             int n_classes, const HeadOptions& opts);

Eigen::MatrixXd head_scores(const Eigen::MatrixXd& features, const LinearHead& head);

EvalReport report_from_scores(const std::string& protocol, const std::string& benchmark,
                              const Eigen::MatrixXd& scores, const std::vector<int>& labels,
                              int n_classes, const std::string& config_digest);

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

// Frozen encoder, trainable linear head.
EvalReport linear_probe(PretrainModel& model, const std::vector<const SkeletonSequence*>& train,
                        const std::vector<const SkeletonSequence*>& test, StreamKind stream,
                        const HeadOptions& opts, const std::string& benchmark,
                        const std::string& config_digest);

// Entire network trainable; `model` is mutated (pass a fresh copy).
EvalReport finetune_eval(PretrainModel& model, const std::vector<const SkeletonSequence*>& train,
                         const std::vector<const SkeletonSequence*>& test, StreamKind stream,
                         const HeadOptions& opts, const std::string& benchmark,
                         const std::string& config_digest);

std::vector<int> knn_predict(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_labels,
                             int n_classes, const Eigen::MatrixXd& query, int k,
                             bool exclude_self);

EvalReport knn_eval(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_labels,
                    const Eigen::MatrixXd& query, const std::vector<int>& query_labels,
                    int n_classes, int k, bool exclude_self, const std::string& benchmark,
                    const std::string& config_digest);

// One report per label fraction; the classifier head trains on the stratified
// subset while the encoder stays frozen (full_finetune covers the alternative).
std::vector<EvalReport> semi_eval(const Checkpoint& ckpt,
                                  const std::vector<const SkeletonSequence*>& train,
                                  const std::vector<const SkeletonSequence*>& test,
                                  StreamKind stream, const std::vector<double>& fractions,
                                  bool full_finetune, const HeadOptions& opts,
                                  const std::string& benchmark,
                                  const std::string& config_digest);

// joint_remap maps each source joint slot to a target joint (-1 = zeros);
// empty means identity (requires equal joint counts).
EvalReport transfer_eval(const Checkpoint& source,
                         const std::vector<const SkeletonSequence*>& target_train,
                         const std::vector<const SkeletonSequence*>& target_test,
                         StreamKind stream, const std::vector<int>& joint_remap,
                         const HeadOptions& opts, const std::string& benchmark,
                         const std::string& config_digest);

// Score-level fusion: argmax of the weighted mean of per-stream class scores.
EvalReport fuse_streams(const std::vector<Eigen::MatrixXd>& stream_scores,
                        const std::vector<double>& weights, const std::vector<int>& labels,
                        int n_classes, const std::string& benchmark,
                        const std::string& config_digest);

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

// Positive-pair and negative-pair cosine histograms between projected skeleton
// embeddings and the frozen prompt embeddings; one CSV per prompt modality.
void emit_similarity_histograms(PretrainModel& model,
                                const std::vector<const SkeletonSequence*>& seqs,
                                const EmbeddingStore& store, StreamKind stream,
                                const std::string& out_dir, int bins = 40);

// sample_id,label,e0..e{F-1}
void dump_embeddings_csv(const Eigen::MatrixXd& features,
                         const std::vector<const SkeletonSequence*>& seqs,
                         const std::string& path);

std::vector<int> labels_of(const std::vector<const SkeletonSequence*>& seqs);
int count_classes(const std::vector<int>& labels);

// Remaps sequences into the source skeleton layout (transfer protocol).
SkeletonSequence remap_joints(const SkeletonSequence& seq, int source_joints,
                              const std::vector<int>& joint_remap);

}  // namespace c2vl
