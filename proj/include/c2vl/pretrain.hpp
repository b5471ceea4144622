#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "c2vl/config.hpp"
#include "c2vl/dataset.hpp"
#include "c2vl/encoders.hpp"
#include "c2vl/prompts.hpp"

namespace c2vl {

inline constexpr const char* kCheckpointVersion = "c2vl-ckpt-v1";
inline constexpr const char* kEmbeddingStoreVersion = "c2vl-emb-v1";

// ---------------------------------------------------------------------------
// Precomputed prompt embeddings (frozen encoders make this lossless)
// ---------------------------------------------------------------------------

struct EmbeddingStore {
    int dim = 0;
    std::vector<std::string> sample_ids;  // sorted
    Eigen::MatrixXd vision;               // N x dim, unit rows
    Eigen::MatrixXd language;             // N x dim, unit rows

    int row_of(const std::string& sample_id) const;  // NotFoundError when absent
    bool contains(const std::string& sample_id) const;

    void save(const std::string& dir) const;  // index.json + vision.bin + language.bin
    static EmbeddingStore load(const std::string& dir);

private:
    mutable std::unordered_map<std::string, int> index_;
    void build_index() const;
};

EmbeddingStore precompute_prompt_embeddings(const PromptCache& cache, FrozenEncoder& encoder);

// In-memory variant for prompt records that still hold their crop bytes.
EmbeddingStore embed_prompt_records(const std::vector<PromptRecord>& records,
                                    FrozenEncoder& encoder);

// ---------------------------------------------------------------------------
// Checkpoint: single-file archive (header JSON + float64 blob)
// ---------------------------------------------------------------------------

struct MetricsRow {
    int epoch = 0;
    double alpha = 0, lr = 0;
    double loss_total = 0, sv_intra = 0, sv_inter = 0, sl_intra = 0, sl_inter = 0;
    double tau = 0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct Checkpoint {
    int epoch = 0;  // epochs completed
    long long step = 0;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::string stream = "joint";
    double log_tau = 0.0;
    bool tau_learnable = true;
    EncoderConfig arch;
    std::vector<int> bone_parents;
    int projector_hidden = 0;
    int embed_dim = 0;
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
    std::vector<MetricsRow> metrics;

    void save(const std::string& path) const;  // write-temp-then-rename
    static Checkpoint load(const std::string& path);
    std::vector<std::string> tensor_names() const;
    const Eigen::MatrixXd* find_tensor(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// Model bundle: encoder + two skeleton-side projectors + temperature
// ---------------------------------------------------------------------------

struct PretrainModel {
    EncoderConfig arch;
    BoneTable bones;
    std::unique_ptr<GraphEncoder> encoder;
    std::unique_ptr<Projector> proj_v;
    std::unique_ptr<Projector> proj_l;
    TemperatureParam tau;
    int projector_hidden = 0;
    int embed_dim = 0;

    std::vector<Param*> trainable_params();
};

PretrainModel build_model(const EncoderConfig& arch, const BoneTable& bones, int projector_hidden,
                          int embed_dim, double tau0, bool tau_learnable, std::uint64_t seed);
PretrainModel model_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    std::string checkpoint_path;
    std::vector<MetricsRow> metrics;
};

class Pretrainer {
public:
    Pretrainer(const RunConfig& cfg, const BoneTable& bones, int joints, int bodies,
               StreamKind stream);

    // Resume from a checkpoint produced by an identically-configured run.
    void restore(const Checkpoint& ckpt);

    // train: pointers into the caller's sequences; every sample id must be in
    // the store. Trains to cfg.optimizer.epochs and writes checkpoint +
    // metrics.csv under out_dir. stop_after_epochs (when >= 0) interrupts the
    // run early, leaving a resumable checkpoint.
    TrainResult run(const std::vector<const SkeletonSequence*>& train,
                    const EmbeddingStore& store, const std::string& out_dir,
                    int stop_after_epochs = -1);

    PretrainModel& model() { return model_; }
    Checkpoint snapshot(int epochs_done) const;

private:
    MetricsRow train_epoch(int epoch, const std::vector<const SkeletonSequence*>& train,
                           const EmbeddingStore& store);

    RunConfig cfg_;
    StreamKind stream_;
    PretrainModel model_;
    std::unique_ptr<SgdOptimizer> opt_;
    std::vector<std::pair<std::string, Eigen::MatrixXd>> pending_velocity_;
    std::vector<MetricsRow> metrics_;
    long long step_ = 0;
    int start_epoch_ = 0;
};

// Full orchestration used by the CLI: dataset + prompt check + embedding
// store + one training run per configured stream.
struct PretrainRunOutput {
    std::vector<std::string> checkpoint_paths;  // one per stream
    std::string embeddings_dir;
};

PretrainRunOutput pretrain_run(const RunConfig& cfg, const std::string& data_dir,
                               const std::string& cache_path, const std::string& out_dir,
                               const std::string& resume_ckpt = "");

// Bone table for a dataset kind (config override wins).
BoneTable bones_for(const DatasetConfig& dc, int joints);

}  // namespace c2vl
