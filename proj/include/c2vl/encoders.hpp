#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "c2vl/image.hpp"
#include "c2vl/losses.hpp"
#include "c2vl/skeleton.hpp"

namespace c2vl {

// ---------------------------------------------------------------------------
// Parameters and optimizer
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;

    Param() = default;
    Param(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Eigen::MatrixXd::Zero(rows, cols)),
          grad(Eigen::MatrixXd::Zero(rows, cols)) {}
    void zero_grad() { grad.setZero(); }
};

// Plain SGD with momentum and decoupled-from-nothing L2 weight decay
// (decay is added to the gradient, matching the usual SGD formulation).
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Param*> params, double momentum, double weight_decay);

    void step(double lr);
    void zero_grad();
    std::size_t parameter_count() const;

    std::vector<Eigen::MatrixXd>& velocity() { return velocity_; }
    const std::vector<Param*>& params() const { return params_; }

private:
    std::vector<Param*> params_;
    std::vector<Eigen::MatrixXd> velocity_;
    double momentum_;
    double weight_decay_;
};

// ---------------------------------------------------------------------------
// Activations: frame-major blocks of joints x channels matrices
// ---------------------------------------------------------------------------

struct FrameBlock {
    int batch = 0;
    int frames = 0;                  // per sample
    std::vector<Eigen::MatrixXd> f;  // batch*frames entries, sample-major

    Eigen::MatrixXd& at(int b, int t) { return f[static_cast<std::size_t>(b) * frames + t]; }
    const Eigen::MatrixXd& at(int b, int t) const {
        return f[static_cast<std::size_t>(b) * frames + t];
    }
    static FrameBlock zeros(int batch, int frames, int joints, int channels);
};

// Reshape a stream matrix (frames x bodies*joints*3) into per-frame
// joints x (3*bodies) matrices; bodies stack along the channel axis.
FrameBlock to_frame_block(const std::vector<const Eigen::MatrixXd*>& stream_rows, int joints,
                          int bodies);

// ---------------------------------------------------------------------------
// Layers (each caches what its backward pass needs)
// ---------------------------------------------------------------------------

// Per-frame spatial aggregation: Y_t = A X_t W + b with A the normalized
// adjacency (symmetric, self-loops included).
class SpatialGraphConv {
public:
    SpatialGraphConv(const std::string& name, Eigen::MatrixXd adjacency, int c_in, int c_out,
                     std::mt19937_64& rng);

    FrameBlock forward(const FrameBlock& in, bool training);
    FrameBlock backward(const FrameBlock& d_out);
    std::vector<Param*> params() { return {&w_, &b_}; }

private:
    Eigen::MatrixXd adj_;
    Param w_;  // c_in x c_out
    Param b_;  // 1 x c_out
    FrameBlock cache_ax_;
};

// 1-D temporal convolution over the frame axis (per joint, channels mixed),
// zero-padded, odd kernel, optional stride.
class TemporalConv {
public:
    TemporalConv(const std::string& name, int channels, int kernel, int stride,
                 std::mt19937_64& rng);

    FrameBlock forward(const FrameBlock& in, bool training);
    FrameBlock backward(const FrameBlock& d_out);
    std::vector<Param*> params();
    int out_frames(int in_frames) const;

private:
    int channels_, kernel_, stride_, pad_;
    std::vector<Param> taps_;  // kernel entries, each channels x channels
    Param b_;
    FrameBlock cache_in_;
};

class FrameRelu {
public:
    FrameBlock forward(const FrameBlock& in, bool training);
    FrameBlock backward(const FrameBlock& d_out);

private:
    FrameBlock cache_mask_;
};

// ---------------------------------------------------------------------------
// Skeleton encoder
// ---------------------------------------------------------------------------

struct EncoderConfig {
    int joints = 25;
    int bodies = 1;
    std::vector<int> channels = {16, 32, 64};  // per-stage output width
    std::vector<int> strides = {1, 2, 2};      // temporal stride per stage
    int temporal_kernel = 3;

    int in_channels() const { return 3 * bodies; }
    int feature_dim() const { return channels.empty() ? in_channels() : channels.back(); }
};

// Reduced spatial-temporal graph network: stages of graph conv -> relu ->
// temporal conv -> relu, then global mean pooling over frames and joints.
class GraphEncoder {
public:
    GraphEncoder(const EncoderConfig& cfg, const BoneTable& bones, std::uint64_t seed);

    // in: frame block with joints x in_channels frames. Returns B x feature_dim.
    Eigen::MatrixXd forward(const FrameBlock& in, bool training);
    void backward(const Eigen::MatrixXd& d_features);

    std::vector<Param*> params();
    int feature_dim() const { return cfg_.feature_dim(); }
    const EncoderConfig& config() const { return cfg_; }
    std::string weight_digest() const;

private:
    struct Stage {
        std::unique_ptr<SpatialGraphConv> gc;
        FrameRelu relu1;
        std::unique_ptr<TemporalConv> tc;
        FrameRelu relu2;
    };
    EncoderConfig cfg_;
    std::vector<Stage> stages_;
    int pool_frames_ = 0, pool_joints_ = 0;  // backward shape of the mean pool
    Eigen::MatrixXd cache_pooled_;           // pre-normalization pooled features
};

// Batch entry point for the encoder: validates shapes, derives the requested
// modality stream, and runs the forward pass.
Eigen::MatrixXd encode_skeleton(GraphEncoder& encoder,
                                const std::vector<const SkeletonSequence*>& batch,
                                StreamKind stream, const BoneTable& bones, bool training);

// ---------------------------------------------------------------------------
// Projector: Linear -> ReLU -> bias-free Linear -> L2 row normalization
// ---------------------------------------------------------------------------

class Projector {
public:
    Projector(const std::string& name, int in_dim, int hidden_dim, int out_dim, bool hidden_bias,
              std::uint64_t seed);

    Eigen::MatrixXd forward(const Eigen::MatrixXd& features, bool training = true);
    Eigen::MatrixXd backward(const Eigen::MatrixXd& d_embeddings);  // returns d_features
    std::vector<Param*> params();

    const Eigen::MatrixXd& pre_norm() const { return cache_z_; }
    int out_dim() const { return static_cast<int>(w2_.value.cols()); }

private:
    Param w1_, b1_, w2_;
    bool hidden_bias_;
    Eigen::MatrixXd cache_x_, cache_h_, cache_z_;
    Eigen::MatrixXd cache_mask_;
};

// ---------------------------------------------------------------------------
// Temperature
// ---------------------------------------------------------------------------

// Log-parameterized softmax temperature, clamped to [min_tau, max_tau].
struct TemperatureParam {
    double log_tau = 0.0;
    bool learnable = true;
    double min_tau = 1e-3;
    double max_tau = 1.0;

    static TemperatureParam init(double tau0 = 0.07, bool learnable = true);
    double tau() const;
    void apply_grad(double d_log_tau, double lr);
};

// ---------------------------------------------------------------------------
// Frozen vision/language encoders
// ---------------------------------------------------------------------------

class FrozenEncoder {
public:
    virtual ~FrozenEncoder() = default;
    virtual int dim() const = 0;
    virtual Eigen::MatrixXd encode_images(const std::vector<ImageBuffer>& images) = 0;
    virtual Eigen::MatrixXd encode_texts(const std::vector<std::string>& texts) = 0;
    virtual std::string weight_digest() const = 0;
    virtual std::string name() const = 0;
};

// Deterministic hash-seeded embeddings; stands in for the real image-text
// encoder at desk scale.
class StubFrozenEncoder : public FrozenEncoder {
public:
    explicit StubFrozenEncoder(int dim = 8, std::uint64_t seed = 0);
    int dim() const override { return dim_; }
    Eigen::MatrixXd encode_images(const std::vector<ImageBuffer>& images) override;
    Eigen::MatrixXd encode_texts(const std::vector<std::string>& texts) override;
    std::string weight_digest() const override;
    std::string name() const override { return "stub-frozen-encoder"; }

private:
    Eigen::VectorXd embed(std::uint64_t content_hash) const;
    int dim_;
    std::uint64_t seed_;
};

// HTTP client for an external embedding service (the pretrained image-text
// model runs out of process). Endpoints: POST /encode_texts, POST
// /encode_images, GET /info.
class RemoteFrozenEncoder : public FrozenEncoder {
public:
    explicit RemoteFrozenEncoder(const std::string& base_url, int timeout_seconds = 60);
    int dim() const override { return dim_; }
    Eigen::MatrixXd encode_images(const std::vector<ImageBuffer>& images) override;
    Eigen::MatrixXd encode_texts(const std::vector<std::string>& texts) override;
    std::string weight_digest() const override { return digest_; }
    std::string name() const override { return name_; }

private:
    std::string base_url_;
    int timeout_seconds_;
    int dim_ = 0;
    std::string digest_, name_;
};

// kind: "stub" or "clip-vit-l14-336". The latter requires C2VL_CLIP_PATH to
// point at a serving endpoint; otherwise a ConfigError directs to stub mode.
std::unique_ptr<FrozenEncoder> make_frozen_encoder(const std::string& kind, int stub_dim,
                                                   std::uint64_t stub_seed);

// ---------------------------------------------------------------------------
// Shared init / digest helpers
// ---------------------------------------------------------------------------

void xavier_uniform(Eigen::MatrixXd& w, std::mt19937_64& rng);
std::string params_digest(const std::vector<Param*>& params);

}  // namespace c2vl
