#include "c2vl/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "c2vl/common.hpp"
#include "httplib.h"
#include "json.hpp"

namespace c2vl {

// ---------------------------------------------------------------------------
// SgdOptimizer
// ---------------------------------------------------------------------------

SgdOptimizer::SgdOptimizer(std::vector<Param*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (const Param* p : params_)
        velocity_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
}

void SgdOptimizer::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        Eigen::MatrixXd g = p.grad + weight_decay_ * p.value;
        velocity_[i] = momentum_ * velocity_[i] + g;
        p.value -= lr * velocity_[i];
    }
}

void SgdOptimizer::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

std::size_t SgdOptimizer::parameter_count() const {
    std::size_t n = 0;
    for (const Param* p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

// ---------------------------------------------------------------------------
// FrameBlock
// ---------------------------------------------------------------------------

FrameBlock FrameBlock::zeros(int batch, int frames, int joints, int channels) {
    FrameBlock out;
    out.batch = batch;
    out.frames = frames;
    out.f.assign(static_cast<std::size_t>(batch) * frames,
                 Eigen::MatrixXd::Zero(joints, channels));
    return out;
}

FrameBlock to_frame_block(const std::vector<const Eigen::MatrixXd*>& stream_rows, int joints,
                          int bodies) {
    if (stream_rows.empty()) throw DataError("to_frame_block: empty batch");
    const int t = static_cast<int>(stream_rows[0]->rows());
    const int c = 3 * bodies;
    FrameBlock out = FrameBlock::zeros(static_cast<int>(stream_rows.size()), t, joints, c);
    for (std::size_t n = 0; n < stream_rows.size(); ++n) {
        const Eigen::MatrixXd& data = *stream_rows[n];
        for (int ti = 0; ti < t; ++ti) {
            Eigen::MatrixXd& frame = out.at(static_cast<int>(n), ti);
            for (int b = 0; b < bodies; ++b)
                for (int j = 0; j < joints; ++j)
                    for (int k = 0; k < 3; ++k)
                        frame(j, b * 3 + k) = data(ti, (b * joints + j) * 3 + k);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

void xavier_uniform(Eigen::MatrixXd& w, std::mt19937_64& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
}

SpatialGraphConv::SpatialGraphConv(const std::string& name, Eigen::MatrixXd adjacency, int c_in,
                                   int c_out, std::mt19937_64& rng)
    : adj_(std::move(adjacency)), w_(name + ".W", c_in, c_out), b_(name + ".b", 1, c_out) {
    xavier_uniform(w_.value, rng);
}

FrameBlock SpatialGraphConv::forward(const FrameBlock& in, bool training) {
    FrameBlock ax;
    ax.batch = in.batch;
    ax.frames = in.frames;
    ax.f.reserve(in.f.size());
    for (const auto& x : in.f) ax.f.push_back(adj_ * x);

    FrameBlock out;
    out.batch = in.batch;
    out.frames = in.frames;
    out.f.reserve(in.f.size());
    for (const auto& a : ax.f)
        out.f.push_back((a * w_.value).rowwise() + b_.value.row(0));
    if (training) cache_ax_ = std::move(ax);
    return out;
}

FrameBlock SpatialGraphConv::backward(const FrameBlock& d_out) {
    FrameBlock d_in;
    d_in.batch = d_out.batch;
    d_in.frames = d_out.frames;
    d_in.f.reserve(d_out.f.size());
    for (std::size_t i = 0; i < d_out.f.size(); ++i) {
        const Eigen::MatrixXd& dy = d_out.f[i];
        w_.grad.noalias() += cache_ax_.f[i].transpose() * dy;
        b_.grad.row(0) += dy.colwise().sum();
        d_in.f.push_back(adj_.transpose() * (dy * w_.value.transpose()));
    }
    return d_in;
}

TemporalConv::TemporalConv(const std::string& name, int channels, int kernel, int stride,
                           std::mt19937_64& rng)
    : channels_(channels), kernel_(kernel), stride_(stride), pad_((kernel - 1) / 2),
      b_(name + ".b", 1, channels) {
    if (kernel % 2 != 1) throw ConfigError("temporal kernel must be odd");
    taps_.reserve(kernel);
    for (int k = 0; k < kernel; ++k) {
        taps_.emplace_back(name + ".W" + std::to_string(k), channels, channels);
        xavier_uniform(taps_.back().value, rng);
        // spread the fan-in across taps
        taps_.back().value /= std::sqrt(static_cast<double>(kernel));
    }
}

int TemporalConv::out_frames(int in_frames) const {
    return (in_frames + 2 * pad_ - kernel_) / stride_ + 1;
}

std::vector<Param*> TemporalConv::params() {
    std::vector<Param*> out;
    for (auto& t : taps_) out.push_back(&t);
    out.push_back(&b_);
    return out;
}

FrameBlock TemporalConv::forward(const FrameBlock& in, bool training) {
    const int t_out = out_frames(in.frames);
    const int joints = static_cast<int>(in.f[0].rows());
    FrameBlock out = FrameBlock::zeros(in.batch, t_out, joints, channels_);
    for (int n = 0; n < in.batch; ++n) {
        for (int to = 0; to < t_out; ++to) {
            Eigen::MatrixXd& y = out.at(n, to);
            y.rowwise() += b_.value.row(0);
            for (int k = 0; k < kernel_; ++k) {
                int ti = to * stride_ + k - pad_;
                if (ti < 0 || ti >= in.frames) continue;
                y.noalias() += in.at(n, ti) * taps_[k].value;
            }
        }
    }
    if (training) cache_in_ = in;
    return out;
}

FrameBlock TemporalConv::backward(const FrameBlock& d_out) {
    const int joints = static_cast<int>(cache_in_.f[0].rows());
    FrameBlock d_in = FrameBlock::zeros(cache_in_.batch, cache_in_.frames, joints, channels_);
    for (int n = 0; n < d_out.batch; ++n) {
        for (int to = 0; to < d_out.frames; ++to) {
            const Eigen::MatrixXd& dy = d_out.at(n, to);
            b_.grad.row(0) += dy.colwise().sum();
            for (int k = 0; k < kernel_; ++k) {
                int ti = to * stride_ + k - pad_;
                if (ti < 0 || ti >= cache_in_.frames) continue;
                taps_[k].grad.noalias() += cache_in_.at(n, ti).transpose() * dy;
                d_in.at(n, ti).noalias() += dy * taps_[k].value.transpose();
            }
        }
    }
    return d_in;
}

FrameBlock FrameRelu::forward(const FrameBlock& in, bool training) {
    FrameBlock out = in;
    FrameBlock mask = in;
    for (std::size_t i = 0; i < out.f.size(); ++i) {
        mask.f[i] = (in.f[i].array() > 0.0).cast<double>().matrix();
        out.f[i] = in.f[i].cwiseProduct(mask.f[i]);
    }
    if (training) cache_mask_ = std::move(mask);
    return out;
}

FrameBlock FrameRelu::backward(const FrameBlock& d_out) {
    FrameBlock d_in = d_out;
    for (std::size_t i = 0; i < d_in.f.size(); ++i)
        d_in.f[i] = d_out.f[i].cwiseProduct(cache_mask_.f[i]);
    return d_in;
}

// ---------------------------------------------------------------------------
// GraphEncoder
// ---------------------------------------------------------------------------

GraphEncoder::GraphEncoder(const EncoderConfig& cfg, const BoneTable& bones, std::uint64_t seed)
    : cfg_(cfg) {
    if (cfg_.channels.empty()) throw ConfigError("encoder: need at least one stage");
    if (cfg_.strides.size() != cfg_.channels.size())
        throw ConfigError("encoder: strides/channels length mismatch");
    if (bones.joints != cfg_.joints)
        throw ConfigError("encoder: bone table joints != config joints");
    Eigen::MatrixXd adj = normalized_adjacency(bones);
    std::mt19937_64 rng(seed);
    int c_in = cfg_.in_channels();
    for (std::size_t s = 0; s < cfg_.channels.size(); ++s) {
        Stage st;
        std::string base = "encoder.stage" + std::to_string(s);
        st.gc = std::make_unique<SpatialGraphConv>(base + ".gc", adj, c_in, cfg_.channels[s], rng);
        st.tc = std::make_unique<TemporalConv>(base + ".tc", cfg_.channels[s],
                                               cfg_.temporal_kernel, cfg_.strides[s], rng);
        stages_.push_back(std::move(st));
        c_in = cfg_.channels[s];
    }
}

Eigen::MatrixXd GraphEncoder::forward(const FrameBlock& in, bool training) {
    if (in.batch == 0) throw DataError("encoder: empty batch");
    FrameBlock x = in;
    for (auto& st : stages_) {
        x = st.gc->forward(x, training);
        x = st.relu1.forward(x, training);
        x = st.tc->forward(x, training);
        x = st.relu2.forward(x, training);
    }
    pool_frames_ = x.frames;
    pool_joints_ = static_cast<int>(x.f[0].rows());
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(x.batch, feature_dim());
    for (int n = 0; n < x.batch; ++n) {
        for (int t = 0; t < x.frames; ++t) pooled.row(n) += x.at(n, t).colwise().sum();
        pooled.row(n) /= static_cast<double>(x.frames * pool_joints_);
    }
    // RMS-normalize pooled features: the contrastive objective is invariant to
    // feature scale, so without this the weight magnitudes drift unbounded
    cache_pooled_ = pooled;
    Eigen::MatrixXd feats =
        row_normalize<double>(pooled) * std::sqrt(static_cast<double>(feature_dim()));
    if (!feats.allFinite()) throw DataError("encoder: non-finite features");
    return feats;
}

void GraphEncoder::backward(const Eigen::MatrixXd& d_features) {
    const double rms_scale = std::sqrt(static_cast<double>(feature_dim()));
    Eigen::MatrixXd d_pooled =
        row_normalize_backward<double>(cache_pooled_, Eigen::MatrixXd(d_features * rms_scale));
    const double scale = 1.0 / static_cast<double>(pool_frames_ * pool_joints_);
    FrameBlock d = FrameBlock::zeros(static_cast<int>(d_features.rows()), pool_frames_,
                                     pool_joints_, feature_dim());
    for (int n = 0; n < d.batch; ++n) {
        Eigen::MatrixXd g = (Eigen::VectorXd::Ones(pool_joints_) * d_pooled.row(n)) * scale;
        for (int t = 0; t < d.frames; ++t) d.at(n, t) = g;
    }
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
        d = it->relu2.backward(d);
        d = it->tc->backward(d);
        d = it->relu1.backward(d);
        d = it->gc->backward(d);
    }
}

std::vector<Param*> GraphEncoder::params() {
    std::vector<Param*> out;
    for (auto& st : stages_) {
        for (Param* p : st.gc->params()) out.push_back(p);
        for (Param* p : st.tc->params()) out.push_back(p);
    }
    return out;
}

std::string GraphEncoder::weight_digest() const {
    std::vector<Param*> ps = const_cast<GraphEncoder*>(this)->params();
    return params_digest(ps);
}

std::string params_digest(const std::vector<Param*>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const Param* p : params) {
        h = fnv1a64(p->name, h);
        h = fnv1a64_bytes(p->value.data(), sizeof(double) * static_cast<std::size_t>(p->value.size()),
                    h);
    }
    return hex_digest(h);
}

Eigen::MatrixXd encode_skeleton(GraphEncoder& encoder,
                                const std::vector<const SkeletonSequence*>& batch,
                                StreamKind stream, const BoneTable& bones, bool training) {
    if (batch.empty()) throw DataError("encode_skeleton: empty batch");
    const auto& first = *batch[0];
    std::string offenders;
    for (const auto* s : batch) {
        if (s->frames() != first.frames() || s->joints != first.joints ||
            s->bodies != first.bodies)
            offenders += (offenders.empty() ? "" : ", ") + s->sample_id;
    }
    if (!offenders.empty())
        throw DataError("encode_skeleton: shape mismatch within batch: " + offenders);

    std::vector<Eigen::MatrixXd> streams;
    streams.reserve(batch.size());
    std::vector<const Eigen::MatrixXd*> rows;
    rows.reserve(batch.size());
    for (const auto* s : batch) {
        streams.push_back(derive_stream(*s, stream, bones).data);
        rows.push_back(&streams.back());
    }
    FrameBlock in = to_frame_block(rows, first.joints, first.bodies);
    return encoder.forward(in, training);
}

// ---------------------------------------------------------------------------
// Projector
// ---------------------------------------------------------------------------

Projector::Projector(const std::string& name, int in_dim, int hidden_dim, int out_dim,
                     bool hidden_bias, std::uint64_t seed)
    : w1_(name + ".W1", in_dim, hidden_dim), b1_(name + ".b1", 1, hidden_dim),
      w2_(name + ".W2", hidden_dim, out_dim), hidden_bias_(hidden_bias) {
    std::mt19937_64 rng(seed);
    xavier_uniform(w1_.value, rng);
    xavier_uniform(w2_.value, rng);
    // nonzero bias keeps all-zero feature rows away from the normalization origin
    if (hidden_bias_) b1_.value.setConstant(0.1);
}

Eigen::MatrixXd Projector::forward(const Eigen::MatrixXd& features, bool training) {
    if (features.cols() != w1_.value.rows())
        throw DataError("projector: feature dim " + std::to_string(features.cols()) +
                        " != expected " + std::to_string(w1_.value.rows()));
    Eigen::MatrixXd pre = features * w1_.value;
    if (hidden_bias_) pre.rowwise() += b1_.value.row(0);
    Eigen::MatrixXd mask = (pre.array() > 0.0).cast<double>().matrix();
    Eigen::MatrixXd h = pre.cwiseProduct(mask);
    Eigen::MatrixXd z = h * w2_.value;
    Eigen::MatrixXd e = row_normalize<double>(z);
    if (training) {
        cache_x_ = features;
        cache_mask_ = std::move(mask);
        cache_h_ = std::move(h);
        cache_z_ = std::move(z);
    } else {
        cache_z_ = std::move(z);
    }
    return e;
}

Eigen::MatrixXd Projector::backward(const Eigen::MatrixXd& d_embeddings) {
    Eigen::MatrixXd dz = row_normalize_backward<double>(cache_z_, d_embeddings);
    w2_.grad.noalias() += cache_h_.transpose() * dz;
    Eigen::MatrixXd dh = dz * w2_.value.transpose();
    Eigen::MatrixXd dpre = dh.cwiseProduct(cache_mask_);
    w1_.grad.noalias() += cache_x_.transpose() * dpre;
    if (hidden_bias_) b1_.grad.row(0) += dpre.colwise().sum();
    return dpre * w1_.value.transpose();
}

std::vector<Param*> Projector::params() {
    if (hidden_bias_) return {&w1_, &b1_, &w2_};
    return {&w1_, &w2_};
}

// ---------------------------------------------------------------------------
// TemperatureParam
// ---------------------------------------------------------------------------

TemperatureParam TemperatureParam::init(double tau0, bool learn) {
    TemperatureParam t;
    if (!(tau0 > 0.0)) throw ConfigError("temperature init must be positive");
    t.log_tau = std::log(tau0);
    t.learnable = learn;
    return t;
}

double TemperatureParam::tau() const {
    return std::clamp(std::exp(log_tau), min_tau, max_tau);
}

void TemperatureParam::apply_grad(double d_log_tau, double lr) {
    if (!learnable) return;
    log_tau -= lr * d_log_tau;
    log_tau = std::clamp(log_tau, std::log(min_tau), std::log(max_tau));
}

// ---------------------------------------------------------------------------
// Frozen encoders
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double uniform01(std::uint64_t& state) {
    return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

}  // namespace

StubFrozenEncoder::StubFrozenEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 2) throw ConfigError("stub encoder dim must be >= 2");
}

Eigen::VectorXd StubFrozenEncoder::embed(std::uint64_t content_hash) const {
    std::uint64_t state = content_hash ^ (seed_ * 0x9e3779b97f4a7c15ull + 0x1234abcd);
    Eigen::VectorXd v(dim_);
    for (int i = 0; i < dim_; i += 2) {
        // Box-Muller keeps the generator portable across standard libraries
        double u1 = std::max(uniform01(state), 1e-300);
        double u2 = uniform01(state);
        double r = std::sqrt(-2.0 * std::log(u1));
        v(i) = r * std::cos(2.0 * M_PI * u2);
        if (i + 1 < dim_) v(i + 1) = r * std::sin(2.0 * M_PI * u2);
    }
    double n = v.norm();
    return n > 0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Unit(dim_, 0);
}

Eigen::MatrixXd StubFrozenEncoder::encode_images(const std::vector<ImageBuffer>& images) {
    if (images.empty()) throw DataError("encode_images: empty input");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dim_);
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::uint64_t h = fnv1a64_bytes(images[i].rgb.data(), images[i].rgb.size());
        h = fnv1a64("image", h);
        out.row(i) = embed(h).transpose();
    }
    return out;
}

Eigen::MatrixXd StubFrozenEncoder::encode_texts(const std::vector<std::string>& texts) {
    if (texts.empty()) throw DataError("encode_texts: empty input");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(texts.size()), dim_);
    for (std::size_t i = 0; i < texts.size(); ++i) {
        std::uint64_t h = fnv1a64(texts[i]);
        h = fnv1a64("text", h);
        out.row(i) = embed(h).transpose();
    }
    return out;
}

std::string StubFrozenEncoder::weight_digest() const {
    std::uint64_t h = fnv1a64("stub-frozen-encoder");
    h = fnv1a64_bytes(&dim_, sizeof(dim_), h);
    h = fnv1a64_bytes(&seed_, sizeof(seed_), h);
    return hex_digest(h);
}

RemoteFrozenEncoder::RemoteFrozenEncoder(const std::string& base_url, int timeout_seconds)
    : base_url_(base_url), timeout_seconds_(timeout_seconds) {
    httplib::Client cli(base_url_);
    cli.set_connection_timeout(timeout_seconds_);
    cli.set_read_timeout(timeout_seconds_);
    auto res = cli.Get("/info");
    if (!res || res->status != 200)
        throw TransportError("frozen encoder endpoint unreachable: " + base_url_ + "/info");
    try {
        auto j = nlohmann::json::parse(res->body);
        dim_ = j.at("dim").get<int>();
        name_ = j.value("name", "remote-frozen-encoder");
        digest_ = j.value("digest", "");
    } catch (const std::exception& e) {
        throw TransportError(std::string("bad /info response: ") + e.what(), false);
    }
    if (digest_.empty()) digest_ = hex_digest(fnv1a64(name_ + ":" + std::to_string(dim_)));
}

namespace {

Eigen::MatrixXd parse_embeddings(const std::string& body, std::size_t expected_rows, int dim) {
    nlohmann::json j = nlohmann::json::parse(body);
    const auto& rows = j.at("embeddings");
    if (rows.size() != expected_rows)
        throw TransportError("embedding count mismatch from remote encoder", false);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(expected_rows), dim);
    for (std::size_t i = 0; i < expected_rows; ++i) {
        const auto& r = rows[i];
        if (static_cast<int>(r.size()) != dim)
            throw TransportError("embedding dim mismatch from remote encoder", false);
        for (int k = 0; k < dim; ++k) out(static_cast<Eigen::Index>(i), k) = r[k].get<double>();
    }
    return row_normalize<double>(out);
}

}  // namespace

Eigen::MatrixXd RemoteFrozenEncoder::encode_images(const std::vector<ImageBuffer>& images) {
    if (images.empty()) throw DataError("encode_images: empty input");
    nlohmann::json req;
    auto& arr = req["images_b64"] = nlohmann::json::array();
    for (const auto& img : images) arr.push_back(base64_encode(encode_ppm(img)));
    httplib::Client cli(base_url_);
    cli.set_read_timeout(timeout_seconds_);
    auto res = cli.Post("/encode_images", req.dump(), "application/json");
    if (!res || res->status != 200) throw TransportError("encode_images request failed");
    return parse_embeddings(res->body, images.size(), dim_);
}

Eigen::MatrixXd RemoteFrozenEncoder::encode_texts(const std::vector<std::string>& texts) {
    if (texts.empty()) throw DataError("encode_texts: empty input");
    nlohmann::json req;
    req["texts"] = texts;
    httplib::Client cli(base_url_);
    cli.set_read_timeout(timeout_seconds_);
    auto res = cli.Post("/encode_texts", req.dump(), "application/json");
    if (!res || res->status != 200) throw TransportError("encode_texts request failed");
    return parse_embeddings(res->body, texts.size(), dim_);
}

std::unique_ptr<FrozenEncoder> make_frozen_encoder(const std::string& kind, int stub_dim,
                                                   std::uint64_t stub_seed) {
    if (kind == "stub") return std::make_unique<StubFrozenEncoder>(stub_dim, stub_seed);
    if (kind == "clip-vit-l14-336") {
        auto url = env_var("C2VL_CLIP_PATH");
        if (!url || url->empty())
            throw ConfigError(
                "frozen_encoder 'clip-vit-l14-336' needs C2VL_CLIP_PATH set to a serving "
                "endpoint; use frozen_encoder: stub for local runs");
        return std::make_unique<RemoteFrozenEncoder>(*url);
    }
    throw ConfigError("unknown frozen_encoder kind: " + kind);
}

}  // namespace c2vl
