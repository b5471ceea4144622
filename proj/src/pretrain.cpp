#include "c2vl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "c2vl/common.hpp"
#include "c2vl/losses.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c2vl {

// ---------------------------------------------------------------------------
// EmbeddingStore
// ---------------------------------------------------------------------------

void EmbeddingStore::build_index() const {
    if (!index_.empty()) return;
    for (std::size_t i = 0; i < sample_ids.size(); ++i)
        index_[sample_ids[i]] = static_cast<int>(i);
}

int EmbeddingStore::row_of(const std::string& sample_id) const {
    build_index();
    auto it = index_.find(sample_id);
    if (it == index_.end())
        throw NotFoundError("embedding store has no row for sample " + sample_id);
    return it->second;
}

bool EmbeddingStore::contains(const std::string& sample_id) const {
    build_index();
    return index_.count(sample_id) != 0;
}

namespace {

std::string matrix_to_f32_blob(const Eigen::MatrixXd& m) {
    std::string blob;
    blob.reserve(static_cast<std::size_t>(m.size()) * sizeof(float));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            float v = static_cast<float>(m(i, j));
            blob.append(reinterpret_cast<const char*>(&v), sizeof(float));
        }
    }
    return blob;
}

Eigen::MatrixXd matrix_from_f32_blob(const std::string& blob, Eigen::Index rows,
                                     Eigen::Index cols, const std::string& path) {
    if (blob.size() != static_cast<std::size_t>(rows * cols) * sizeof(float))
        throw ParseError(path, blob.size(), "blob size does not match matrix shape");
    Eigen::MatrixXd m(rows, cols);
    const char* p = blob.data();
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            float v;
            std::memcpy(&v, p, sizeof(float));
            p += sizeof(float);
            m(i, j) = static_cast<double>(v);
        }
    }
    return m;
}

}  // namespace

void EmbeddingStore::save(const std::string& dir) const {
    fs::create_directories(dir);
    json index;
    index["version"] = kEmbeddingStoreVersion;
    index["dim"] = dim;
    index["sample_ids"] = sample_ids;
    std::string v = matrix_to_f32_blob(vision);
    std::string l = matrix_to_f32_blob(language);
    write_file_bytes(dir + "/vision.bin", v.data(), v.size());
    write_file_bytes(dir + "/language.bin", l.data(), l.size());
    atomic_write_file(dir + "/index.json", index.dump(2) + "\n");
}

EmbeddingStore EmbeddingStore::load(const std::string& dir) {
    const std::string index_path = dir + "/index.json";
    std::ifstream in(index_path);
    if (!in) throw ParseError(index_path, 0, "cannot open embedding store index");
    json index;
    try {
        in >> index;
    } catch (const std::exception& e) {
        throw ParseError(index_path, 0, std::string("invalid JSON: ") + e.what());
    }
    if (index.value("version", "") != kEmbeddingStoreVersion)
        throw ParseError(index_path, 0, "embedding store version mismatch");
    EmbeddingStore store;
    store.dim = index.at("dim").get<int>();
    store.sample_ids = index.at("sample_ids").get<std::vector<std::string>>();
    const auto n = static_cast<Eigen::Index>(store.sample_ids.size());
    store.vision = row_normalize<double>(
        matrix_from_f32_blob(read_file_bytes(dir + "/vision.bin"), n, store.dim, dir));
    store.language = row_normalize<double>(
        matrix_from_f32_blob(read_file_bytes(dir + "/language.bin"), n, store.dim, dir));
    return store;
}

namespace {

EmbeddingStore embed_sorted(const std::vector<std::string>& ids,
                            const std::vector<ImageBuffer>& crops,
                            const std::vector<std::string>& texts, FrozenEncoder& encoder) {
    EmbeddingStore store;
    store.dim = encoder.dim();
    store.sample_ids = ids;
    store.vision.resize(static_cast<Eigen::Index>(ids.size()), store.dim);
    store.language.resize(static_cast<Eigen::Index>(ids.size()), store.dim);
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < ids.size(); start += kChunk) {
        std::size_t end = std::min(ids.size(), start + kChunk);
        std::vector<ImageBuffer> img_chunk(crops.begin() + start, crops.begin() + end);
        std::vector<std::string> txt_chunk(texts.begin() + start, texts.begin() + end);
        store.vision.middleRows(static_cast<Eigen::Index>(start),
                                static_cast<Eigen::Index>(end - start)) =
            encoder.encode_images(img_chunk);
        store.language.middleRows(static_cast<Eigen::Index>(start),
                                  static_cast<Eigen::Index>(end - start)) =
            encoder.encode_texts(txt_chunk);
    }
    return store;
}

}  // namespace

EmbeddingStore precompute_prompt_embeddings(const PromptCache& cache, FrozenEncoder& encoder) {
    auto records = cache.all_sorted();
    if (records.empty()) throw DataError("prompt cache is empty");
    std::vector<std::string> ids;
    std::vector<ImageBuffer> crops;
    std::vector<std::string> texts;
    for (const auto& r : records) {
        ids.push_back(r.sample_id);
        crops.push_back(decode_ppm(cache.load_crop(r)));
        texts.push_back(r.language.text);
    }
    return embed_sorted(ids, crops, texts, encoder);
}

EmbeddingStore embed_prompt_records(const std::vector<PromptRecord>& records,
                                    FrozenEncoder& encoder) {
    if (records.empty()) throw DataError("no prompt records");
    std::vector<const PromptRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](const PromptRecord* a, const PromptRecord* b) {
                  return a->sample_id < b->sample_id;
              });
    std::vector<std::string> ids;
    std::vector<ImageBuffer> crops;
    std::vector<std::string> texts;
    for (const auto* r : sorted) {
        ids.push_back(r->sample_id);
        crops.push_back(decode_ppm(r->vision.crop));
        texts.push_back(r->language.text);
    }
    return embed_sorted(ids, crops, texts, encoder);
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << "epoch,alpha,lr,loss_total,loss_sv_intra,loss_sv_inter,loss_sl_intra,loss_sl_inter,"
           "tau\n";
    out.precision(12);
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.alpha << ',' << r.lr << ',' << r.loss_total << ','
            << r.sv_intra << ',' << r.sv_inter << ',' << r.sl_intra << ',' << r.sl_inter << ','
            << r.tau << '\n';
    }
    atomic_write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'C', '2', 'V', 'L', 'C', 'K', 'P', 'T'};

json metrics_to_json(const std::vector<MetricsRow>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({r.epoch, r.alpha, r.lr, r.loss_total, r.sv_intra, r.sv_inter, r.sl_intra,
                       r.sl_inter, r.tau});
    return out;
}

std::vector<MetricsRow> metrics_from_json(const json& j) {
    std::vector<MetricsRow> out;
    for (const auto& row : j) {
        MetricsRow r;
        r.epoch = row[0].get<int>();
        r.alpha = row[1].get<double>();
        r.lr = row[2].get<double>();
        r.loss_total = row[3].get<double>();
        r.sv_intra = row[4].get<double>();
        r.sv_inter = row[5].get<double>();
        r.sl_intra = row[6].get<double>();
        r.sl_inter = row[7].get<double>();
        r.tau = row[8].get<double>();
        out.push_back(r);
    }
    return out;
}
}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::string blob;
    json manifest = json::array();
    for (const auto& [name, m] : tensors) {
        manifest.push_back({{"name", name},
                            {"rows", m.rows()},
                            {"cols", m.cols()},
                            {"offset", blob.size()}});
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                double v = m(i, j);
                blob.append(reinterpret_cast<const char*>(&v), sizeof(double));
            }
        }
    }

    json header;
    header["version"] = kCheckpointVersion;
    header["epoch"] = epoch;
    header["step"] = step;
    header["seed"] = seed;
    header["config_digest"] = config_digest;
    header["stream"] = stream;
    header["tau"] = {{"log_tau", log_tau}, {"learnable", tau_learnable}};
    header["arch"] = {{"joints", arch.joints},
                      {"bodies", arch.bodies},
                      {"channels", arch.channels},
                      {"strides", arch.strides},
                      {"temporal_kernel", arch.temporal_kernel}};
    header["bones"] = bone_parents;
    header["projector_hidden"] = projector_hidden;
    header["embed_dim"] = embed_dim;
    header["tensors"] = std::move(manifest);
    header["metrics"] = metrics_to_json(metrics);
    header["blob_digest"] = hex_digest(fnv1a64_bytes(blob.data(), blob.size()));

    std::string head = header.dump();
    std::string file;
    file.append(kCkptMagic, sizeof(kCkptMagic));
    std::uint64_t len = head.size();
    file.append(reinterpret_cast<const char*>(&len), sizeof(len));
    file += head;
    file += blob;
    atomic_write_file(path, file);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::string file = read_file_bytes(path);
    if (file.size() < sizeof(kCkptMagic) + sizeof(std::uint64_t) ||
        std::memcmp(file.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
        throw ParseError(path, 0, "not a checkpoint file");
    std::uint64_t len;
    std::memcpy(&len, file.data() + sizeof(kCkptMagic), sizeof(len));
    std::size_t head_start = sizeof(kCkptMagic) + sizeof(std::uint64_t);
    if (head_start + len > file.size())
        throw ParseError(path, head_start, "truncated checkpoint header");
    json header;
    try {
        header = json::parse(file.substr(head_start, len));
    } catch (const std::exception& e) {
        throw ParseError(path, head_start, std::string("bad checkpoint header: ") + e.what());
    }
    if (header.value("version", "") != kCheckpointVersion)
        throw ParseError(path, 0, "checkpoint version mismatch, expected " +
                                      std::string(kCheckpointVersion));

    Checkpoint c;
    c.epoch = header.at("epoch").get<int>();
    c.step = header.at("step").get<long long>();
    c.seed = header.at("seed").get<std::uint64_t>();
    c.config_digest = header.value("config_digest", "");
    c.stream = header.value("stream", "joint");
    c.log_tau = header.at("tau").at("log_tau").get<double>();
    c.tau_learnable = header.at("tau").at("learnable").get<bool>();
    c.arch.joints = header.at("arch").at("joints").get<int>();
    c.arch.bodies = header.at("arch").at("bodies").get<int>();
    c.arch.channels = header.at("arch").at("channels").get<std::vector<int>>();
    c.arch.strides = header.at("arch").at("strides").get<std::vector<int>>();
    c.arch.temporal_kernel = header.at("arch").at("temporal_kernel").get<int>();
    c.bone_parents = header.at("bones").get<std::vector<int>>();
    c.projector_hidden = header.at("projector_hidden").get<int>();
    c.embed_dim = header.at("embed_dim").get<int>();
    c.metrics = metrics_from_json(header.at("metrics"));

    const std::size_t blob_start = head_start + len;
    const std::string blob = file.substr(blob_start);
    if (header.value("blob_digest", "") != hex_digest(fnv1a64_bytes(blob.data(), blob.size())))
        throw ParseError(path, blob_start, "checkpoint blob digest mismatch");
    for (const auto& t : header.at("tensors")) {
        const auto rows = t.at("rows").get<Eigen::Index>();
        const auto cols = t.at("cols").get<Eigen::Index>();
        const auto offset = t.at("offset").get<std::size_t>();
        const std::size_t need = static_cast<std::size_t>(rows * cols) * sizeof(double);
        if (offset + need > blob.size())
            throw ParseError(path, blob_start + offset, "truncated tensor data");
        Eigen::MatrixXd m(rows, cols);
        const char* p = blob.data() + offset;
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                double v;
                std::memcpy(&v, p, sizeof(double));
                p += sizeof(double);
                m(i, j) = v;
            }
        }
        c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    return c;
}

std::vector<std::string> Checkpoint::tensor_names() const {
    std::vector<std::string> out;
    for (const auto& [name, m] : tensors) out.push_back(name);
    return out;
}

const Eigen::MatrixXd* Checkpoint::find_tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

std::vector<Param*> PretrainModel::trainable_params() {
    std::vector<Param*> out = encoder->params();
    for (Param* p : proj_v->params()) out.push_back(p);
    for (Param* p : proj_l->params()) out.push_back(p);
    return out;
}

PretrainModel build_model(const EncoderConfig& arch, const BoneTable& bones, int projector_hidden,
                          int embed_dim, double tau0, bool tau_learnable, std::uint64_t seed) {
    PretrainModel m;
    m.arch = arch;
    m.bones = bones;
    m.encoder = std::make_unique<GraphEncoder>(arch, bones, seed);
    m.proj_v = std::make_unique<Projector>("projector_v", arch.feature_dim(), projector_hidden,
                                           embed_dim, true, seed ^ 0x9e37u);
    m.proj_l = std::make_unique<Projector>("projector_l", arch.feature_dim(), projector_hidden,
                                           embed_dim, true, seed ^ 0x7f4au);
    m.tau = TemperatureParam::init(tau0, tau_learnable);
    m.projector_hidden = projector_hidden;
    m.embed_dim = embed_dim;
    return m;
}

PretrainModel model_from_checkpoint(const Checkpoint& ckpt) {
    BoneTable bones;
    bones.joints = ckpt.arch.joints;
    bones.parent = ckpt.bone_parents;
    PretrainModel m = build_model(ckpt.arch, bones, ckpt.projector_hidden, ckpt.embed_dim,
                                  std::exp(ckpt.log_tau), ckpt.tau_learnable, ckpt.seed);
    m.tau.log_tau = ckpt.log_tau;
    for (Param* p : m.trainable_params()) {
        const Eigen::MatrixXd* t = ckpt.find_tensor(p->name);
        if (t == nullptr) throw DataError("checkpoint missing tensor " + p->name);
        if (t->rows() != p->value.rows() || t->cols() != p->value.cols())
            throw DataError("checkpoint tensor " + p->name + " has wrong shape");
        p->value = *t;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Pretrainer
// ---------------------------------------------------------------------------

namespace {

BoneTable builtin_bones(const std::string& dataset_kind, int joints) {
    if (dataset_kind == "synth") return BoneTable::chain(joints);
    if (joints == 25) return BoneTable::ntu25();
    return BoneTable::chain(joints);
}

}  // namespace

BoneTable bones_for(const DatasetConfig& dc, int joints) {
    if (!dc.bones_file.empty()) {
        BoneTable b = BoneTable::from_json_file(dc.bones_file);
        if (b.joints != joints)
            throw ConfigError("bone table joints (" + std::to_string(b.joints) +
                              ") do not match dataset joints (" + std::to_string(joints) + ")");
        return b;
    }
    return builtin_bones(dc.kind, joints);
}

Pretrainer::Pretrainer(const RunConfig& cfg, const BoneTable& bones, int joints, int bodies,
                       StreamKind stream)
    : cfg_(cfg), stream_(stream) {
    EncoderConfig arch;
    arch.joints = joints;
    arch.bodies = bodies;
    arch.channels = cfg.encoder.channels;
    arch.strides = cfg.encoder.strides;
    arch.temporal_kernel = cfg.encoder.temporal_kernel;
    model_ = build_model(arch, bones, cfg.encoder.projector_hidden, cfg.encoder.embed_dim,
                         cfg.temperature.init, cfg.temperature.mode == "learnable",
                         cfg.seed ^ fnv1a64(to_string(stream)));
}

void Pretrainer::restore(const Checkpoint& ckpt) {
    if (ckpt.config_digest != cfg_.digest)
        warn("resuming from a checkpoint with a different config digest (" + ckpt.config_digest +
             " vs " + cfg_.digest + ")");
    PretrainModel restored = model_from_checkpoint(ckpt);
    model_ = std::move(restored);
    start_epoch_ = ckpt.epoch;
    step_ = ckpt.step;
    metrics_ = ckpt.metrics;
    // velocity buffers are re-attached in run() once the optimizer exists
    pending_velocity_.clear();
    for (const auto& [name, m] : ckpt.tensors) {
        if (name.rfind("opt.", 0) == 0) pending_velocity_.emplace_back(name.substr(4), m);
    }
}

Checkpoint Pretrainer::snapshot(int epochs_done) const {
    Checkpoint c;
    c.epoch = epochs_done;
    c.step = step_;
    c.seed = cfg_.seed;
    c.config_digest = cfg_.digest;
    c.stream = to_string(stream_);
    c.log_tau = model_.tau.log_tau;
    c.tau_learnable = model_.tau.learnable;
    c.arch = model_.arch;
    c.bone_parents = model_.bones.parent;
    c.projector_hidden = model_.projector_hidden;
    c.embed_dim = model_.embed_dim;
    c.metrics = metrics_;
    auto& self = const_cast<Pretrainer&>(*this);
    for (Param* p : self.model_.trainable_params()) c.tensors.emplace_back(p->name, p->value);
    if (opt_) {
        const auto& params = opt_->params();
        auto& vel = const_cast<SgdOptimizer&>(*opt_).velocity();
        for (std::size_t i = 0; i < params.size(); ++i)
            c.tensors.emplace_back("opt." + params[i]->name, vel[i]);
    }
    return c;
}

MetricsRow Pretrainer::train_epoch(int epoch, const std::vector<const SkeletonSequence*>& train,
                                   const EmbeddingStore& store) {
    AlphaSchedule sched{cfg_.schedule.alpha_start, cfg_.schedule.alpha_end,
                       cfg_.optimizer.epochs};
    const bool infonce = cfg_.loss.mode == "infonce";
    double alpha = infonce                    ? 1.0
                   : cfg_.schedule.progressive ? alpha_at(epoch, sched)
                                               : cfg_.schedule.alpha_fixed;
    const double lr = lr_at(epoch, cfg_.optimizer);
    const double beta = (infonce || !cfg_.loss.intra) ? 0.0 : cfg_.loss.beta;

    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::mt19937_64 rng(cfg_.seed ^ fnv1a64("epoch-shuffle", 0x9e3779b97f4a7c15ull +
                                                                static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    LossConfig loss_cfg;
    loss_cfg.beta = beta;
    loss_cfg.shared_target_temperature = cfg_.loss.target_temperature == "shared";

    double sum_total = 0, sum_svi = 0, sum_svt = 0, sum_sli = 0, sum_slt = 0;
    long samples_seen = 0;

    const int bsz = cfg_.optimizer.batch_size;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(bsz)) {
        std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(bsz));
        const int b = static_cast<int>(end - start);

        std::vector<const SkeletonSequence*> batch;
        batch.reserve(b);
        Eigen::MatrixXd v(b, store.dim), l(b, store.dim);
        std::vector<std::string> batch_ids;
        for (std::size_t i = start; i < end; ++i) {
            const auto* seq = train[order[i]];
            batch.push_back(seq);
            batch_ids.push_back(seq->sample_id);
            int row = store.row_of(seq->sample_id);
            v.row(static_cast<Eigen::Index>(i - start)) = store.vision.row(row);
            l.row(static_cast<Eigen::Index>(i - start)) = store.language.row(row);
        }

        opt_->zero_grad();
        Eigen::MatrixXd feats =
            encode_skeleton(*model_.encoder, batch, stream_, model_.bones, true);
        Eigen::MatrixXd s_v = model_.proj_v->forward(feats, true);
        Eigen::MatrixXd s_l = model_.proj_l->forward(feats, true);

        const double tau = model_.tau.tau();
        const double tau_t = loss_cfg.shared_target_temperature ? tau : 1.0;

        // teacher targets from detached values of the same forward pass
        PairTargets<double> tv = make_pair_targets<double>(s_v, v, beta, tau_t);
        PairTargets<double> tl = make_pair_targets<double>(s_l, l, beta, tau_t);
        if (infonce || !cfg_.loss.inter) {
            tv.q_x2y = Eigen::MatrixXd::Identity(b, b);
            tv.q_y2x = Eigen::MatrixXd::Identity(b, b);
            tl.q_x2y = Eigen::MatrixXd::Identity(b, b);
            tl.q_y2x = Eigen::MatrixXd::Identity(b, b);
        }

        Eigen::MatrixXd d_sv = Eigen::MatrixXd::Zero(b, store.dim);
        Eigen::MatrixXd d_sl = Eigen::MatrixXd::Zero(b, store.dim);
        double d_log_tau = 0;
        double total = 0, svi = 0, svt = 0, sli = 0, slt = 0;

        auto accumulate = [&](const BatchPartition& part) {
            PairGrads<double> gv = pair_soft_loss_grad<double>(s_v, v, tv, part, tau, loss_cfg);
            PairGrads<double> gl = pair_soft_loss_grad<double>(s_l, l, tl, part, tau, loss_cfg);
            d_sv += gv.d_x;
            d_sl += gl.d_x;
            d_log_tau += gv.d_log_tau + gl.d_log_tau;
            svi += gv.value.intra;
            svt += gv.value.inter;
            sli += gl.value.intra;
            slt += gl.value.inter;
            total += part.alpha * (gv.value.intra + gl.value.intra) +
                     (1.0 - part.alpha) * (gv.value.inter + gl.value.inter);
        };

        if (infonce || cfg_.schedule.dynamic_partition) {
            accumulate(partition_batch(b, infonce ? 1.0 : alpha));
        } else {
            // no row split: both target families cover the full batch
            accumulate(BatchPartition{b, b, 0, alpha});
            accumulate(BatchPartition{b, 0, b, alpha});
        }

        if (!std::isfinite(total)) {
            std::string ids;
            for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ", ") + id;
            throw DataError("NaN loss at epoch " + std::to_string(epoch) + "; batch ids: " + ids);
        }

        Eigen::MatrixXd d_feats = model_.proj_v->backward(d_sv) + model_.proj_l->backward(d_sl);
        model_.encoder->backward(d_feats);
        opt_->step(lr);
        model_.tau.apply_grad(d_log_tau, lr);

        sum_total += total * b;
        sum_svi += svi * b;
        sum_svt += svt * b;
        sum_sli += sli * b;
        sum_slt += slt * b;
        samples_seen += b;
        ++step_;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.alpha = alpha;
    row.lr = lr;
    row.loss_total = sum_total / static_cast<double>(samples_seen);
    row.sv_intra = sum_svi / static_cast<double>(samples_seen);
    row.sv_inter = sum_svt / static_cast<double>(samples_seen);
    row.sl_intra = sum_sli / static_cast<double>(samples_seen);
    row.sl_inter = sum_slt / static_cast<double>(samples_seen);
    row.tau = model_.tau.tau();
    return row;
}

TrainResult Pretrainer::run(const std::vector<const SkeletonSequence*>& train,
                            const EmbeddingStore& store, const std::string& out_dir,
                            int stop_after_epochs) {
    if (train.empty()) throw DataError("pretrain: empty training set");
    if (store.dim != model_.embed_dim)
        throw ConfigError("embedding store dim " + std::to_string(store.dim) +
                          " does not match encoder.embed_dim " +
                          std::to_string(model_.embed_dim));
    for (const auto* s : train) (void)store.row_of(s->sample_id);

    fs::create_directories(out_dir);
    opt_ = std::make_unique<SgdOptimizer>(model_.trainable_params(), cfg_.optimizer.momentum,
                                          cfg_.optimizer.weight_decay);
    if (!pending_velocity_.empty()) {
        auto& vel = opt_->velocity();
        const auto& params = opt_->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (const auto& [name, m] : pending_velocity_)
                if (name == params[i]->name) vel[i] = m;
        }
        pending_velocity_.clear();
    }

    const std::string ckpt_path = out_dir + "/checkpoint.c2vl";
    for (int epoch = start_epoch_; epoch < cfg_.optimizer.epochs; ++epoch) {
        MetricsRow row = train_epoch(epoch, train, store);
        metrics_.push_back(row);
        snapshot(epoch + 1).save(ckpt_path);
        write_metrics_csv(out_dir + "/metrics.csv", metrics_);
    }

    TrainResult result;
    result.checkpoint_path = ckpt_path;
    result.metrics = metrics_;
    return result;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

PretrainRunOutput pretrain_run(const RunConfig& cfg, const std::string& data_dir,
                               const std::string& cache_path, const std::string& out_dir,
                               const std::string& resume_ckpt) {
    auto [sequences, split] =
        load_dataset(data_dir, benchmark_from_string(cfg.dataset.benchmark),
                     cfg.dataset.split_file);
    if (sequences.empty()) throw DataError("dataset is empty");

    PromptCache cache(cache_path);
    std::vector<std::string> missing = missing_prompt_ids(cache, split.train_ids);
    if (!missing.empty()) {
        std::string head;
        for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i)
            head += (head.empty() ? "" : ", ") + missing[i];
        throw DataError("missing prompt records for " + std::to_string(missing.size()) +
                        " training samples (first: " + head + ")");
    }

    auto frozen = make_frozen_encoder(cfg.frozen_encoder, cfg.encoder.embed_dim, cfg.seed);
    if (frozen->dim() != cfg.encoder.embed_dim)
        throw ConfigError("frozen encoder dim " + std::to_string(frozen->dim()) +
                          " does not match encoder.embed_dim " +
                          std::to_string(cfg.encoder.embed_dim));

    fs::create_directories(out_dir);
    echo_config(cfg, out_dir);

    const std::string emb_dir = out_dir + "/embeddings";
    EmbeddingStore store;
    if (fs::exists(emb_dir + "/index.json")) {
        store = EmbeddingStore::load(emb_dir);
    } else {
        std::string digest_before = frozen->weight_digest();
        store = precompute_prompt_embeddings(cache, *frozen);
        if (frozen->weight_digest() != digest_before)
            throw DataError("frozen encoder weights changed during precompute");
        store.save(emb_dir);
    }

    std::unordered_map<std::string, const SkeletonSequence*> by_id;
    for (const auto& s : sequences) by_id[s.sample_id] = &s;
    std::vector<const SkeletonSequence*> train;
    for (const auto& id : split.train_ids) train.push_back(by_id.at(id));
    const int joints = train[0]->joints;
    const int bodies = train[0]->bodies;
    BoneTable bones = bones_for(cfg.dataset, joints);

    PretrainRunOutput out;
    out.embeddings_dir = emb_dir;
    for (const auto& stream_name : cfg.streams) {
        StreamKind stream = stream_kind_from_string(stream_name);
        Pretrainer trainer(cfg, bones, joints, bodies, stream);
        if (!resume_ckpt.empty()) trainer.restore(Checkpoint::load(resume_ckpt));
        TrainResult r = trainer.run(train, store, out_dir + "/" + stream_name);
        out.checkpoint_paths.push_back(r.checkpoint_path);
    }
    return out;
}

}  // namespace c2vl
