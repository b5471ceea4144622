#include "c2vl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "c2vl/common.hpp"
#include "c2vl/losses.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c2vl {

// ---------------------------------------------------------------------------
// EvalReport
// ---------------------------------------------------------------------------

double EvalReport::accuracy_from_confusion() const {
    double total = confusion.sum();
    return total > 0 ? confusion.trace() / total * 100.0 : 0.0;
}

json EvalReport::to_json() const {
    json j;
    j["protocol"] = protocol;
    j["benchmark"] = benchmark;
    j["top1"] = top1;
    j["per_class"] = std::vector<double>(per_class.data(), per_class.data() + per_class.size());
    j["config_digest"] = config_digest;
    return j;
}

void EvalReport::save(const std::string& dir, const std::string& stem) const {
    fs::create_directories(dir);
    json j = to_json();
    j["confusion_csv"] = stem + "_confusion.csv";
    atomic_write_file(dir + "/" + stem + ".json", j.dump(2) + "\n");
    std::ostringstream csv;
    for (Eigen::Index i = 0; i < confusion.rows(); ++i) {
        for (Eigen::Index k = 0; k < confusion.cols(); ++k) {
            if (k > 0) csv << ',';
            csv << confusion(i, k);
        }
        csv << '\n';
    }
    atomic_write_file(dir + "/" + stem + "_confusion.csv", csv.str());
}

std::vector<int> labels_of(const std::vector<const SkeletonSequence*>& seqs) {
    std::vector<int> out;
    out.reserve(seqs.size());
    for (const auto* s : seqs) {
        if (s->label < 0) throw DataError("sample " + s->sample_id + " has no label");
        out.push_back(s->label);
    }
    return out;
}

int count_classes(const std::vector<int>& labels) {
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    return k;
}

// ---------------------------------------------------------------------------
// Features and heads
// ---------------------------------------------------------------------------

Eigen::MatrixXd extract_features(GraphEncoder& encoder,
                                 const std::vector<const SkeletonSequence*>& seqs,
                                 StreamKind stream, const BoneTable& bones, int batch_size) {
    if (seqs.empty()) throw DataError("extract_features: empty input");
    Eigen::MatrixXd out(static_cast<Eigen::Index>(seqs.size()), encoder.feature_dim());
    for (std::size_t start = 0; start < seqs.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(seqs.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const SkeletonSequence*> batch(seqs.begin() + start, seqs.begin() + end);
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
            encode_skeleton(encoder, batch, stream, bones, false);
    }
    return out;
}

namespace {

// (softmax - onehot)/rows and the mean cross-entropy value
double softmax_ce_grad(const Eigen::MatrixXd& scores, const std::vector<int>& labels,
                       Eigen::MatrixXd* d_scores) {
    const auto n = scores.rows();
    Eigen::MatrixXd logp = row_log_softmax<double>(scores);
    double loss = 0;
    for (Eigen::Index i = 0; i < n; ++i) loss -= logp(i, labels[static_cast<std::size_t>(i)]);
    loss /= static_cast<double>(n);
    if (d_scores != nullptr) {
        *d_scores = row_softmax<double>(scores);
        for (Eigen::Index i = 0; i < n; ++i) (*d_scores)(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        *d_scores /= static_cast<double>(n);
    }
    return loss;
}

}  // namespace

void fit_standardizer(const Eigen::MatrixXd& x, Eigen::RowVectorXd* mean,
                      Eigen::RowVectorXd* inv_std) {
    *mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - *mean;
    Eigen::RowVectorXd var = centered.array().square().colwise().mean();
    *inv_std = (var.array() + 1e-12).sqrt().inverse();
}

Eigen::MatrixXd standardize_features(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mean,
                                     const Eigen::RowVectorXd& inv_std) {
    return (x.rowwise() - mean).array().rowwise() * inv_std.array();
}

LinearHead train_linear_head(const Eigen::MatrixXd& raw_features, const std::vector<int>& labels,
                             int n_classes, const HeadOptions& opts) {
    if (raw_features.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DataError("train_linear_head: features/labels count mismatch");
    LinearHead head;
    fit_standardizer(raw_features, &head.mean, &head.inv_std);
    Eigen::MatrixXd features = standardize_features(raw_features, head.mean, head.inv_std);
    std::mt19937_64 rng(opts.seed ^ fnv1a64("linear-head"));
    head.w.resize(features.cols(), n_classes);
    xavier_uniform(head.w, rng);
    head.b = Eigen::RowVectorXd::Zero(n_classes);

    Eigen::MatrixXd vw = Eigen::MatrixXd::Zero(head.w.rows(), head.w.cols());
    Eigen::RowVectorXd vb = Eigen::RowVectorXd::Zero(n_classes);

    OptimizerConfig lr_cfg;
    lr_cfg.lr0 = opts.lr;
    lr_cfg.milestones = opts.milestones;
    lr_cfg.gamma = opts.gamma;
    lr_cfg.epochs = opts.epochs;

    std::vector<int> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const double lr = lr_at(epoch, lr_cfg);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(opts.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            const auto b = static_cast<Eigen::Index>(end - start);
            Eigen::MatrixXd x(b, features.cols());
            std::vector<int> y(end - start);
            for (std::size_t i = start; i < end; ++i) {
                x.row(static_cast<Eigen::Index>(i - start)) = features.row(order[i]);
                y[i - start] = labels[static_cast<std::size_t>(order[i])];
            }
            Eigen::MatrixXd scores = (x * head.w).rowwise() + head.b;
            Eigen::MatrixXd dz;
            softmax_ce_grad(scores, y, &dz);
            Eigen::MatrixXd gw = x.transpose() * dz + opts.weight_decay * head.w;
            Eigen::RowVectorXd gb = dz.colwise().sum();
            vw = opts.momentum * vw + gw;
            vb = opts.momentum * vb + gb;
            head.w -= lr * vw;
            head.b -= lr * vb;
        }
    }
    return head;
}

Eigen::MatrixXd head_scores(const Eigen::MatrixXd& features, const LinearHead& head) {
    Eigen::MatrixXd z = head.mean.size() == features.cols()
                            ? standardize_features(features, head.mean, head.inv_std)
                            : features;
    return (z * head.w).rowwise() + head.b;
}

EvalReport report_from_scores(const std::string& protocol, const std::string& benchmark,
                              const Eigen::MatrixXd& scores, const std::vector<int>& labels,
                              int n_classes, const std::string& config_digest) {
    if (scores.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DataError("report_from_scores: scores/labels count mismatch");
    EvalReport r;
    r.protocol = protocol;
    r.benchmark = benchmark;
    r.config_digest = config_digest;
    r.confusion = Eigen::MatrixXd::Zero(n_classes, n_classes);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index pred;
        scores.row(i).maxCoeff(&pred);
        r.confusion(labels[static_cast<std::size_t>(i)], pred) += 1.0;
    }
    r.top1 = r.accuracy_from_confusion();
    r.per_class = Eigen::VectorXd::Zero(n_classes);
    for (int k = 0; k < n_classes; ++k) {
        double row_sum = r.confusion.row(k).sum();
        r.per_class(k) = row_sum > 0 ? r.confusion(k, k) / row_sum * 100.0 : 0.0;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

EvalReport linear_probe(PretrainModel& model, const std::vector<const SkeletonSequence*>& train,
                        const std::vector<const SkeletonSequence*>& test, StreamKind stream,
                        const HeadOptions& opts, const std::string& benchmark,
                        const std::string& config_digest) {
    std::vector<int> train_labels = labels_of(train);
    std::vector<int> test_labels = labels_of(test);
    int n_classes = std::max(count_classes(train_labels), count_classes(test_labels));

    Eigen::MatrixXd train_feats =
        extract_features(*model.encoder, train, stream, model.bones);
    Eigen::MatrixXd test_feats = extract_features(*model.encoder, test, stream, model.bones);
    LinearHead head = train_linear_head(train_feats, train_labels, n_classes, opts);
    return report_from_scores("linear", benchmark, head_scores(test_feats, head), test_labels,
                              n_classes, config_digest);
}

EvalReport finetune_eval(PretrainModel& model, const std::vector<const SkeletonSequence*>& train,
                         const std::vector<const SkeletonSequence*>& test, StreamKind stream,
                         const HeadOptions& opts, const std::string& benchmark,
                         const std::string& config_digest) {
    std::vector<int> train_labels = labels_of(train);
    std::vector<int> test_labels = labels_of(test);
    int n_classes = std::max(count_classes(train_labels), count_classes(test_labels));

    std::mt19937_64 rng(opts.seed ^ fnv1a64("finetune"));
    Param head_w("head.W", model.encoder->feature_dim(), n_classes);
    Param head_b("head.b", 1, n_classes);
    xavier_uniform(head_w.value, rng);

    // feature standardization frozen at the pretrained statistics
    Eigen::RowVectorXd mu, inv_std;
    {
        Eigen::MatrixXd init_feats =
            extract_features(*model.encoder, train, stream, model.bones);
        fit_standardizer(init_feats, &mu, &inv_std);
    }

    std::vector<Param*> params = model.encoder->params();
    params.push_back(&head_w);
    params.push_back(&head_b);
    SgdOptimizer opt(params, opts.momentum, opts.weight_decay);

    OptimizerConfig lr_cfg;
    lr_cfg.lr0 = opts.lr;
    lr_cfg.milestones = opts.milestones;
    lr_cfg.gamma = opts.gamma;
    lr_cfg.epochs = opts.epochs;

    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const double lr = lr_at(epoch, lr_cfg);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(opts.batch_size)) {
            std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch_size));
            std::vector<const SkeletonSequence*> batch;
            std::vector<int> y;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(train[static_cast<std::size_t>(order[i])]);
                y.push_back(train_labels[static_cast<std::size_t>(order[i])]);
            }
            opt.zero_grad();
            Eigen::MatrixXd feats =
                encode_skeleton(*model.encoder, batch, stream, model.bones, true);
            Eigen::MatrixXd z = standardize_features(feats, mu, inv_std);
            Eigen::MatrixXd scores = (z * head_w.value).rowwise() + head_b.value.row(0);
            Eigen::MatrixXd dscores;
            softmax_ce_grad(scores, y, &dscores);
            head_w.grad.noalias() += z.transpose() * dscores;
            head_b.grad.row(0) += dscores.colwise().sum();
            Eigen::MatrixXd d_feats =
                (dscores * head_w.value.transpose()).array().rowwise() * inv_std.array();
            model.encoder->backward(d_feats);
            opt.step(lr);
        }
    }

    Eigen::MatrixXd test_feats = extract_features(*model.encoder, test, stream, model.bones);
    Eigen::MatrixXd scores =
        (standardize_features(test_feats, mu, inv_std) * head_w.value).rowwise() +
        head_b.value.row(0);
    return report_from_scores("finetune", benchmark, scores, test_labels, n_classes,
                              config_digest);
}

std::vector<int> knn_predict(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_labels,
                             int n_classes, const Eigen::MatrixXd& query, int k,
                             bool exclude_self) {
    if (gallery.rows() == 0) throw DataError("knn: empty gallery");
    if (k < 1 || k > gallery.rows())
        throw ConfigError("knn: k=" + std::to_string(k) + " exceeds gallery size " +
                          std::to_string(gallery.rows()));
    Eigen::MatrixXd g = row_normalize<double>(gallery);
    Eigen::MatrixXd q = row_normalize<double>(query);

    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(q.rows()));
    std::vector<int> idx(static_cast<std::size_t>(g.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        Eigen::VectorXd sims = g * q.row(i).transpose();
        std::iota(idx.begin(), idx.end(), 0);
        if (exclude_self && i < g.rows()) sims(i) = -2.0;  // below any cosine
        auto kth = idx.begin() + k;
        std::partial_sort(idx.begin(), kth, idx.end(), [&](int a, int b) {
            if (sims(a) != sims(b)) return sims(a) > sims(b);
            return a < b;  // stable under similarity ties
        });
        std::vector<int> votes(static_cast<std::size_t>(n_classes), 0);
        std::vector<double> weight(static_cast<std::size_t>(n_classes), 0.0);
        for (int j = 0; j < k; ++j) {
            int cls = gallery_labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
            votes[static_cast<std::size_t>(cls)] += 1;
            weight[static_cast<std::size_t>(cls)] += sims(idx[static_cast<std::size_t>(j)]);
        }
        int best = 0;
        for (int c = 1; c < n_classes; ++c) {
            if (votes[c] > votes[best] ||
                (votes[c] == votes[best] && weight[c] > weight[best]))
                best = c;
        }
        out.push_back(best);
    }
    return out;
}

EvalReport knn_eval(const Eigen::MatrixXd& gallery, const std::vector<int>& gallery_labels,
                    const Eigen::MatrixXd& query, const std::vector<int>& query_labels,
                    int n_classes, int k, bool exclude_self, const std::string& benchmark,
                    const std::string& config_digest) {
    std::vector<int> preds = knn_predict(gallery, gallery_labels, n_classes, query, k,
                                         exclude_self);
    EvalReport r;
    r.protocol = "knn";
    r.benchmark = benchmark;
    r.config_digest = config_digest;
    r.confusion = Eigen::MatrixXd::Zero(n_classes, n_classes);
    for (std::size_t i = 0; i < preds.size(); ++i)
        r.confusion(query_labels[i], preds[i]) += 1.0;
    r.top1 = r.accuracy_from_confusion();
    r.per_class = Eigen::VectorXd::Zero(n_classes);
    for (int c = 0; c < n_classes; ++c) {
        double row_sum = r.confusion.row(c).sum();
        r.per_class(c) = row_sum > 0 ? r.confusion(c, c) / row_sum * 100.0 : 0.0;
    }
    return r;
}

std::vector<EvalReport> semi_eval(const Checkpoint& ckpt,
                                  const std::vector<const SkeletonSequence*>& train,
                                  const std::vector<const SkeletonSequence*>& test,
                                  StreamKind stream, const std::vector<double>& fractions,
                                  bool full_finetune, const HeadOptions& opts,
                                  const std::string& benchmark,
                                  const std::string& config_digest) {
    std::vector<int> train_labels = labels_of(train);
    std::vector<EvalReport> out;
    for (double f : fractions) {
        std::vector<int> subset = semi_subset(train_labels, f, opts.seed);
        std::vector<const SkeletonSequence*> sub;
        for (int i : subset) sub.push_back(train[static_cast<std::size_t>(i)]);

        PretrainModel model = model_from_checkpoint(ckpt);
        EvalReport r = full_finetune
                           ? finetune_eval(model, sub, test, stream, opts, benchmark,
                                           config_digest)
                           : linear_probe(model, sub, test, stream, opts, benchmark,
                                          config_digest);
        r.protocol = "semi@" + std::to_string(f);
        out.push_back(std::move(r));
    }
    return out;
}

SkeletonSequence remap_joints(const SkeletonSequence& seq, int source_joints,
                              const std::vector<int>& joint_remap) {
    if (static_cast<int>(joint_remap.size()) != source_joints)
        throw ConfigError("joint remap table must list one target joint per source joint");
    SkeletonSequence out = seq;
    out.joints = source_joints;
    out.data.setZero(seq.frames(), out.row_width());
    for (int b = 0; b < seq.bodies; ++b) {
        for (int j = 0; j < source_joints; ++j) {
            int src = joint_remap[static_cast<std::size_t>(j)];
            if (src < 0) continue;
            if (src >= seq.joints)
                throw ConfigError("joint remap entry " + std::to_string(src) +
                                  " exceeds target joints " + std::to_string(seq.joints));
            for (int c = 0; c < 3; ++c)
                out.data.col(out.col(j, c, b)) = seq.data.col(seq.col(src, c, b));
        }
    }
    return out;
}

EvalReport transfer_eval(const Checkpoint& source,
                         const std::vector<const SkeletonSequence*>& target_train,
                         const std::vector<const SkeletonSequence*>& target_test,
                         StreamKind stream, const std::vector<int>& joint_remap,
                         const HeadOptions& opts, const std::string& benchmark,
                         const std::string& config_digest) {
    if (target_train.empty() || target_test.empty())
        throw DataError("transfer_eval: empty target split");
    const int target_joints = target_train[0]->joints;

    std::vector<SkeletonSequence> remapped_storage;
    std::vector<const SkeletonSequence*> train = target_train;
    std::vector<const SkeletonSequence*> test = target_test;
    if (target_joints != source.arch.joints) {
        if (joint_remap.empty())
            throw ConfigError("transfer: target has " + std::to_string(target_joints) +
                              " joints but the source encoder expects " +
                              std::to_string(source.arch.joints) +
                              "; provide a joint remap table");
        remapped_storage.reserve(target_train.size() + target_test.size());
        train.clear();
        test.clear();
        for (const auto* s : target_train) {
            remapped_storage.push_back(remap_joints(*s, source.arch.joints, joint_remap));
            train.push_back(&remapped_storage.back());
        }
        for (const auto* s : target_test) {
            remapped_storage.push_back(remap_joints(*s, source.arch.joints, joint_remap));
            test.push_back(&remapped_storage.back());
        }
    }

    PretrainModel model = model_from_checkpoint(source);
    EvalReport r = finetune_eval(model, train, test, stream, opts, benchmark, config_digest);
    r.protocol = "transfer";
    return r;
}

EvalReport fuse_streams(const std::vector<Eigen::MatrixXd>& stream_scores,
                        const std::vector<double>& weights, const std::vector<int>& labels,
                        int n_classes, const std::string& benchmark,
                        const std::string& config_digest) {
    if (stream_scores.size() < 2) throw DataError("fuse_streams: need at least two streams");
    for (const auto& s : stream_scores) {
        if (s.rows() != stream_scores[0].rows() || s.cols() != stream_scores[0].cols())
            throw DataError("fuse_streams: score shape mismatch across streams");
    }
    std::vector<double> w = weights;
    if (w.empty()) w.assign(stream_scores.size(), 1.0);
    if (w.size() != stream_scores.size())
        throw DataError("fuse_streams: one weight per stream required");
    double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    if (wsum <= 0) throw ConfigError("fuse_streams: weights must sum to > 0");

    Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(stream_scores[0].rows(), stream_scores[0].cols());
    for (std::size_t i = 0; i < stream_scores.size(); ++i) fused += w[i] * stream_scores[i];
    fused /= wsum;
    EvalReport r = report_from_scores("fused", benchmark, fused, labels, n_classes,
                                      config_digest);
    return r;
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

void emit_similarity_histograms(PretrainModel& model,
                                const std::vector<const SkeletonSequence*>& seqs,
                                const EmbeddingStore& store, StreamKind stream,
                                const std::string& out_dir, int bins) {
    fs::create_directories(out_dir);
    Eigen::MatrixXd feats = extract_features(*model.encoder, seqs, stream, model.bones);
    Eigen::MatrixXd s_v = model.proj_v->forward(feats, false);
    Eigen::MatrixXd s_l = model.proj_l->forward(feats, false);

    const auto n = static_cast<Eigen::Index>(seqs.size());
    Eigen::MatrixXd v(n, store.dim), l(n, store.dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        int row = store.row_of(seqs[static_cast<std::size_t>(i)]->sample_id);
        v.row(i) = store.vision.row(row);
        l.row(i) = store.language.row(row);
    }

    auto write_hist = [&](const Eigen::MatrixXd& s, const Eigen::MatrixXd& t,
                          const std::string& path) {
        Eigen::MatrixXd sims = s * t.transpose();  // rows unit-norm already
        std::vector<long> pos(static_cast<std::size_t>(bins), 0);
        std::vector<long> neg(static_cast<std::size_t>(bins), 0);
        auto bucket = [&](double c) {
            int b = static_cast<int>((c + 1.0) / 2.0 * bins);
            return std::clamp(b, 0, bins - 1);
        };
        for (Eigen::Index i = 0; i < sims.rows(); ++i) {
            for (Eigen::Index j = 0; j < sims.cols(); ++j) {
                if (i == j)
                    ++pos[static_cast<std::size_t>(bucket(sims(i, j)))];
                else
                    ++neg[static_cast<std::size_t>(bucket(sims(i, j)))];
            }
        }
        std::ostringstream csv;
        csv << "bin_lo,bin_hi,positive,negative\n";
        for (int b = 0; b < bins; ++b) {
            double lo = -1.0 + 2.0 * b / bins;
            double hi = -1.0 + 2.0 * (b + 1) / bins;
            csv << lo << ',' << hi << ',' << pos[static_cast<std::size_t>(b)] << ','
                << neg[static_cast<std::size_t>(b)] << '\n';
        }
        atomic_write_file(path, csv.str());
    };
    write_hist(s_v, v, out_dir + "/similarity_hist_vision.csv");
    write_hist(s_l, l, out_dir + "/similarity_hist_language.csv");
}

void dump_embeddings_csv(const Eigen::MatrixXd& features,
                         const std::vector<const SkeletonSequence*>& seqs,
                         const std::string& path) {
    if (features.rows() != static_cast<Eigen::Index>(seqs.size()))
        throw DataError("dump_embeddings: row count mismatch");
    std::ostringstream out;
    out << "sample_id,label";
    for (Eigen::Index k = 0; k < features.cols(); ++k) out << ",e" << k;
    out << '\n';
    out.precision(10);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const auto* s = seqs[static_cast<std::size_t>(i)];
        out << s->sample_id << ',' << s->label;
        for (Eigen::Index k = 0; k < features.cols(); ++k) out << ',' << features(i, k);
        out << '\n';
    }
    atomic_write_file(path, out.str());
}

}  // namespace c2vl
