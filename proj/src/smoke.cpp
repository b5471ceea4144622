#include "c2vl/smoke.hpp"

#include <filesystem>

#include "c2vl/common.hpp"
#include "c2vl/synth.hpp"

namespace fs = std::filesystem;

namespace c2vl {

SmokeResult run_synth_smoke(const SmokeOptions& opts) {
    if (opts.out_dir.empty()) throw ConfigError("synth-smoke needs an output directory");
    fs::create_directories(opts.out_dir);

    SynthCorpus corpus = synth_generate(opts.classes, opts.per_class, opts.seed);
    if (opts.noisy_fraction > 0.0)
        shuffle_prompts_across_classes(corpus, opts.noisy_fraction, opts.seed);

    const std::string data_dir = opts.out_dir + "/data";
    write_synth_dataset(corpus, data_dir);

    const std::string cache_path = opts.out_dir + "/prompts.jsonl";
    if (fs::exists(cache_path)) fs::remove(cache_path);
    PromptCache cache(cache_path);
    for (const auto& rec : corpus.prompts) cache.put(rec);

    std::vector<std::pair<std::string, std::string>> overrides = {
        {"seed", std::to_string(opts.seed)},
        {"dataset.path", data_dir},
        {"dataset.kind", "synth"},
        {"dataset.benchmark", "xsub"},
        {"loss.mode", opts.loss_mode},
        {"optimizer.epochs", std::to_string(opts.epochs)},
        {"optimizer.batch_size", std::to_string(opts.batch_size)},
        {"optimizer.milestones",
         "[" + std::to_string(opts.epochs * 3 / 4) + "," + std::to_string(opts.epochs * 9 / 10) +
             "]"},
        {"output_dir", opts.out_dir},
    };
    RunConfig cfg = resolve_config("", overrides);

    const std::string run_dir = opts.out_dir + "/run";
    PretrainRunOutput run = pretrain_run(cfg, data_dir, cache_path, run_dir);

    auto [sequences, split] = load_dataset(data_dir, Benchmark::xsub);
    std::unordered_map<std::string, const SkeletonSequence*> by_id;
    for (const auto& s : sequences) by_id[s.sample_id] = &s;
    std::vector<const SkeletonSequence*> train, test;
    for (const auto& id : split.train_ids) train.push_back(by_id.at(id));
    for (const auto& id : split.test_ids) test.push_back(by_id.at(id));

    Checkpoint ckpt = Checkpoint::load(run.checkpoint_paths.at(0));
    PretrainModel model = model_from_checkpoint(ckpt);

    HeadOptions head;
    head.epochs = cfg.eval.probe_epochs;
    head.lr = cfg.eval.probe_lr;
    head.milestones = cfg.eval.probe_milestones;
    head.batch_size = cfg.eval.probe_batch_size;
    head.seed = cfg.seed;

    EvalReport probe =
        linear_probe(model, train, test, StreamKind::joint, head, "xsub", cfg.digest);

    Eigen::MatrixXd train_feats =
        extract_features(*model.encoder, train, StreamKind::joint, model.bones);
    Eigen::MatrixXd test_feats =
        extract_features(*model.encoder, test, StreamKind::joint, model.bones);
    EvalReport knn = knn_eval(train_feats, labels_of(train), test_feats, labels_of(test),
                              opts.classes, cfg.eval.knn_k, false, "xsub", cfg.digest);

    probe.save(opts.out_dir + "/reports", "linear");
    knn.save(opts.out_dir + "/reports", "knn");

    SmokeResult result;
    result.linear_top1 = probe.top1;
    result.knn_top1 = knn.top1;
    result.checkpoint_path = run.checkpoint_paths.at(0);
    result.data_dir = data_dir;
    result.cache_path = cache_path;
    result.config = cfg;
    return result;
}

}  // namespace c2vl
