#include "c2vl/cli.hpp"

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "c2vl/common.hpp"
#include "c2vl/eval.hpp"
#include "c2vl/pretrain.hpp"
#include "c2vl/smoke.hpp"
#include "c2vl/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c2vl {

namespace {

void collect_leaf_paths(const json& node, const std::string& prefix,
                        std::vector<std::string>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        std::string p = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object())
            collect_leaf_paths(*it, p, out);
        else
            out.push_back(p);
    }
}

// Registers every config leaf as "--<dotted.path> <value>" on the subcommand.
void add_config_overrides(CLI::App* sub,
                          std::vector<std::pair<std::string, std::string>>* overrides) {
    static const std::vector<std::string> paths = [] {
        std::vector<std::string> p;
        collect_leaf_paths(default_config_json(), "", p);
        return p;
    }();
    for (const auto& path : paths) {
        sub->add_option_function<std::string>(
               "--" + path,
               [overrides, path](const std::string& v) { overrides->emplace_back(path, v); },
               "config override")
            ->group("Config overrides");
    }
}

void echo_args(const std::string& dir, const std::string& command,
               const std::vector<std::string>& argv) {
    fs::create_directories(dir);
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["digest"] = hex_digest(fnv1a64(j.dump()));
    atomic_write_file(dir + "/invocation.json", j.dump(2) + "\n");
}

HeadOptions probe_options(const RunConfig& cfg) {
    HeadOptions h;
    h.epochs = cfg.eval.probe_epochs;
    h.lr = cfg.eval.probe_lr;
    h.milestones = cfg.eval.probe_milestones;
    h.batch_size = cfg.eval.probe_batch_size;
    h.seed = cfg.seed;
    return h;
}

HeadOptions finetune_options(const RunConfig& cfg) {
    HeadOptions h;
    h.epochs = cfg.eval.finetune_epochs;
    h.lr = cfg.eval.finetune_lr;
    h.milestones = cfg.eval.finetune_milestones;
    h.batch_size = cfg.eval.probe_batch_size;
    h.seed = cfg.seed;
    return h;
}

struct SplitSequences {
    std::vector<SkeletonSequence> storage;
    std::vector<const SkeletonSequence*> train, test;
};

SplitSequences load_split_sequences(const std::string& data_dir, const RunConfig& cfg) {
    SplitSequences out;
    auto [sequences, split] = load_dataset(data_dir, benchmark_from_string(cfg.dataset.benchmark),
                                           cfg.dataset.split_file);
    out.storage = std::move(sequences);
    std::unordered_map<std::string, const SkeletonSequence*> by_id;
    for (const auto& s : out.storage) by_id[s.sample_id] = &s;
    for (const auto& id : split.train_ids) out.train.push_back(by_id.at(id));
    for (const auto& id : split.test_ids) out.test.push_back(by_id.at(id));
    return out;
}

std::vector<int> load_remap_file(const std::string& path) {
    if (path.empty()) return {};
    std::string bytes = read_file_bytes(path);
    json j = json::parse(bytes);
    return j.at("map").get<std::vector<int>>();
}

int run_evaluate(const std::string& protocol, const std::vector<std::string>& ckpts,
                 const std::string& data_dir, const RunConfig& cfg, const std::string& out_dir,
                 int k_override, std::vector<double> fractions, const std::string& remap_file,
                 bool emit_histograms, const std::string& embeddings_dir, bool dump_embeddings,
                 bool full_finetune, const std::string& stream_override) {
    SplitSequences data = load_split_sequences(data_dir, cfg);
    if (data.train.empty() || data.test.empty())
        throw DataError("evaluate: empty train or test split");
    echo_config(cfg, out_dir);
    const std::string benchmark = cfg.dataset.benchmark;

    std::vector<int> train_labels = labels_of(data.train);
    std::vector<int> test_labels = labels_of(data.test);
    int n_classes = std::max(count_classes(train_labels), count_classes(test_labels));

    std::vector<Eigen::MatrixXd> fused_scores;
    std::vector<EvalReport> reports;

    for (std::size_t ci = 0; ci < ckpts.size(); ++ci) {
        Checkpoint ckpt = Checkpoint::load(ckpts[ci]);
        StreamKind stream = stream_kind_from_string(
            stream_override.empty() ? ckpt.stream : stream_override);
        const std::string stem =
            ckpts.size() > 1 ? protocol + "_" + to_string(stream) : protocol;

        if (protocol == "linear") {
            PretrainModel model = model_from_checkpoint(ckpt);
            Eigen::MatrixXd train_feats =
                extract_features(*model.encoder, data.train, stream, model.bones);
            Eigen::MatrixXd test_feats =
                extract_features(*model.encoder, data.test, stream, model.bones);
            LinearHead head =
                train_linear_head(train_feats, train_labels, n_classes, probe_options(cfg));
            Eigen::MatrixXd scores = head_scores(test_feats, head);
            fused_scores.push_back(scores);
            reports.push_back(report_from_scores("linear", benchmark, scores, test_labels,
                                                 n_classes, cfg.digest));
            if (dump_embeddings)
                dump_embeddings_csv(test_feats, data.test,
                                    out_dir + "/embeddings_" + to_string(stream) + ".csv");
            if (emit_histograms) {
                std::string emb = embeddings_dir;
                if (emb.empty())
                    emb = (fs::path(ckpts[ci]).parent_path().parent_path() / "embeddings")
                              .string();
                EmbeddingStore store = EmbeddingStore::load(emb);
                std::vector<const SkeletonSequence*> all = data.train;
                all.insert(all.end(), data.test.begin(), data.test.end());
                emit_similarity_histograms(model, all, store, stream, out_dir);
            }
        } else if (protocol == "finetune") {
            PretrainModel model = model_from_checkpoint(ckpt);
            EvalReport r = finetune_eval(model, data.train, data.test, stream,
                                         finetune_options(cfg), benchmark, cfg.digest);
            reports.push_back(std::move(r));
        } else if (protocol == "knn") {
            if (ckpts.size() > 1) throw ConfigError("knn protocol does not support fusion");
            PretrainModel model = model_from_checkpoint(ckpt);
            Eigen::MatrixXd train_feats =
                extract_features(*model.encoder, data.train, stream, model.bones);
            Eigen::MatrixXd test_feats =
                extract_features(*model.encoder, data.test, stream, model.bones);
            int k = k_override > 0 ? k_override : cfg.eval.knn_k;
            reports.push_back(knn_eval(train_feats, train_labels, test_feats, test_labels,
                                       n_classes, k, false, benchmark, cfg.digest));
            if (dump_embeddings)
                dump_embeddings_csv(test_feats, data.test,
                                    out_dir + "/embeddings_" + to_string(stream) + ".csv");
        } else if (protocol == "semi") {
            if (fractions.empty()) fractions = cfg.eval.fractions;
            auto rs = semi_eval(ckpt, data.train, data.test, stream, fractions,
                                full_finetune || cfg.eval.full_finetune_semi,
                                probe_options(cfg), benchmark, cfg.digest);
            for (std::size_t i = 0; i < rs.size(); ++i) {
                rs[i].save(out_dir, "semi_" + std::to_string(fractions[i]));
                std::cout << rs[i].protocol << " " << benchmark << " top1 " << rs[i].top1
                          << "%\n";
            }
            continue;
        } else if (protocol == "transfer") {
            std::vector<int> remap = load_remap_file(remap_file);
            reports.push_back(transfer_eval(ckpt, data.train, data.test, stream, remap,
                                            finetune_options(cfg), benchmark, cfg.digest));
        } else {
            throw ConfigError("unknown protocol: " + protocol);
        }
        if (!reports.empty()) {
            reports.back().save(out_dir, stem);
            std::cout << reports.back().protocol << " " << benchmark << " top1 "
                      << reports.back().top1 << "%\n";
        }
    }

    if (ckpts.size() > 1 && (protocol == "linear")) {
        EvalReport fused = fuse_streams(fused_scores, {}, test_labels, n_classes, benchmark,
                                        cfg.digest);
        fused.save(out_dir, "fused");
        std::cout << "fused " << benchmark << " top1 " << fused.top1 << "%\n";
    }
    return 0;
}

}  // namespace

int run_command(const std::vector<std::string>& argv) {
    CLI::App app{"cross-modal skeleton action representation pretraining and evaluation"};
    app.require_subcommand(1);

    int exit_status = 0;

    // ---- ingest ----
    auto* ingest = app.add_subcommand("ingest", "convert raw skeleton files to the container");
    std::string in_raw, in_out, in_dataset = "ntu60";
    ingest->add_option("--raw", in_raw, "directory of raw skeleton files")->required();
    ingest->add_option("--out", in_out, "output container directory")->required();
    ingest->add_option("--dataset", in_dataset, "raw format")
        ->check(CLI::IsMember({"ntu60", "ntu120", "pkummd2"}));
    ingest->callback([&]() {
        int n = ingest_raw(in_raw, in_out, in_dataset);
        echo_args(in_out, "ingest", argv);
        std::cout << "ingested " << n << " sequences into " << in_out << "\n";
    });

    // ---- generate-prompts ----
    auto* gen = app.add_subcommand("generate-prompts", "create vision/language prompt records");
    std::string gp_dataset, gp_cache, gp_engine = "stub", gp_frames_dir;
    int gp_frames = 1, gp_workers = 1;
    double gp_threshold = 0.35;
    bool gp_fallback = false;
    std::uint64_t gp_seed = 0;
    gen->add_option("--dataset", gp_dataset, "container directory")->required();
    gen->add_option("--cache", gp_cache, "prompt cache JSONL path")->required();
    gen->add_option("--engine", gp_engine)->check(CLI::IsMember({"stub", "remote"}));
    gen->add_option("--frames", gp_frames, "frames sampled per video");
    gen->add_option("--threshold", gp_threshold, "detector score cutoff");
    gen->add_flag("--fallback-fullframe", gp_fallback, "full-frame crop when nothing detected");
    gen->add_option("--workers", gp_workers, "concurrent engine calls");
    gen->add_option("--seed", gp_seed, "stub engine seed");
    gen->add_option("--frames-dir", gp_frames_dir, "directory of <sample_id>.ppm frames");
    gen->callback([&]() {
        auto sequences = load_container(gp_dataset);
        std::vector<std::string> ids;
        std::unordered_map<std::string, int> labels;
        for (const auto& s : sequences) {
            ids.push_back(s.sample_id);
            labels[s.sample_id] = s.label;
        }
        std::unique_ptr<FrameSource> source;
        if (!gp_frames_dir.empty())
            source = std::make_unique<DirectoryFrameSource>(gp_frames_dir);
        else
            source = std::make_unique<SyntheticFrameSource>(std::move(labels), gp_seed);
        std::unique_ptr<EngineClient> client;
        if (gp_engine == "stub") {
            client = std::make_unique<StubEngineClient>(gp_seed);
        } else {
            auto opts = RemoteEngineClient::options_from_env();
            client = std::make_unique<RemoteEngineClient>(opts);
        }
        PromptCache cache(gp_cache);
        FramePolicy policy{gp_frames, gp_threshold, gp_fallback};
        auto stats = generate_prompts(ids, *source, *client, cache, policy, gp_workers);
        echo_args(fs::path(gp_cache).parent_path().empty()
                      ? "."
                      : fs::path(gp_cache).parent_path().string(),
                  "generate-prompts", argv);
        std::cout << "prompts: " << stats.generated << " generated, " << stats.reused
                  << " reused from cache (" << cache.size() << " total)\n";
    });

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "run cross-modal pretraining");
    std::string pt_config, pt_data, pt_prompts, pt_out, pt_resume;
    bool pt_deterministic = false;
    std::vector<std::pair<std::string, std::string>> pt_overrides;
    pre->add_option("--config", pt_config, "config JSON (defaults when omitted)");
    pre->add_option("--data", pt_data, "container directory")->required();
    pre->add_option("--prompts", pt_prompts, "prompt cache path")->required();
    pre->add_option("--out", pt_out, "output directory")->required();
    pre->add_flag("--deterministic", pt_deterministic,
                  "single-threaded bit-reproducible mode (always on in this build)");
    pre->add_option("--resume", pt_resume, "checkpoint to resume from");
    add_config_overrides(pre, &pt_overrides);
    pre->callback([&]() {
        auto overrides = pt_overrides;
        overrides.emplace_back("output_dir", pt_out);
        overrides.emplace_back("dataset.path", pt_data);
        RunConfig cfg = resolve_config(pt_config, overrides);
        auto out = pretrain_run(cfg, pt_data, pt_prompts, pt_out, pt_resume);
        for (const auto& p : out.checkpoint_paths) std::cout << "checkpoint: " << p << "\n";
    });

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "run an evaluation protocol");
    std::string ev_protocol, ev_data, ev_config, ev_out = "eval_out", ev_remap, ev_embeddings,
                ev_stream;
    std::vector<std::string> ev_ckpts;
    std::vector<double> ev_fractions;
    int ev_k = 0;
    bool ev_hist = false, ev_dump = false, ev_full_finetune = false;
    std::vector<std::pair<std::string, std::string>> ev_overrides;
    ev->add_option("--protocol", ev_protocol)
        ->required()
        ->check(CLI::IsMember({"linear", "finetune", "knn", "semi", "transfer"}));
    ev->add_option("--ckpt", ev_ckpts, "checkpoint path (repeat for stream fusion)")->required();
    ev->add_option("--data", ev_data, "container directory")->required();
    ev->add_option("--config", ev_config, "config JSON");
    ev->add_option("--out", ev_out, "report directory");
    ev->add_option("--k", ev_k, "neighbors for the knn protocol");
    ev->add_option("--fractions", ev_fractions, "label fractions for the semi protocol");
    ev->add_option("--remap", ev_remap, "joint remap JSON for transfer");
    ev->add_flag("--emit-histograms", ev_hist, "write positive/negative cosine histograms");
    ev->add_option("--embeddings", ev_embeddings, "embedding store dir (for histograms)");
    ev->add_flag("--dump-embeddings", ev_dump, "export test features as CSV");
    ev->add_flag("--full-finetune", ev_full_finetune, "semi protocol finetunes the encoder too");
    ev->add_option("--stream", ev_stream, "override the checkpoint's stream kind")
        ->check(CLI::IsMember({"joint", "motion", "bone"}));
    add_config_overrides(ev, &ev_overrides);
    ev->callback([&]() {
        auto overrides = ev_overrides;
        overrides.emplace_back("dataset.path", ev_data);
        RunConfig cfg = resolve_config(ev_config, overrides);
        exit_status = run_evaluate(ev_protocol, ev_ckpts, ev_data, cfg, ev_out, ev_k,
                                   ev_fractions, ev_remap, ev_hist, ev_embeddings, ev_dump,
                                   ev_full_finetune, ev_stream);
    });

    // ---- synth-smoke ----
    auto* smoke = app.add_subcommand("synth-smoke", "end-to-end synthetic pipeline");
    SmokeOptions sm;
    sm.out_dir = "smoke_out";
    double sm_noisy = 0.0;
    smoke->add_option("--seed", sm.seed);
    smoke->add_option("--out", sm.out_dir);
    smoke->add_option("--epochs", sm.epochs);
    smoke->add_option("--classes", sm.classes);
    smoke->add_option("--per-class", sm.per_class);
    smoke->add_option("--batch-size", sm.batch_size);
    smoke->add_option("--noisy", sm_noisy, "fraction of cross-class shuffled prompts");
    smoke->add_option("--loss", sm.loss_mode)->check(CLI::IsMember({"soft", "infonce"}));
    smoke->callback([&]() {
        sm.noisy_fraction = sm_noisy;
        SmokeResult r = run_synth_smoke(sm);
        std::cout << "synth-smoke: linear probe top1 " << r.linear_top1 << "%, knn top1 "
                  << r.knn_top1 << "% (checkpoint " << r.checkpoint_path << ")\n";
    });

    std::vector<const char*> cargv;
    cargv.reserve(argv.size());
    for (const auto& a : argv) cargv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const SchemaError& e) {
        std::cerr << "config error at " << e.field_path() << ": " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_status;
}

}  // namespace c2vl
