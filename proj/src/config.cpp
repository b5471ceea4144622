#include "c2vl/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "c2vl/common.hpp"

using nlohmann::json;

namespace c2vl {

json default_config_json() {
    return json{
        {"seed", 42},
        {"output_dir", ""},
        {"dataset",
         {{"path", ""},
          {"kind", "synth"},
          {"benchmark", "xsub"},
          {"split_file", ""},
          {"bones_file", ""}}},
        {"streams", json::array({"joint"})},
        {"loss",
         {{"mode", "soft"},
          {"beta", 0.2},
          {"intra", true},
          {"inter", true},
          {"target_temperature", "shared"}}},
        {"temperature", {{"init", 0.07}, {"mode", "learnable"}}},
        {"schedule",
         {{"alpha_start", 0.9},
          {"alpha_end", 0.1},
          {"progressive", true},
          {"dynamic_partition", true},
          {"alpha_fixed", 0.5}}},
        {"optimizer",
         {{"kind", "sgd"},
          {"lr", 0.1},
          {"momentum", 0.9},
          {"weight_decay", 5e-4},
          {"milestones", json::array({130, 140})},
          {"gamma", 0.1},
          {"epochs", 150},
          {"batch_size", 400}}},
        {"encoder",
         {{"channels", json::array({16, 32, 64})},
          {"strides", json::array({1, 2, 2})},
          {"temporal_kernel", 3},
          {"projector_hidden", 64},
          {"embed_dim", 8}}},
        {"engine",
         {{"mode", "stub"},
          {"frames", 1},
          {"detector_threshold", 0.35},
          {"fallback_fullframe", false},
          {"retries", 3},
          {"workers", 1}}},
        {"frozen_encoder", "stub"},
        {"eval",
         {{"knn_k", 1},
          {"probe_epochs", 100},
          {"probe_lr", 0.1},
          {"probe_milestones", json::array({60, 80})},
          {"probe_batch_size", 128},
          {"finetune_epochs", 50},
          {"finetune_lr", 0.01},
          {"finetune_milestones", json::array({30, 40})},
          {"fractions", json::array({0.01, 0.05, 0.10})},
          {"full_finetune_semi", false}}},
    };
}

namespace {

std::string join_path(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// Overlays user values onto the defaults; keys missing from the defaults tree
// are schema violations. Arrays and scalars replace wholesale.
void merge_checked(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object())
        throw SchemaError(prefix.empty() ? "<root>" : prefix, "expected an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = join_path(prefix, it.key());
        if (!base.contains(it.key())) throw SchemaError(path, "unknown key");
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge_checked(slot, it.value(), path);
        } else {
            slot = it.value();
        }
    }
}

void set_at_path(json& root, const std::string& dotted, const json& value) {
    json* node = &root;
    std::string rest = dotted;
    std::string prefix;
    for (;;) {
        auto dot = rest.find('.');
        std::string key = rest.substr(0, dot);
        prefix = join_path(prefix, key);
        if (!node->contains(key)) throw SchemaError(prefix, "unknown key");
        if (dot == std::string::npos) {
            if ((*node)[key].is_object()) throw SchemaError(prefix, "cannot override an object");
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        if (!node->is_object()) throw SchemaError(prefix, "not a section");
        rest = rest.substr(dot + 1);
    }
}

// Typed getters with path-carrying errors.

double want_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw SchemaError(path, "expected a number");
    return j.get<double>();
}

int want_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw SchemaError(path, "expected an integer");
    return j.get<int>();
}

bool want_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) throw SchemaError(path, "expected a boolean");
    return j.get<bool>();
}

std::string want_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw SchemaError(path, "expected a string");
    return j.get<std::string>();
}

std::string want_enum(const json& j, const std::string& path,
                      std::initializer_list<const char*> allowed) {
    std::string v = want_string(j, path);
    for (const char* a : allowed)
        if (v == a) return v;
    std::string opts;
    for (const char* a : allowed) opts += (opts.empty() ? "" : "|") + std::string(a);
    throw SchemaError(path, "must be one of " + opts + ", got '" + v + "'");
}

std::vector<int> want_int_array(const json& j, const std::string& path) {
    if (!j.is_array()) throw SchemaError(path, "expected an array of integers");
    std::vector<int> out;
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(want_int(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<double> want_number_array(const json& j, const std::string& path) {
    if (!j.is_array()) throw SchemaError(path, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(want_number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

}  // namespace

RunConfig config_from_json(json resolved) {
    RunConfig cfg;
    const json& j = resolved;

    long long seed = want_int(j.at("seed"), "seed");
    if (seed < 0) throw SchemaError("seed", "must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.output_dir = want_string(j.at("output_dir"), "output_dir");

    const json& d = j.at("dataset");
    cfg.dataset.path = want_string(d.at("path"), "dataset.path");
    cfg.dataset.kind =
        want_enum(d.at("kind"), "dataset.kind", {"ntu60", "ntu120", "pkummd2", "synth"});
    cfg.dataset.benchmark =
        want_enum(d.at("benchmark"), "dataset.benchmark", {"xsub", "xview", "xset"});
    cfg.dataset.split_file = want_string(d.at("split_file"), "dataset.split_file");
    cfg.dataset.bones_file = want_string(d.at("bones_file"), "dataset.bones_file");

    const json& streams = j.at("streams");
    if (!streams.is_array() || streams.empty())
        throw SchemaError("streams", "expected a non-empty array");
    cfg.streams.clear();
    std::set<std::string> seen;
    for (std::size_t i = 0; i < streams.size(); ++i) {
        std::string s = want_enum(streams[i], "streams[" + std::to_string(i) + "]",
                                  {"joint", "motion", "bone"});
        if (!seen.insert(s).second)
            throw SchemaError("streams[" + std::to_string(i) + "]", "duplicate stream " + s);
        cfg.streams.push_back(s);
    }

    const json& l = j.at("loss");
    cfg.loss.mode = want_enum(l.at("mode"), "loss.mode", {"soft", "infonce"});
    cfg.loss.beta = want_number(l.at("beta"), "loss.beta");
    if (cfg.loss.beta < 0.0 || cfg.loss.beta > 1.0)
        throw SchemaError("loss.beta", "must be in [0, 1]");
    cfg.loss.intra = want_bool(l.at("intra"), "loss.intra");
    cfg.loss.inter = want_bool(l.at("inter"), "loss.inter");
    cfg.loss.target_temperature =
        want_enum(l.at("target_temperature"), "loss.target_temperature", {"shared", "unit"});

    const json& t = j.at("temperature");
    cfg.temperature.init = want_number(t.at("init"), "temperature.init");
    if (!(cfg.temperature.init > 0.0)) throw SchemaError("temperature.init", "must be > 0");
    cfg.temperature.mode = want_enum(t.at("mode"), "temperature.mode", {"learnable", "fixed"});

    const json& s = j.at("schedule");
    cfg.schedule.alpha_start = want_number(s.at("alpha_start"), "schedule.alpha_start");
    cfg.schedule.alpha_end = want_number(s.at("alpha_end"), "schedule.alpha_end");
    if (cfg.schedule.alpha_start < 0.0 || cfg.schedule.alpha_start > 1.0)
        throw SchemaError("schedule.alpha_start", "must be in [0, 1]");
    if (cfg.schedule.alpha_end < 0.0 || cfg.schedule.alpha_end > cfg.schedule.alpha_start)
        throw SchemaError("schedule.alpha_end", "must be in [0, alpha_start]");
    cfg.schedule.progressive = want_bool(s.at("progressive"), "schedule.progressive");
    cfg.schedule.dynamic_partition =
        want_bool(s.at("dynamic_partition"), "schedule.dynamic_partition");
    cfg.schedule.alpha_fixed = want_number(s.at("alpha_fixed"), "schedule.alpha_fixed");
    if (cfg.schedule.alpha_fixed < 0.0 || cfg.schedule.alpha_fixed > 1.0)
        throw SchemaError("schedule.alpha_fixed", "must be in [0, 1]");

    const json& o = j.at("optimizer");
    cfg.optimizer.kind = want_enum(o.at("kind"), "optimizer.kind", {"sgd"});
    cfg.optimizer.lr0 = want_number(o.at("lr"), "optimizer.lr");
    if (!(cfg.optimizer.lr0 > 0.0)) throw SchemaError("optimizer.lr", "must be > 0");
    cfg.optimizer.momentum = want_number(o.at("momentum"), "optimizer.momentum");
    if (cfg.optimizer.momentum < 0.0 || cfg.optimizer.momentum >= 1.0)
        throw SchemaError("optimizer.momentum", "must be in [0, 1)");
    cfg.optimizer.weight_decay = want_number(o.at("weight_decay"), "optimizer.weight_decay");
    if (cfg.optimizer.weight_decay < 0.0)
        throw SchemaError("optimizer.weight_decay", "must be >= 0");
    cfg.optimizer.milestones = want_int_array(o.at("milestones"), "optimizer.milestones");
    cfg.optimizer.gamma = want_number(o.at("gamma"), "optimizer.gamma");
    if (!(cfg.optimizer.gamma > 0.0 && cfg.optimizer.gamma <= 1.0))
        throw SchemaError("optimizer.gamma", "must be in (0, 1]");
    cfg.optimizer.epochs = want_int(o.at("epochs"), "optimizer.epochs");
    if (cfg.optimizer.epochs < 1) throw SchemaError("optimizer.epochs", "must be >= 1");
    cfg.optimizer.batch_size = want_int(o.at("batch_size"), "optimizer.batch_size");
    if (cfg.optimizer.batch_size < 1) throw SchemaError("optimizer.batch_size", "must be >= 1");
    for (int m : cfg.optimizer.milestones)
        if (m < 0 || m >= cfg.optimizer.epochs)
            throw SchemaError("optimizer.milestones", "milestones must lie in [0, epochs)");

    const json& e = j.at("encoder");
    cfg.encoder.channels = want_int_array(e.at("channels"), "encoder.channels");
    cfg.encoder.strides = want_int_array(e.at("strides"), "encoder.strides");
    if (cfg.encoder.channels.empty())
        throw SchemaError("encoder.channels", "need at least one stage");
    if (cfg.encoder.channels.size() != cfg.encoder.strides.size())
        throw SchemaError("encoder.strides", "must match encoder.channels length");
    for (int c : cfg.encoder.channels)
        if (c < 1) throw SchemaError("encoder.channels", "channels must be >= 1");
    for (int st : cfg.encoder.strides)
        if (st < 1) throw SchemaError("encoder.strides", "strides must be >= 1");
    cfg.encoder.temporal_kernel = want_int(e.at("temporal_kernel"), "encoder.temporal_kernel");
    if (cfg.encoder.temporal_kernel < 1 || cfg.encoder.temporal_kernel % 2 == 0)
        throw SchemaError("encoder.temporal_kernel", "must be odd and >= 1");
    cfg.encoder.projector_hidden = want_int(e.at("projector_hidden"), "encoder.projector_hidden");
    if (cfg.encoder.projector_hidden < 1)
        throw SchemaError("encoder.projector_hidden", "must be >= 1");
    cfg.encoder.embed_dim = want_int(e.at("embed_dim"), "encoder.embed_dim");
    if (cfg.encoder.embed_dim < 2) throw SchemaError("encoder.embed_dim", "must be >= 2");

    const json& g = j.at("engine");
    cfg.engine.mode = want_enum(g.at("mode"), "engine.mode", {"stub", "remote"});
    cfg.engine.frames = want_int(g.at("frames"), "engine.frames");
    if (cfg.engine.frames < 1) throw SchemaError("engine.frames", "must be >= 1");
    cfg.engine.detector_threshold =
        want_number(g.at("detector_threshold"), "engine.detector_threshold");
    if (cfg.engine.detector_threshold < 0.0 || cfg.engine.detector_threshold > 1.0)
        throw SchemaError("engine.detector_threshold", "must be in [0, 1]");
    cfg.engine.fallback_fullframe =
        want_bool(g.at("fallback_fullframe"), "engine.fallback_fullframe");
    cfg.engine.retries = want_int(g.at("retries"), "engine.retries");
    if (cfg.engine.retries < 1) throw SchemaError("engine.retries", "must be >= 1");
    cfg.engine.workers = want_int(g.at("workers"), "engine.workers");
    if (cfg.engine.workers < 1) throw SchemaError("engine.workers", "must be >= 1");

    cfg.frozen_encoder =
        want_enum(j.at("frozen_encoder"), "frozen_encoder", {"stub", "clip-vit-l14-336"});

    const json& ev = j.at("eval");
    cfg.eval.knn_k = want_int(ev.at("knn_k"), "eval.knn_k");
    if (cfg.eval.knn_k < 1) throw SchemaError("eval.knn_k", "must be >= 1");
    cfg.eval.probe_epochs = want_int(ev.at("probe_epochs"), "eval.probe_epochs");
    cfg.eval.probe_lr = want_number(ev.at("probe_lr"), "eval.probe_lr");
    cfg.eval.probe_milestones = want_int_array(ev.at("probe_milestones"), "eval.probe_milestones");
    cfg.eval.probe_batch_size = want_int(ev.at("probe_batch_size"), "eval.probe_batch_size");
    cfg.eval.finetune_epochs = want_int(ev.at("finetune_epochs"), "eval.finetune_epochs");
    if (cfg.eval.finetune_epochs < 0) throw SchemaError("eval.finetune_epochs", "must be >= 0");
    cfg.eval.finetune_lr = want_number(ev.at("finetune_lr"), "eval.finetune_lr");
    cfg.eval.finetune_milestones =
        want_int_array(ev.at("finetune_milestones"), "eval.finetune_milestones");
    cfg.eval.fractions = want_number_array(ev.at("fractions"), "eval.fractions");
    for (double f : cfg.eval.fractions)
        if (!(f > 0.0) || f > 1.0) throw SchemaError("eval.fractions", "must lie in (0, 1]");
    cfg.eval.full_finetune_semi = want_bool(ev.at("full_finetune_semi"), "eval.full_finetune_semi");

    cfg.resolved = std::move(resolved);
    cfg.digest = hex_digest(fnv1a64(cfg.resolved.dump()));
    return cfg;
}

RunConfig resolve_config(const std::string& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    json resolved = default_config_json();
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw ConfigError("cannot open config file: " + file);
        json user;
        try {
            in >> user;
        } catch (const std::exception& e) {
            throw ConfigError("config " + file + " is not valid JSON: " + std::string(e.what()));
        }
        if (!user.is_null()) merge_checked(resolved, user, "");
    }
    for (const auto& [path, value] : overrides) {
        json v;
        try {
            v = json::parse(value);
        } catch (const std::exception&) {
            v = value;  // plain string
        }
        set_at_path(resolved, path, v);
    }
    return config_from_json(std::move(resolved));
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
    std::filesystem::create_directories(dir);
    // resolved_config.json stays re-loadable as a config; digest goes beside it
    atomic_write_file(dir + "/resolved_config.json", cfg.resolved.dump(2) + "\n");
    atomic_write_file(dir + "/config_digest.txt", cfg.digest + "\n");
}

}  // namespace c2vl
