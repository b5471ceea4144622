#include "c2vl/prompts.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "c2vl/common.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c2vl {

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

// ---------------------------------------------------------------------------
// StubEngineClient
// ---------------------------------------------------------------------------

std::vector<Detection> StubEngineClient::detect(const ImageBuffer& frame,
                                                const std::string& text_prompt) {
    std::uint64_t state = fnv1a64_bytes(frame.rgb.data(), frame.rgb.size()) ^ seed_;
    state = fnv1a64(text_prompt, state);
    Detection d;
    double cx = 0.40 + 0.20 * uniform01(state);
    double cy = 0.40 + 0.20 * uniform01(state);
    double w = 0.30 + 0.20 * uniform01(state);
    double h = 0.35 + 0.20 * uniform01(state);
    d.box = Box{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    d.score = 0.60 + 0.35 * uniform01(state);
    return {d};
}

std::string StubEngineClient::answer(const ImageBuffer& image, const std::string& question) {
    static const char* kObjects[] = {"a cup",  "a phone", "a book",  "nothing",
                                     "a bag",  "a ball",  "a towel", "a remote"};
    static const char* kPostures[] = {"standing", "sitting"};
    static const char* kActions[] = {"drink water",       "make a phone call", "read a book",
                                     "wave to someone",   "put on a jacket",   "kick something",
                                     "wipe the face",     "point at a screen"};
    static const char* kManners[] = {"slowly", "quickly", "carefully", "casually"};
    std::uint64_t state = fnv1a64_bytes(image.rgb.data(), image.rgb.size()) ^ (seed_ + 0x51ab);
    state = fnv1a64(question, state);
    std::ostringstream out;
    out << "The person is holding " << kObjects[splitmix64(state) % 8] << ". ";
    out << "The person is " << kPostures[splitmix64(state) % 2] << ". ";
    out << "The person is trying to " << kActions[splitmix64(state) % 8] << " "
        << kManners[splitmix64(state) % 4] << ".";
    return out.str();
}

// ---------------------------------------------------------------------------
// RemoteEngineClient
// ---------------------------------------------------------------------------

RemoteEngineClient::Options RemoteEngineClient::options_from_env() {
    Options o;
    o.detector_url = env_var("C2VL_DETECTOR_URL").value_or("");
    o.vqa_url = env_var("C2VL_VQA_URL").value_or("");
    o.api_token = env_var("C2VL_API_TOKEN").value_or("");
    return o;
}

RemoteEngineClient::RemoteEngineClient(Options opts) : opts_(std::move(opts)) {
    if (opts_.detector_url.empty() || opts_.vqa_url.empty())
        throw ConfigError(
            "remote engine needs C2VL_DETECTOR_URL and C2VL_VQA_URL (or --engine stub)");
}

namespace {

// "http://host:port/path" -> {"http://host:port", "/path"}
std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("bad URL (missing scheme): " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string RemoteEngineClient::post_json(const std::string& url, const std::string& body) {
    auto [base, path] = split_url(url);
    int delay_ms = opts_.backoff_ms;
    std::string last_error;
    for (int attempt = 0; attempt < std::max(1, opts_.retries); ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms *= 2;
        }
        httplib::Client cli(base);
        cli.set_connection_timeout(opts_.timeout_seconds);
        cli.set_read_timeout(opts_.timeout_seconds);
        httplib::Headers headers;
        if (!opts_.api_token.empty())
            headers.emplace("Authorization", "Bearer " + opts_.api_token);
        auto res = cli.Post(path, headers, body, "application/json");
        if (res && res->status == 200) return res->body;
        last_error = res ? "http status " + std::to_string(res->status)
                         : "transport failure (" + httplib::to_string(res.error()) + ")";
        if (res && res->status >= 400 && res->status < 500)
            throw TransportError(url + ": " + last_error, false);  // client errors don't retry
    }
    throw TransportError(url + ": " + last_error + " after " +
                         std::to_string(opts_.retries) + " attempts");
}

std::vector<Detection> RemoteEngineClient::detect(const ImageBuffer& frame,
                                                  const std::string& text_prompt) {
    json req;
    req["image_b64"] = base64_encode(encode_ppm(frame));
    req["text_prompt"] = text_prompt;
    std::string body = post_json(opts_.detector_url, req.dump());
    json res = json::parse(body);
    std::vector<Detection> out;
    const auto& boxes = res.at("boxes");
    const auto& scores = res.at("scores");
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        Detection d;
        d.box = Box{boxes[i][0].get<double>(), boxes[i][1].get<double>(),
                    boxes[i][2].get<double>(), boxes[i][3].get<double>()};
        d.score = i < scores.size() ? scores[i].get<double>() : 0.0;
        out.push_back(d);
    }
    return out;
}

std::string RemoteEngineClient::answer(const ImageBuffer& image, const std::string& question) {
    json req;
    req["image_b64"] = base64_encode(encode_ppm(image));
    req["question"] = question;
    std::string body = post_json(opts_.vqa_url, req.dump());
    return json::parse(body).at("answer").get<std::string>();
}

// ---------------------------------------------------------------------------
// Frame sources
// ---------------------------------------------------------------------------

int DirectoryFrameSource::frame_count(const std::string& sample_id) {
    return fs::exists(dir_ + "/" + sample_id + ".ppm") ? 1 : 0;
}

ImageBuffer DirectoryFrameSource::frame(const std::string& sample_id, int /*index*/) {
    std::string path = dir_ + "/" + sample_id + ".ppm";
    std::string bytes = read_file_bytes(path);
    return decode_ppm(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

ImageBuffer SyntheticFrameSource::class_frame(int label, std::uint64_t seed) {
    const int w = 48, h = 48;
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    std::uint64_t state = seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(label) + 1;
    std::uint8_t bg[3], fg[3];
    for (int c = 0; c < 3; ++c) bg[c] = static_cast<std::uint8_t>(40 + splitmix64(state) % 60);
    for (int c = 0; c < 3; ++c) fg[c] = static_cast<std::uint8_t>(120 + splitmix64(state) % 120);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool person = x >= 14 && x < 34 && y >= 8 && y < 42;
            bool stripe = person && ((x + y + label * 3) % 7 < 3);
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = person ? (stripe ? fg[c] : static_cast<std::uint8_t>(fg[c] / 2))
                                         : bg[c];
        }
    }
    return img;
}

int SyntheticFrameSource::frame_count(const std::string& sample_id) {
    return labels_.count(sample_id) != 0 ? 8 : 0;
}

ImageBuffer SyntheticFrameSource::frame(const std::string& sample_id, int /*index*/) {
    auto it = labels_.find(sample_id);
    if (it == labels_.end()) throw NotFoundError("unknown sample id: " + sample_id);
    return class_frame(it->second, seed_);
}

// ---------------------------------------------------------------------------
// Prompt generation
// ---------------------------------------------------------------------------

VisionPrompt generate_vision_prompt(FrameSource& source, const std::string& sample_id,
                                    EngineClient& client, const FramePolicy& policy) {
    const int count = source.frame_count(sample_id);
    if (count < 1) throw DataError("no frames available for sample " + sample_id);

    std::vector<int> indices;
    if (policy.frames <= 1 || count == 1) {
        indices.push_back(count / 2);
    } else {
        int n = std::min(policy.frames, count);
        for (int k = 0; k < n; ++k) indices.push_back(k * (count - 1) / (n - 1));
    }

    int best_index = -1;
    double best_score = -1.0;
    Box best_box;
    ImageBuffer best_frame;
    for (int idx : indices) {
        ImageBuffer f = source.frame(sample_id, idx);
        auto detections = client.detect(f, kDetectorTextPrompt);
        bool any = false;
        Box merged;
        double score = 0.0;
        for (const auto& d : detections) {
            if (d.score < policy.threshold || !d.box.valid()) continue;
            merged = any ? merged.united(d.box) : d.box;
            score = std::max(score, d.score);
            any = true;
        }
        if (any && score > best_score) {
            best_score = score;
            best_index = idx;
            best_box = merged;
            best_frame = std::move(f);
        }
    }

    if (best_index < 0) {
        if (!policy.fallback_fullframe)
            throw NoPersonFoundError(sample_id, indices[indices.size() / 2]);
        best_index = indices[indices.size() / 2];
        best_frame = source.frame(sample_id, best_index);
        best_box = Box{0, 0, 1, 1};
        best_score = 0.0;
    }

    VisionPrompt out;
    out.sample_id = sample_id;
    out.box = best_box.clipped();
    out.frame_index = best_index;
    out.detector_score = best_score;
    out.crop = encode_ppm(crop_image(best_frame, out.box));
    return out;
}

LanguagePrompt generate_language_prompt(const VisionPrompt& crop, EngineClient& client) {
    if (crop.crop.empty()) throw DataError("vision prompt for " + crop.sample_id + " has no crop");
    ImageBuffer img = decode_ppm(crop.crop);
    std::string text = client.answer(img, kVqaQuestion);
    if (text.empty() || is_whitespace_only(text))
        throw EmptyCaptionError("empty caption for sample " + crop.sample_id);
    LanguagePrompt out;
    out.sample_id = crop.sample_id;
    out.text = text;
    out.question = kVqaQuestion;
    return out;
}

// ---------------------------------------------------------------------------
// PromptCache
// ---------------------------------------------------------------------------

namespace {

json record_to_json(const PromptRecord& r) {
    json j;
    j["version"] = kPromptCacheVersion;
    j["sample_id"] = r.sample_id;
    j["vision"] = {{"crop_path", r.vision.crop_path},
                   {"box", {r.vision.box.x0, r.vision.box.y0, r.vision.box.x1, r.vision.box.y1}},
                   {"frame_index", r.vision.frame_index},
                   {"detector_score", r.vision.detector_score}};
    j["language"] = {{"text", r.language.text}, {"question", r.language.question}};
    j["engine_meta"] = {{"detector_name", r.meta.detector_name},
                        {"vqa_name", r.meta.vqa_name},
                        {"timestamp", r.meta.timestamp}};
    return j;
}

PromptRecord record_from_json(const json& j) {
    if (j.value("version", "") != kPromptCacheVersion)
        throw DataError("prompt record version mismatch");
    PromptRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    const json& v = j.at("vision");
    r.vision.sample_id = r.sample_id;
    r.vision.crop_path = v.at("crop_path").get<std::string>();
    const auto& bx = v.at("box");
    r.vision.box = Box{bx[0].get<double>(), bx[1].get<double>(), bx[2].get<double>(),
                       bx[3].get<double>()};
    r.vision.frame_index = v.at("frame_index").get<int>();
    r.vision.detector_score = v.at("detector_score").get<double>();
    const json& l = j.at("language");
    r.language.sample_id = r.sample_id;
    r.language.text = l.at("text").get<std::string>();
    r.language.question = l.at("question").get<std::string>();
    const json& m = j.at("engine_meta");
    r.meta.detector_name = m.at("detector_name").get<std::string>();
    r.meta.vqa_name = m.at("vqa_name").get<std::string>();
    r.meta.timestamp = m.at("timestamp").get<std::string>();
    return r;
}

std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return out;
}

}  // namespace

PromptCache::PromptCache(const std::string& path) : path_(path) {
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    fs::create_directories(crops_dir());
    reload();
}

std::string PromptCache::crops_dir() const { return path_ + "_crops"; }

void PromptCache::reload() {
    records_.clear();
    std::ifstream in(path_);
    if (!in) return;  // fresh cache
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_whitespace_only(line)) continue;
        try {
            PromptRecord r = record_from_json(json::parse(line));
            records_[r.sample_id] = std::move(r);  // last write wins
        } catch (const std::exception& e) {
            warn("prompt cache " + path_ + " line " + std::to_string(line_no) +
                 " is corrupt, skipping: " + e.what());
        }
    }
}

void PromptCache::put(const PromptRecord& record) {
    std::lock_guard<std::mutex> lock(mu_);
    if (records_.count(record.sample_id) != 0)
        warn("prompt cache: overwriting record for sample " + record.sample_id);

    PromptRecord stored = record;
    if (!record.vision.crop.empty()) {
        std::string rel = fs::path(crops_dir()).filename().string() + "/" +
                          sanitize_id(record.sample_id) + ".ppm";
        write_file_bytes(crops_dir() + "/" + sanitize_id(record.sample_id) + ".ppm",
                         record.vision.crop.data(), record.vision.crop.size());
        stored.vision.crop_path = rel;
    }

    std::ofstream out(path_, std::ios::app);
    if (!out) throw DataError("cannot append to prompt cache: " + path_);
    out << record_to_json(stored).dump() << "\n";
    out.flush();
    if (!out) throw DataError("short write to prompt cache: " + path_);
    records_[stored.sample_id] = std::move(stored);
}

PromptRecord PromptCache::get(const std::string& sample_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = records_.find(sample_id);
    if (it == records_.end()) throw NotFoundError("no prompt record for sample " + sample_id);
    return it->second;
}

bool PromptCache::contains(const std::string& sample_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.count(sample_id) != 0;
}

std::size_t PromptCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
}

std::vector<PromptRecord> PromptCache::all_sorted() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<PromptRecord> out;
    out.reserve(records_.size());
    for (const auto& [id, r] : records_) out.push_back(r);
    return out;  // std::map keeps them sorted by sample_id
}

std::vector<std::uint8_t> PromptCache::load_crop(const PromptRecord& record) const {
    if (!record.vision.crop.empty()) return record.vision.crop;
    if (record.vision.crop_path.empty())
        throw DataError("record for " + record.sample_id + " has neither crop bytes nor path");
    std::string full = (fs::path(path_).parent_path() / record.vision.crop_path).string();
    if (fs::path(path_).parent_path().empty()) full = record.vision.crop_path;
    std::string bytes = read_file_bytes(full);
    return std::vector<std::uint8_t>(bytes.begin(), bytes.end());
}

std::vector<std::string> missing_prompt_ids(const PromptCache& cache,
                                            const std::vector<std::string>& sample_ids) {
    std::vector<std::string> missing;
    for (const auto& id : sample_ids)
        if (!cache.contains(id)) missing.push_back(id);
    std::sort(missing.begin(), missing.end());
    return missing;
}

GeneratePromptsStats generate_prompts(const std::vector<std::string>& sample_ids,
                                      FrameSource& source, EngineClient& client,
                                      PromptCache& cache, const FramePolicy& policy,
                                      int workers) {
    std::vector<std::string> todo = missing_prompt_ids(cache, sample_ids);
    GeneratePromptsStats stats;
    stats.reused = static_cast<int>(sample_ids.size() - todo.size());

    std::atomic<std::size_t> next{0};
    std::atomic<int> generated{0};
    std::exception_ptr first_error;
    std::mutex error_mu;

    auto work = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= todo.size()) return;
            try {
                PromptRecord rec;
                rec.sample_id = todo[i];
                rec.vision = generate_vision_prompt(source, todo[i], client, policy);
                rec.language = generate_language_prompt(rec.vision, client);
                rec.meta.detector_name = client.detector_name();
                rec.meta.vqa_name = client.vqa_name();
                rec.meta.timestamp = iso_timestamp();
                cache.put(rec);
                ++generated;
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                next.store(todo.size());  // stop the pool
                return;
            }
        }
    };

    int n_workers = std::max(1, workers);
    if (n_workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    stats.generated = generated.load();
    return stats;
}

}  // namespace c2vl
