#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "c2vl/image.hpp"

namespace c2vl {

inline constexpr const char* kPromptCacheVersion = "c2vl-prompt-v1";

// Wire-exact engine inputs. The detector is always asked for "person"; the
// VQA engine always receives the fixed composite question.
inline constexpr const char* kDetectorTextPrompt = "person";
inline constexpr const char* kVqaQuestion =
    "Is he/she or are they holding anything in the hand? Is he/she or are they standing or "
    "sitting? What is he/she or are they trying to do? Answer the questions concisely";

struct VisionPrompt {
    std::string sample_id;
    std::vector<std::uint8_t> crop;  // encoded PPM bytes
    std::string crop_path;           // relative path once cached
    Box box;                         // normalized, clipped to [0,1]
    int frame_index = 0;
    double detector_score = 0.0;
};

struct LanguagePrompt {
    std::string sample_id;
    std::string text;
    std::string question;
};

struct EngineMeta {
    std::string detector_name;
    std::string vqa_name;
    std::string timestamp;
};

struct PromptRecord {
    std::string sample_id;
    VisionPrompt vision;
    LanguagePrompt language;
    EngineMeta meta;
};

struct Detection {
    Box box;
    double score = 0.0;
};

// ---------------------------------------------------------------------------
// Engine clients
// ---------------------------------------------------------------------------

class EngineClient {
public:
    virtual ~EngineClient() = default;
    virtual std::vector<Detection> detect(const ImageBuffer& frame,
                                          const std::string& text_prompt) = 0;
    virtual std::string answer(const ImageBuffer& image, const std::string& question) = 0;
    virtual std::string detector_name() const = 0;
    virtual std::string vqa_name() const = 0;
};

// Deterministic function of (image bytes, seed); no external services.
class StubEngineClient : public EngineClient {
public:
    explicit StubEngineClient(std::uint64_t seed = 0) : seed_(seed) {}
    std::vector<Detection> detect(const ImageBuffer& frame, const std::string& text_prompt) override;
    std::string answer(const ImageBuffer& image, const std::string& question) override;
    std::string detector_name() const override { return "stub-detector"; }
    std::string vqa_name() const override { return "stub-vqa"; }

private:
    std::uint64_t seed_;
};

// HTTP adapters for the external detector / VQA services. Endpoints come from
// C2VL_DETECTOR_URL and C2VL_VQA_URL, the bearer token from C2VL_API_TOKEN.
class RemoteEngineClient : public EngineClient {
public:
    struct Options {
        std::string detector_url;
        std::string vqa_url;
        std::string api_token;
        int timeout_seconds = 60;
        int retries = 3;
        int backoff_ms = 200;  // doubled per attempt
    };
    static Options options_from_env();

    explicit RemoteEngineClient(Options opts);
    std::vector<Detection> detect(const ImageBuffer& frame, const std::string& text_prompt) override;
    std::string answer(const ImageBuffer& image, const std::string& question) override;
    std::string detector_name() const override { return "remote-detector"; }
    std::string vqa_name() const override { return "remote-vqa"; }

private:
    std::string post_json(const std::string& url, const std::string& body);
    Options opts_;
};

// Decorator that counts calls; used to verify that a warm cache run touches
// the engines zero times.
class CountingEngineClient : public EngineClient {
public:
    explicit CountingEngineClient(EngineClient& inner) : inner_(inner) {}
    std::vector<Detection> detect(const ImageBuffer& frame, const std::string& text_prompt) override {
        ++detect_calls_;
        return inner_.detect(frame, text_prompt);
    }
    std::string answer(const ImageBuffer& image, const std::string& question) override {
        ++answer_calls_;
        return inner_.answer(image, question);
    }
    std::string detector_name() const override { return inner_.detector_name(); }
    std::string vqa_name() const override { return inner_.vqa_name(); }
    long detect_calls() const { return detect_calls_.load(); }
    long answer_calls() const { return answer_calls_.load(); }

private:
    EngineClient& inner_;
    std::atomic<long> detect_calls_{0};
    std::atomic<long> answer_calls_{0};
};

// ---------------------------------------------------------------------------
// Frame sources
// ---------------------------------------------------------------------------

class FrameSource {
public:
    virtual ~FrameSource() = default;
    virtual int frame_count(const std::string& sample_id) = 0;
    virtual ImageBuffer frame(const std::string& sample_id, int index) = 0;
};

// One PPM per sample: <dir>/<sample_id>.ppm.
class DirectoryFrameSource : public FrameSource {
public:
    explicit DirectoryFrameSource(std::string dir) : dir_(std::move(dir)) {}
    int frame_count(const std::string& sample_id) override;
    ImageBuffer frame(const std::string& sample_id, int index) override;

private:
    std::string dir_;
};

// Procedural frames for the synthetic corpus: every sample of a class renders
// the same class-coded scene, so prompts are class-consistent by construction.
class SyntheticFrameSource : public FrameSource {
public:
    SyntheticFrameSource(std::unordered_map<std::string, int> labels, std::uint64_t seed)
        : labels_(std::move(labels)), seed_(seed) {}
    int frame_count(const std::string& sample_id) override;
    ImageBuffer frame(const std::string& sample_id, int index) override;

    static ImageBuffer class_frame(int label, std::uint64_t seed);

private:
    std::unordered_map<std::string, int> labels_;
    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Prompt generation
// ---------------------------------------------------------------------------

struct FramePolicy {
    int frames = 1;                  // frames sampled per video
    double threshold = 0.35;         // detector score cutoff
    bool fallback_fullframe = false; // full-frame crop instead of NoPersonFound
};

// Runs the detector on the selected frame(s) with the literal "person"
// prompt, unions all passing boxes (multi-person actions), clips, and crops.
VisionPrompt generate_vision_prompt(FrameSource& source, const std::string& sample_id,
                                    EngineClient& client, const FramePolicy& policy);

// Sends the fixed composite question for the crop; empty/whitespace answers
// raise EmptyCaptionError.
LanguagePrompt generate_language_prompt(const VisionPrompt& crop, EngineClient& client);

// ---------------------------------------------------------------------------
// Cache: append-only JSONL with last-write-wins on read. Crop bytes live in
// sibling files under "<cache>_crops/".
// ---------------------------------------------------------------------------

class PromptCache {
public:
    explicit PromptCache(const std::string& path);

    void put(const PromptRecord& record);
    PromptRecord get(const std::string& sample_id) const;  // NotFoundError when absent
    bool contains(const std::string& sample_id) const;
    std::size_t size() const;
    std::vector<PromptRecord> all_sorted() const;  // by sample_id

    // Crop bytes for a cached record.
    std::vector<std::uint8_t> load_crop(const PromptRecord& record) const;

    const std::string& path() const { return path_; }
    std::string crops_dir() const;

private:
    void reload();
    std::string path_;
    mutable std::mutex mu_;
    std::map<std::string, PromptRecord> records_;
};

// Generates prompts for every sample id not already cached. Calls may fan out
// over `workers` threads; appends stay serialized inside the cache.
struct GeneratePromptsStats {
    int generated = 0;
    int reused = 0;
};
GeneratePromptsStats generate_prompts(const std::vector<std::string>& sample_ids,
                                      FrameSource& source, EngineClient& client,
                                      PromptCache& cache, const FramePolicy& policy,
                                      int workers = 1);

// Missing sample ids (those without a cached record), sorted.
std::vector<std::string> missing_prompt_ids(const PromptCache& cache,
                                            const std::vector<std::string>& sample_ids);

}  // namespace c2vl
