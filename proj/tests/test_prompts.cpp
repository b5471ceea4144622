#include "doctest.h"

#include <fstream>
#include <thread>

#include "c2vl/common.hpp"
#include "c2vl/prompts.hpp"
#include "c2vl/synth.hpp"
#include "test_util.hpp"

// keep httplib (and its resolv.h macros) after the Eigen-bearing headers
#include "httplib.h"
#include "json.hpp"

using namespace c2vl;
using nlohmann::json;

namespace {

ImageBuffer test_frame(int w = 32, int h = 32, std::uint8_t fill = 100) {
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<std::size_t>(w) * h * 3, fill);
    return img;
}

// Minimal controllable engine for generation-path tests.
class FakeClient : public EngineClient {
public:
    std::vector<Detection> detections;
    std::string reply = "He reads.";
    std::string last_text_prompt, last_question;
    std::vector<Detection> detect(const ImageBuffer&, const std::string& text_prompt) override {
        last_text_prompt = text_prompt;
        return detections;
    }
    std::string answer(const ImageBuffer&, const std::string& question) override {
        last_question = question;
        return reply;
    }
    std::string detector_name() const override { return "fake-detector"; }
    std::string vqa_name() const override { return "fake-vqa"; }
};

class OneFrameSource : public FrameSource {
public:
    explicit OneFrameSource(ImageBuffer f) : frame_(std::move(f)) {}
    int frame_count(const std::string&) override { return 1; }
    ImageBuffer frame(const std::string&, int) override { return frame_; }

private:
    ImageBuffer frame_;
};

std::vector<std::string> g_warnings;
void capture_warn(const std::string& m) { g_warnings.push_back(m); }

}  // namespace

TEST_CASE("stub engine is a pure function of image bytes and seed") {
    StubEngineClient client(5);
    ImageBuffer f = test_frame();
    auto d1 = client.detect(f, kDetectorTextPrompt);
    auto d2 = client.detect(f, kDetectorTextPrompt);
    REQUIRE(d1.size() == 1);
    CHECK(d1[0].box.x0 == d2[0].box.x0);
    CHECK(d1[0].score == d2[0].score);
    CHECK(client.answer(f, kVqaQuestion) == client.answer(f, kVqaQuestion));
    StubEngineClient other(6);
    CHECK(client.answer(f, kVqaQuestion) != other.answer(f, kVqaQuestion));
}

TEST_CASE("vision prompt crops exactly the detected box") {
    ImageBuffer frame = test_frame(40, 40, 10);
    for (int y = 10; y < 30; ++y)
        for (int x = 8; x < 24; ++x) frame.at(x, y, 1) = 200;
    FakeClient client;
    client.detections = {{Box{0.2, 0.25, 0.6, 0.75}, 0.9}};
    OneFrameSource source(frame);
    VisionPrompt vp = generate_vision_prompt(source, "s1", client, FramePolicy{});
    CHECK(client.last_text_prompt == kDetectorTextPrompt);
    CHECK(vp.detector_score == doctest::Approx(0.9));
    CHECK(vp.crop == encode_ppm(crop_image(frame, Box{0.2, 0.25, 0.6, 0.75})));
}

TEST_CASE("detector wire prompt is literally person") {
    CHECK(std::string(kDetectorTextPrompt) == "person");
}

TEST_CASE("vqa question is the fixed composite string") {
    CHECK(std::string(kVqaQuestion) ==
          "Is he/she or are they holding anything in the hand? Is he/she or are they standing "
          "or sitting? What is he/she or are they trying to do? Answer the questions concisely");
    FakeClient client;
    client.detections = {{Box{0.2, 0.2, 0.8, 0.8}, 0.9}};
    OneFrameSource source(test_frame());
    VisionPrompt vp = generate_vision_prompt(source, "s1", client, FramePolicy{});
    LanguagePrompt lp = generate_language_prompt(vp, client);
    CHECK(client.last_question == std::string(kVqaQuestion));
    CHECK(lp.question == std::string(kVqaQuestion));
    CHECK(lp.text == "He reads.");
}

TEST_CASE("boxes past the frame edge are clipped to [0,1]") {
    FakeClient client;
    client.detections = {{Box{0.7, 0.6, 1.4, 1.2}, 0.8}};
    OneFrameSource source(test_frame());
    VisionPrompt vp = generate_vision_prompt(source, "s1", client, FramePolicy{});
    CHECK(vp.box.x1 <= 1.0);
    CHECK(vp.box.y1 <= 1.0);
    CHECK(vp.box.x0 >= 0.0);
}

TEST_CASE("multi-person detections merge into a union box") {
    FakeClient client;
    client.detections = {{Box{0.1, 0.1, 0.3, 0.5}, 0.8}, {Box{0.6, 0.2, 0.9, 0.7}, 0.7}};
    OneFrameSource source(test_frame());
    VisionPrompt vp = generate_vision_prompt(source, "s1", client, FramePolicy{});
    CHECK(vp.box.x0 == doctest::Approx(0.1));
    CHECK(vp.box.x1 == doctest::Approx(0.9));
    CHECK(vp.box.y1 == doctest::Approx(0.7));
    CHECK(vp.detector_score == doctest::Approx(0.8));
}

TEST_CASE("no detection above threshold raises NoPersonFound unless fallback is on") {
    FakeClient client;
    client.detections = {{Box{0.2, 0.2, 0.8, 0.8}, 0.1}};  // below 0.35
    OneFrameSource source(test_frame());
    CHECK_THROWS_AS(generate_vision_prompt(source, "s1", client, FramePolicy{}),
                    NoPersonFoundError);
    FramePolicy fallback;
    fallback.fallback_fullframe = true;
    VisionPrompt vp = generate_vision_prompt(source, "s1", client, fallback);
    CHECK(vp.box.x0 == 0.0);
    CHECK(vp.box.x1 == 1.0);
    CHECK(vp.detector_score == 0.0);
}

TEST_CASE("whitespace-only captions are rejected") {
    FakeClient client;
    client.detections = {{Box{0.2, 0.2, 0.8, 0.8}, 0.9}};
    client.reply = "  \t ";
    OneFrameSource source(test_frame());
    VisionPrompt vp = generate_vision_prompt(source, "s1", client, FramePolicy{});
    CHECK_THROWS_AS(generate_language_prompt(vp, client), EmptyCaptionError);
}

TEST_CASE("cache: put-get round trip, NotFound, overwrite warning") {
    std::string dir = c2vl_test::make_temp_dir("cache");
    PromptCache cache(dir + "/p.jsonl");

    PromptRecord r;
    r.sample_id = "a1";
    r.vision.sample_id = "a1";
    r.vision.crop = encode_ppm(test_frame(4, 4, 7));
    r.vision.box = Box{0.1, 0.2, 0.6, 0.9};
    r.vision.frame_index = 3;
    r.vision.detector_score = 0.77;
    r.language.sample_id = "a1";
    r.language.text = "She stands.";
    r.language.question = kVqaQuestion;
    r.meta = {"stub-detector", "stub-vqa", "2026-01-01T00:00:00Z"};
    cache.put(r);

    PromptRecord got = cache.get("a1");
    CHECK(got.sample_id == "a1");
    CHECK(got.vision.box.x1 == doctest::Approx(0.6));
    CHECK(got.vision.frame_index == 3);
    CHECK(got.language.text == "She stands.");
    CHECK(got.meta.vqa_name == "stub-vqa");
    CHECK(cache.load_crop(got) == r.vision.crop);
    CHECK_THROWS_AS(cache.get("nope"), NotFoundError);

    g_warnings.clear();
    set_warn_sink(&capture_warn);
    r.language.text = "new text";
    cache.put(r);
    set_warn_sink(nullptr);
    REQUIRE(g_warnings.size() == 1);
    CHECK(g_warnings[0].find("overwriting") != std::string::npos);
    CHECK(cache.get("a1").language.text == "new text");  // last write wins
    CHECK(cache.size() == 1);

    // a fresh reader resolves duplicates the same way
    PromptCache reread(dir + "/p.jsonl");
    CHECK(reread.size() == 1);
    CHECK(reread.get("a1").language.text == "new text");
}

TEST_CASE("cache: corrupt lines are skipped with their line number reported") {
    std::string dir = c2vl_test::make_temp_dir("cache_bad");
    std::string path = dir + "/p.jsonl";
    {
        PromptCache cache(path);
        PromptRecord r;
        r.sample_id = "ok1";
        r.language.text = "t";
        r.language.question = kVqaQuestion;
        cache.put(r);
    }
    std::ofstream(path, std::ios::app) << "{this is not json}\n";
    g_warnings.clear();
    set_warn_sink(&capture_warn);
    PromptCache cache(path);
    set_warn_sink(nullptr);
    CHECK(cache.size() == 1);
    REQUIRE(g_warnings.size() == 1);
    CHECK(g_warnings[0].find("line 2") != std::string::npos);
}

TEST_CASE("cache survives 10k concurrent writes without interleaving") {
    std::string dir = c2vl_test::make_temp_dir("cache_stress");
    std::string path = dir + "/p.jsonl";
    PromptCache cache(path);
    constexpr int kThreads = 8;
    constexpr int kPerThread = 1250;
    std::vector<std::thread> pool;
    for (int w = 0; w < kThreads; ++w) {
        pool.emplace_back([&cache, w]() {
            for (int i = 0; i < kPerThread; ++i) {
                PromptRecord r;
                r.sample_id = "w" + std::to_string(w) + "_" + std::to_string(i);
                r.language.text = "caption " + std::to_string(i);
                r.language.question = kVqaQuestion;
                cache.put(r);  // crop intentionally empty: pure line-append path
            }
        });
    }
    for (auto& t : pool) t.join();

    // oracle: count and parse every line independently
    std::ifstream in(path);
    std::string line;
    long lines = 0;
    long parsed = 0;
    while (std::getline(in, line)) {
        ++lines;
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("sample_id")) ++parsed;
    }
    CHECK(lines == kThreads * kPerThread);
    CHECK(parsed == kThreads * kPerThread);
    PromptCache reread(path);
    CHECK(reread.size() == static_cast<std::size_t>(kThreads * kPerThread));
}

TEST_CASE("warm cache issues zero engine calls and stays one-to-one") {
    SynthCorpus corpus = synth_generate(2, 5, 3);
    std::string dir = c2vl_test::make_temp_dir("warm");
    SyntheticFrameSource source(corpus.label_map(), 3);
    StubEngineClient stub(3);
    CountingEngineClient counting(stub);
    PromptCache cache(dir + "/p.jsonl");
    std::vector<std::string> ids;
    for (const auto& s : corpus.sequences) ids.push_back(s.sample_id);

    auto first = generate_prompts(ids, source, counting, cache, FramePolicy{}, 2);
    CHECK(first.generated == 10);
    CHECK(counting.detect_calls() == 10);
    CHECK(cache.size() == ids.size());  // one-to-one
    CHECK(missing_prompt_ids(cache, ids).empty());

    auto second = generate_prompts(ids, source, counting, cache, FramePolicy{}, 2);
    CHECK(second.generated == 0);
    CHECK(second.reused == 10);
    CHECK(counting.detect_calls() == 10);  // no new calls
    CHECK(counting.answer_calls() == 10);
}

TEST_CASE("remote engine speaks the documented wire format with auth and retries") {
    httplib::Server server;
    std::string seen_detect_body, seen_vqa_body, seen_auth;
    int detect_hits = 0;
    server.Post("/detect", [&](const httplib::Request& req, httplib::Response& res) {
        ++detect_hits;
        seen_detect_body = req.body;
        seen_auth = req.get_header_value("Authorization");
        if (detect_hits == 1) {  // first attempt fails, retry succeeds
            res.status = 500;
            return;
        }
        res.set_content(R"({"boxes":[[0.1,0.2,0.5,0.9]],"scores":[0.88]})", "application/json");
    });
    server.Post("/vqa", [&](const httplib::Request& req, httplib::Response& res) {
        seen_vqa_body = req.body;
        res.set_content(R"({"answer":"He is sitting."})", "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread st([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteEngineClient::Options opts;
    opts.detector_url = "http://127.0.0.1:" + std::to_string(port) + "/detect";
    opts.vqa_url = "http://127.0.0.1:" + std::to_string(port) + "/vqa";
    opts.api_token = "sekret";
    opts.backoff_ms = 1;
    RemoteEngineClient client(opts);

    ImageBuffer frame = test_frame(8, 8, 50);
    auto dets = client.detect(frame, kDetectorTextPrompt);
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].score == doctest::Approx(0.88));
    CHECK(detect_hits == 2);  // retried after the 500
    json dj = json::parse(seen_detect_body);
    CHECK(dj.at("text_prompt") == "person");
    CHECK(seen_auth == "Bearer sekret");
    std::vector<std::uint8_t> sent = base64_decode(dj.at("image_b64").get<std::string>());
    CHECK(sent == encode_ppm(frame));

    std::string answer = client.answer(frame, kVqaQuestion);
    CHECK(answer == "He is sitting.");
    json vj = json::parse(seen_vqa_body);
    CHECK(vj.at("question") == std::string(kVqaQuestion));

    server.stop();
    st.join();
}

TEST_CASE("remote engine reports a transport error after exhausted retries") {
    RemoteEngineClient::Options opts;
    opts.detector_url = "http://127.0.0.1:1/detect";  // nothing listens here
    opts.vqa_url = "http://127.0.0.1:1/vqa";
    opts.retries = 2;
    opts.backoff_ms = 1;
    opts.timeout_seconds = 1;
    RemoteEngineClient client(opts);
    CHECK_THROWS_AS(client.detect(test_frame(), kDetectorTextPrompt), TransportError);
}

TEST_CASE("synthetic frame source is class-consistent") {
    SynthCorpus corpus = synth_generate(3, 4, 9);
    SyntheticFrameSource source(corpus.label_map(), 9);
    ImageBuffer a = source.frame(corpus.sequences[0].sample_id, 0);
    // find another sample of the same class
    for (std::size_t i = 1; i < corpus.sequences.size(); ++i) {
        ImageBuffer b = source.frame(corpus.sequences[i].sample_id, 0);
        if (corpus.labels[i] == corpus.labels[0])
            CHECK(a.rgb == b.rgb);
        else
            CHECK(a.rgb != b.rgb);
    }
    CHECK_THROWS_AS(source.frame("unknown", 0), NotFoundError);
}
