#include <catch2/catch_amalgamated.hpp>

#include <httplib.h>

#include <atomic>
#include <mutex>
#include <sstream>
#include <thread>

#include "counseval/genclient.hpp"
#include "counseval/metrics.hpp"
#include "counseval/scrub.hpp"

using namespace counseval;

namespace {

struct MockServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    template <class Handler>
    void start(const std::string& path, Handler handler) {
        server.Post(path, handler);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(port) + path;
    }

    ~MockServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
};

std::vector<SftSample> make_samples(std::size_t n) {
    std::vector<SftSample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        SftSample s;
        s.sample_id = "s" + std::to_string(i);
        s.session_id = "sess";
        s.turn_index = static_cast<int>(i);
        s.system_prompt = "be kind";
        s.language = "he";
        s.history = {{SpeakerRole::HelpSeeker, "seeker says " + std::to_string(i)},
                     {SpeakerRole::Counselor, "earlier reply"},
                     {SpeakerRole::HelpSeeker, "latest message " + std::to_string(i)}};
        s.target = "gold " + std::to_string(i);
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace

TEST_CASE("generation JSONL round-trips and rejects duplicates") {
    const std::vector<GenerationRecord> records = {{"a", "text one", "sys", 12.5},
                                                   {"b", "", "sys", std::nullopt}};
    std::ostringstream out;
    save_generations(records, out);
    std::istringstream in(out.str());
    const auto loaded = load_generations(in);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].sample_id == "a");
    CHECK(loaded[0].latency_ms == 12.5);
    CHECK(loaded[1].text.empty());
    CHECK_FALSE(loaded[1].latency_ms.has_value());

    std::istringstream dup(out.str() + R"({"sample_id": "a", "system": "s", "text": "x"})" + "\n");
    REQUIRE_THROWS_WITH(load_generations(dup),
                        Catch::Matchers::ContainsSubstring("duplicate sample_id"));
}

TEST_CASE("align joins on sample_id and fails closed on missing generations") {
    const auto samples = make_samples(3);
    std::vector<GenerationRecord> records = {{"s0", "r0", "sys", std::nullopt},
                                             {"s2", "r2", "sys", std::nullopt},
                                             {"extra", "r", "sys", std::nullopt}};
    REQUIRE_THROWS_WITH(align(samples, records, false),
                        Catch::Matchers::ContainsSubstring("s1"));

    const AlignedPairs partial = align(samples, records, true);
    REQUIRE(partial.samples.size() == 2);
    CHECK(partial.records[0].sample_id == "s0");
    CHECK(partial.records[1].sample_id == "s2");
    REQUIRE(partial.missing_ids == std::vector<std::string>{"s1"});
    REQUIRE(partial.extra_ids == std::vector<std::string>{"extra"});

    records.insert(records.begin() + 1, {"s1", "r1", "sys", std::nullopt});
    const AlignedPairs full = align(samples, records, false);
    CHECK(full.samples.size() == 3);
    CHECK(full.missing_ids.empty());
    CHECK(full.extra_ids == std::vector<std::string>{"extra"});
}

TEST_CASE("chat request body is a pure function with mapped roles") {
    const auto samples = make_samples(1);
    const SystemPrompt prompt{"he", "stay supportive"};
    const auto body1 = chat_request_body(samples[0], prompt, "test-model");
    const auto body2 = chat_request_body(samples[0], prompt, "test-model");
    CHECK(body1 == body2);
    CHECK(body1.at("model") == "test-model");
    const auto& messages = body1.at("messages");
    REQUIRE(messages.size() == 4); // system + 3 history turns
    CHECK(messages[0].at("role") == "system");
    CHECK(messages[1].at("role") == "user");
    CHECK(messages[2].at("role") == "assistant");
    CHECK(messages[3].at("role") == "user");
}

TEST_CASE("generate_remote aligns an echo endpoint 1:1 in input order") {
    MockServer mock;
    mock.start("/chat", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        const auto& messages = body.at("messages");
        std::string last_user;
        for (const auto& m : messages)
            if (m.at("role") == "user") last_user = m.at("content").get<std::string>();
        res.set_content(nlohmann::json({{"text", "echo: " + last_user}}).dump(),
                        "application/json");
    });

    const auto samples = make_samples(5);
    EndpointConfig ep;
    ep.base_url = mock.url("/chat");
    ep.model_name = "echo-model";
    ep.backoff_base_s = 0.0;
    ep.max_parallel = 3;
    const GenerateResult result = generate_remote(samples, ep, {"he", "be kind"});
    REQUIRE(result.failed_ids.empty());
    REQUIRE(result.records.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(result.records[i].sample_id == samples[i].sample_id);
        CHECK(result.records[i].text == "echo: latest message " + std::to_string(i));
        CHECK(result.records[i].system_name == "echo-model");
        CHECK(result.records[i].latency_ms.has_value());
    }
}

TEST_CASE("generate_remote retries through transient 500s") {
    MockServer mock;
    std::atomic<int> attempts{0};
    mock.start("/chat", [&](const httplib::Request&, httplib::Response& res) {
        const int n = ++attempts;
        if (n <= 2) {
            res.status = 500;
            res.set_content("try later", "text/plain");
            return;
        }
        res.set_content(nlohmann::json({{"text", "finally"}}).dump(), "application/json");
    });

    const auto samples = make_samples(1);
    EndpointConfig ep;
    ep.base_url = mock.url("/chat");
    ep.max_retries = 3;
    ep.backoff_base_s = 0.0;
    const GenerateResult result = generate_remote(samples, ep, {"he", "p"});
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].text == "finally");
    CHECK(attempts == 3);
}

TEST_CASE("generate_remote fails closed after exhausting retries") {
    MockServer mock;
    mock.start("/chat", [](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
    });
    const auto samples = make_samples(2);
    EndpointConfig ep;
    ep.base_url = mock.url("/chat");
    ep.max_retries = 1;
    ep.backoff_base_s = 0.0;
    REQUIRE_THROWS_WITH(generate_remote(samples, ep, {"he", "p"}),
                        Catch::Matchers::ContainsSubstring("failed"));

    const GenerateResult partial = generate_remote(samples, ep, {"he", "p"}, true);
    CHECK(partial.records.empty());
    CHECK(partial.failed_ids.size() == 2);
}

TEST_CASE("max_parallel 1 keeps requests strictly sequential") {
    MockServer mock;
    std::atomic<int> active{0};
    std::atomic<int> max_active{0};
    std::atomic<int> served{0};
    mock.start("/chat", [&](const httplib::Request&, httplib::Response& res) {
        const int now = ++active;
        int prev = max_active.load();
        while (now > prev && !max_active.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(15));
        --active;
        ++served;
        res.set_content(nlohmann::json({{"text", "ok"}}).dump(), "application/json");
    });

    const auto samples = make_samples(4);
    EndpointConfig ep;
    ep.base_url = mock.url("/chat");
    ep.backoff_base_s = 0.0;
    ep.max_parallel = 1;
    const GenerateResult result = generate_remote(samples, ep, {"he", "p"});
    CHECK(result.records.size() == 4);
    CHECK(max_active.load() == 1);
    // at-most-one request per sample on the success path
    CHECK(served.load() == 4);
}

TEST_CASE("a 429 rate limit is retried with backoff and then succeeds") {
    MockServer mock;
    std::atomic<int> attempts{0};
    mock.start("/chat", [&](const httplib::Request&, httplib::Response& res) {
        if (++attempts == 1) {
            res.status = 429;
            return;
        }
        res.set_content(nlohmann::json({{"text", "after limit"}}).dump(), "application/json");
    });
    const auto samples = make_samples(1);
    EndpointConfig ep;
    ep.base_url = mock.url("/chat");
    ep.max_retries = 2;
    ep.backoff_base_s = 0.001;
    const GenerateResult result = generate_remote(samples, ep, {"he", "p"});
    REQUIRE(result.records.size() == 1);
    CHECK(result.records[0].text == "after limit");
    CHECK(attempts == 2);
}

TEST_CASE("remote embedding provider speaks the tokens/vectors contract") {
    MockServer mock;
    mock.start("/embed", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json vectors = nlohmann::json::array();
        for (const auto& t : body.at("tokens")) {
            (void)t;
            vectors.push_back(std::vector<double>{1.0, 0.0});
        }
        res.set_content(nlohmann::json({{"vectors", vectors}}).dump(), "application/json");
    });
    EndpointConfig ep;
    ep.base_url = mock.url("/embed");
    ep.backoff_base_s = 0.0;
    RemoteEmbeddingProvider provider(ep);
    const auto vecs = provider.embed({"a", "b", "c"});
    REQUIRE(vecs.size() == 3);
    CHECK(vecs[0] == std::vector<double>{1.0, 0.0});
    // identical vectors for every token make BERTScore exactly one
    const auto t = bertscore(tokenize("x y"), tokenize("p q r"), provider);
    CHECK(t.f1 == 1.0);
}

TEST_CASE("HTTP NER span provider round-trips the span schema") {
    MockServer mock;
    mock.start("/ner", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        const std::string text = body.at("text").get<std::string>();
        nlohmann::json spans = nlohmann::json::array();
        const auto pos = text.find("Dana");
        if (pos != std::string::npos)
            spans.push_back({{"start", pos}, {"end", pos + 4}, {"kind", "PER"}});
        res.set_content(nlohmann::json({{"spans", spans}}).dump(), "application/json");
    });
    EndpointConfig ep;
    ep.base_url = mock.url("/ner");
    ep.backoff_base_s = 0.0;
    const auto spans = fetch_ner_spans(ep, "call Dana now");
    REQUIRE(spans.size() == 1);
    CHECK(spans[0].start == 5);
    CHECK(spans[0].end == 9);
    CHECK(apply_ner_spans("call Dana now", spans) == "call [NAME] now");
    CHECK(fetch_ner_spans(ep, "no names here").empty());
}

TEST_CASE("the default system prompt is non-empty and language-tagged") {
    const SystemPrompt p = default_system_prompt("ar");
    CHECK(p.language == "ar");
    CHECK_FALSE(p.text.empty());
    CHECK(p.text.find("empathetic") != std::string::npos);
}
