#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "counseval/rng.hpp"
#include "counseval/slm.hpp"

using namespace counseval;

namespace {

LmConfig addk_config(int order = 2) {
    LmConfig cfg;
    cfg.order = order;
    cfg.min_count = 1;
    cfg.smoothing = Smoothing::AddK;
    cfg.add_k = 1.0;
    return cfg;
}

LmConfig kn_config(int order = 3) {
    LmConfig cfg;
    cfg.order = order;
    cfg.min_count = 1;
    cfg.smoothing = Smoothing::InterpolatedKN;
    return cfg;
}

double conditional_sum(const NgramLm& lm, const std::vector<std::uint32_t>& ctx) {
    double total = 0.0;
    for (std::uint32_t id : lm.predictable_ids()) total += lm.cond_prob(ctx, id);
    return total;
}

std::vector<std::string> random_utterances(DetRng& rng, std::size_t n) {
    const std::vector<std::string> words = {"calm", "breath", "talk", "here", "with",
                                            "you",  "stay",   "safe", "now",  "slow"};
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string u;
        const std::size_t k = 1 + rng.bounded(8);
        for (std::size_t j = 0; j < k; ++j) {
            if (j) u += ' ';
            u += words[rng.bounded(words.size())];
        }
        out.push_back(std::move(u));
    }
    return out;
}

} // namespace

TEST_CASE("add-1 bigram probability matches the hand count") {
    // corpus ["a b", "a b"]: vocabulary {a, b, UNK, </s>} so |V| = 4,
    // count(a) = 2, count(a,b) = 2, hence p(b|a) = (2+1)/(2+4).
    const NgramLm lm = NgramLm::train({"a b", "a b"}, addk_config());
    REQUIRE(lm.vocab_size() == 4);
    CHECK_THAT(lm.cond_prob({lm.token_id("a")}, lm.token_id("b")),
               Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("conditional distributions sum to one for both smoothing modes") {
    DetRng rng(31);
    const auto corpus = random_utterances(rng, 60);
    for (const LmConfig& cfg : {addk_config(3), kn_config(3)}) {
        const NgramLm lm = NgramLm::train(corpus, cfg);
        const auto contexts = lm.seen_contexts();
        REQUIRE_FALSE(contexts.empty());
        for (std::size_t i = 0; i < std::min<std::size_t>(contexts.size(), 50); ++i)
            CHECK_THAT(conditional_sum(lm, contexts[i]), Catch::Matchers::WithinAbs(1.0, 1e-6));
        // unseen contexts normalize too
        const auto ids = lm.predictable_ids();
        for (int t = 0; t < 20; ++t) {
            std::vector<std::uint32_t> ctx = {
                static_cast<std::uint32_t>(ids[rng.bounded(ids.size())]),
                static_cast<std::uint32_t>(900000 + rng.bounded(100))};
            CHECK_THAT(conditional_sum(lm, ctx), Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
    }
}

TEST_CASE("a single-utterance corpus trains without error") {
    CHECK_NOTHROW(NgramLm::train({"just one line"}, addk_config()));
    REQUIRE_THROWS_WITH(NgramLm::train({}, addk_config()),
                        Catch::Matchers::ContainsSubstring("no tokens"));
    REQUIRE_THROWS_WITH(NgramLm::train({"  "}, addk_config()),
                        Catch::Matchers::ContainsSubstring("no tokens"));
}

TEST_CASE("hand-computed add-1 bigram perplexity fixture") {
    // corpus "x x x x": vocab {x, UNK, </s>}, |V| = 3; padded counts
    // (<s>,x)=1, (x,x)=3, (x,</s>)=1. Scoring "x x" (N = 3):
    // p(x|<s>) = (1+1)/(1+3), p(x|x) = (3+1)/(4+3), p(</s>|x) = (1+1)/(4+3)
    // PPL = (1/2 * 4/7 * 2/7)^(-1/3) = (49/4)^(1/3).
    const NgramLm lm = NgramLm::train({"x x x x"}, addk_config());
    REQUIRE(lm.vocab_size() == 3);
    CHECK_THAT(lm.perplexity("x x"), Catch::Matchers::WithinAbs(std::cbrt(49.0 / 4.0), 1e-9));
}

TEST_CASE("the uniform model's perplexity equals the vocabulary size") {
    const NgramLm lm = NgramLm::uniform({"alpha", "beta", "gamma"});
    REQUIRE(lm.vocab_size() == 5);
    for (const char* u : {"alpha beta", "gamma gamma gamma", "unseen words here"})
        CHECK_THAT(lm.perplexity(u), Catch::Matchers::WithinRel(5.0, 1e-9));
}

TEST_CASE("perplexity is at least one and OOV tokens score as UNK") {
    DetRng rng(7);
    const auto corpus = random_utterances(rng, 40);
    for (const LmConfig& cfg : {addk_config(2), kn_config(3)}) {
        const NgramLm lm = NgramLm::train(corpus, cfg);
        for (const auto& u : random_utterances(rng, 30)) CHECK(lm.perplexity(u) >= 1.0);
        CHECK(lm.perplexity("entirely novel vocabulary") >= 1.0);
        CHECK(lm.token_id("entirely") == NgramLm::kUnkId);
    }
}

TEST_CASE("empty utterances are rejected with a no-tokens error") {
    const NgramLm lm = NgramLm::train({"a b"}, addk_config());
    REQUIRE_THROWS_WITH(lm.perplexity(""), Catch::Matchers::ContainsSubstring("no tokens"));
    REQUIRE_THROWS_WITH(lm.perplexity("   "), Catch::Matchers::ContainsSubstring("no tokens"));
}

TEST_CASE("mean perplexity is the macro average and skips empty utterances") {
    const NgramLm lm = NgramLm::train({"a b c", "a b", "c a"}, addk_config());
    const double p1 = lm.perplexity("a b");
    const double p2 = lm.perplexity("c c a");
    const MeanPerplexity mean = lm.mean_perplexity({"a b", "c c a", "  "});
    CHECK_THAT(mean.mean, Catch::Matchers::WithinAbs((p1 + p2) / 2.0, 1e-12));
    CHECK(mean.scored == 2);
    CHECK(mean.skipped == 1);

    const MeanPerplexity same = lm.mean_perplexity({"a b", "a b", "a b"});
    CHECK_THAT(same.mean, Catch::Matchers::WithinAbs(p1, 1e-12));

    REQUIRE_THROWS_WITH(lm.mean_perplexity({"", "  "}),
                        Catch::Matchers::ContainsSubstring("no scoreable"));
}

TEST_CASE("mean perplexity is invariant under utterance reordering") {
    const NgramLm lm = NgramLm::train({"a b c d", "b c d a"}, kn_config(2));
    std::vector<std::string> utterances = {"a b", "c d", "d a b", "b"};
    const double before = lm.mean_perplexity(utterances).mean;
    DetRng(5).shuffle(utterances);
    CHECK(lm.mean_perplexity(utterances).mean == before);
}

TEST_CASE("training text is less perplexing than its random permutations") {
    DetRng rng(90);
    const std::vector<std::string> words = {"one", "two", "three", "four", "five",
                                            "six", "seven", "eight"};
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::string> tokens;
        const std::size_t k = 4 + rng.bounded(5);
        for (std::size_t j = 0; j < k; ++j) tokens.push_back(words[rng.bounded(words.size())]);
        auto join = [](const std::vector<std::string>& ts) {
            std::string s;
            for (std::size_t i = 0; i < ts.size(); ++i) {
                if (i) s += ' ';
                s += ts[i];
            }
            return s;
        };
        const std::string original = join(tokens);
        for (const LmConfig& cfg : {addk_config(2), kn_config(3)}) {
            const NgramLm lm = NgramLm::train({original}, cfg);
            const double base = lm.perplexity(original);
            for (int p = 0; p < 5; ++p) {
                auto shuffled = tokens;
                rng.shuffle(shuffled);
                CHECK(base <= lm.perplexity(join(shuffled)) + 1e-9);
            }
        }
    }
}

TEST_CASE("model files are deterministic and round-trip scoring exactly") {
    DetRng rng(12);
    const auto corpus = random_utterances(rng, 50);
    const NgramLm lm = NgramLm::train(corpus, kn_config(3));

    std::ostringstream bytes1, bytes2;
    lm.save(bytes1);
    lm.save(bytes2);
    CHECK(bytes1.str() == bytes2.str());

    std::istringstream in(bytes1.str());
    const NgramLm loaded = NgramLm::load(in);
    std::ostringstream bytes3;
    loaded.save(bytes3);
    CHECK(bytes3.str() == bytes1.str());
    for (const auto& u : random_utterances(rng, 10))
        CHECK(loaded.perplexity(u) == lm.perplexity(u));
}

TEST_CASE("config validation raises on bad settings") {
    LmConfig cfg;
    cfg.order = 0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = LmConfig{};
    cfg.min_count = 0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = LmConfig{};
    cfg.smoothing = Smoothing::AddK;
    cfg.add_k = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
