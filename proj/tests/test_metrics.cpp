#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "counseval/metrics.hpp"
#include "counseval/rng.hpp"
#include "counseval/synth.hpp"

using namespace counseval;

namespace {

// Assigns axis-aligned unit vectors, one axis per distinct token: identical
// tokens get identical vectors, distinct tokens get orthogonal ones.
class OrthogonalProvider : public EmbeddingProvider {
public:
    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) override {
        std::vector<std::vector<double>> out;
        for (const auto& t : tokens) {
            if (!axis_.count(t)) {
                const std::size_t next = axis_.size();
                REQUIRE(next < 64);
                axis_[t] = next;
            }
            std::vector<double> v(64, 0.0);
            v[axis_[t]] = 1.0;
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::map<std::string, std::size_t> axis_;
};

class ConstantProvider : public EmbeddingProvider {
public:
    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) override {
        std::vector<double> v(8, 0.0);
        v[0] = 1.0;
        return std::vector<std::vector<double>>(tokens.size(), v);
    }
};

Strategy random_strategy(DetRng& rng) { return static_cast<Strategy>(rng.bounded(4)); }

} // namespace

TEST_CASE("tokenize applies the documented rule") {
    const TokenStream ts = tokenize("I hear you.");
    CHECK(ts.tokens == std::vector<std::string>{"i", "hear", "you", "."});
    CHECK(tokenize("").tokens.empty());
    // punctuation split + case fold + digit runs
    CHECK(tokenize("Don't worry, A1 ok?").tokens ==
          std::vector<std::string>{"don", "'", "t", "worry", ",", "a1", "ok", "?"});
    // Hebrew text with its own punctuation
    const TokenStream he = tokenize("\xD7\xA9\xD7\x9C\xD7\x95\xD7\x9D, \xD7\x9E\xD7\x94?");
    REQUIRE(he.tokens.size() == 4);
    CHECK(he.tokens[1] == ",");
    CHECK(he.tokens[3] == "?");
}

TEST_CASE("tokenize is idempotent on a single-space rejoin") {
    DetRng rng(3);
    const std::vector<std::string> texts = {
        "I hear you.", "What happened today?!", "Mixed CASE and 123 numbers",
        "shalom, ma shlomcha", "a  b\t c \n d"};
    for (const auto& text : texts) {
        const auto first = tokenize(text).tokens;
        std::string rejoined;
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i) rejoined += ' ';
            rejoined += first[i];
        }
        CHECK(tokenize(rejoined).tokens == first);
    }
}

TEST_CASE("token spans reference the normalized source") {
    const TokenStream ts = tokenize("Hear ME");
    REQUIRE(ts.spans.size() == 2);
    CHECK(ts.source.substr(ts.spans[0].first, ts.spans[0].second - ts.spans[0].first) == "Hear");
    CHECK(ts.source.substr(ts.spans[1].first, ts.spans[1].second - ts.spans[1].first) == "ME");
}

TEST_CASE("rouge-1 on the cat-sat/cat-ran pair is exactly two thirds") {
    const auto t = rouge_n(tokenize("the cat sat"), tokenize("the cat ran"), 1);
    CHECK_THAT(t.precision, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    CHECK_THAT(t.recall, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    CHECK_THAT(t.f1, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("rouge identity and disjoint cases") {
    const TokenStream a = tokenize("a b c d");
    for (int n : {1, 2}) {
        const auto t = rouge_n(a, a, n);
        CHECK(t.precision == 1.0);
        CHECK(t.recall == 1.0);
        CHECK(t.f1 == 1.0);
    }
    CHECK(rouge_n(tokenize("a b c"), tokenize("x y z"), 2).f1 == 0.0);
    CHECK(rouge_l(a, a).f1 == 1.0);
    CHECK(rouge_l(tokenize("a b"), tokenize("x y")).f1 == 0.0);
}

TEST_CASE("rouge-l on the hand-traced LCS example") {
    // cand "a b c d", ref "a c d": LCS = "a c d" (3), P = 3/4, R = 1
    const auto t = rouge_l(tokenize("a b c d"), tokenize("a c d"));
    CHECK_THAT(t.precision, Catch::Matchers::WithinAbs(0.75, 1e-12));
    CHECK_THAT(t.recall, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(t.f1, Catch::Matchers::WithinAbs(2.0 * 0.75 / 1.75, 1e-12));
}

TEST_CASE("swapping candidate and reference swaps P and R, leaving F1") {
    DetRng rng(17);
    const std::vector<std::string> words = {"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 50; ++trial) {
        auto sample = [&] {
            std::string s;
            const std::size_t k = 1 + rng.bounded(8);
            for (std::size_t i = 0; i < k; ++i) {
                if (i) s += ' ';
                s += words[rng.bounded(words.size())];
            }
            return tokenize(s);
        };
        const TokenStream x = sample(), y = sample();
        for (int n : {1, 2}) {
            const auto f = rouge_n(x, y, n), b = rouge_n(y, x, n);
            CHECK(f.precision == b.recall);
            CHECK(f.recall == b.precision);
            CHECK_THAT(f.f1, Catch::Matchers::WithinAbs(b.f1, 1e-12));
        }
        const auto f = rouge_l(x, y), b = rouge_l(y, x);
        CHECK(f.precision == b.recall);
        CHECK(f.recall == b.precision);
    }
}

TEST_CASE("corpus BLEU is 100 for identical corpora") {
    const std::vector<TokenStream> c = {tokenize("a b c d e"), tokenize("x y z")};
    CHECK_THAT(corpus_bleu(c, c), Catch::Matchers::WithinAbs(100.0, 1e-9));
}

TEST_CASE("sentence BLEU brevity penalty matches the hand formula") {
    // single matching token against a 5-token reference: every modified
    // precision is 1 (add-one smoothing on empty higher orders), so
    // BLEU = 100 * exp(1 - 5/1)
    const double b = sentence_bleu(tokenize("a"), tokenize("a b c d e"));
    CHECK_THAT(b, Catch::Matchers::WithinAbs(100.0 * std::exp(-4.0), 1e-9));
}

TEST_CASE("sentence BLEU degenerate and monotone cases") {
    CHECK(sentence_bleu(tokenize(""), tokenize("a b")) == 0.0);
    const TokenStream ref = tokenize("a b c d");
    const double two = sentence_bleu(tokenize("a b"), ref);
    const double three = sentence_bleu(tokenize("a b c"), ref);
    CHECK(three > two); // appending the next matching token helps
    CHECK_THAT(sentence_bleu(ref, ref), Catch::Matchers::WithinAbs(100.0, 1e-9));
}

TEST_CASE("corpus BLEU validates input lengths") {
    REQUIRE_THROWS_AS(corpus_bleu({tokenize("a")}, {}), std::invalid_argument);
}

TEST_CASE("bertscore with a constant provider is exactly one") {
    ConstantProvider provider;
    const auto t = bertscore(tokenize("x y z"), tokenize("p q"), provider);
    CHECK(t.precision == 1.0);
    CHECK(t.recall == 1.0);
    CHECK(t.f1 == 1.0);
}

TEST_CASE("bertscore with orthogonal vectors on disjoint vocab is zero") {
    OrthogonalProvider provider;
    const auto t = bertscore(tokenize("a b"), tokenize("c d"), provider);
    CHECK(t.precision == 0.0);
    CHECK(t.recall == 0.0);
    CHECK(t.f1 == 0.0);
}

TEST_CASE("bertscore identity with the deterministic hash provider") {
    HashEmbeddingProvider provider(7);
    const TokenStream ts = tokenize("I hear how hard this is");
    const auto t = bertscore(ts, ts, provider);
    CHECK_THAT(t.precision, Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(t.recall, Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK_THAT(t.f1, Catch::Matchers::WithinAbs(1.0, 1e-9));
    REQUIRE_THROWS_AS(bertscore(tokenize(""), ts, provider), std::invalid_argument);
}

TEST_CASE("hash provider embeddings are unit-norm and reproducible") {
    HashEmbeddingProvider a(42), b(42), other(43);
    const std::vector<std::string> tokens = {"calm", "breath", "calm"};
    const auto va = a.embed(tokens), vb = b.embed(tokens), vo = other.embed(tokens);
    REQUIRE(va.size() == 3);
    CHECK(va == vb);
    CHECK(va[0] == va[2]); // same token, same vector
    CHECK(va != vo);
    for (const auto& v : va) {
        double norm = 0.0;
        for (double x : v) norm += x * x;
        CHECK_THAT(std::sqrt(norm), Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
}

TEST_CASE("file embedding provider reads token vectors and normalizes them") {
    std::istringstream in("calm\t1,0,0,0\nbreath\t0,2,0,0\nhear\t3,4,0,0\n");
    FileEmbeddingProvider provider(in, 9);
    CHECK(provider.dimension() == 4);
    const auto vecs = provider.embed({"calm", "breath", "hear", "unknown"});
    REQUIRE(vecs.size() == 4);
    CHECK(vecs[0] == std::vector<double>{1, 0, 0, 0});
    CHECK(vecs[1] == std::vector<double>{0, 1, 0, 0});
    CHECK_THAT(vecs[2][0], Catch::Matchers::WithinAbs(0.6, 1e-12));
    CHECK_THAT(vecs[2][1], Catch::Matchers::WithinAbs(0.8, 1e-12));
    // unknown token falls back to the deterministic hash embedding
    double norm = 0.0;
    for (double x : vecs[3]) norm += x * x;
    CHECK_THAT(std::sqrt(norm), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK(vecs[3] == provider.embed({"unknown"}).front());

    // orthogonal axes on disjoint vocab behave like the constructed provider
    const auto t = bertscore(tokenize("calm"), tokenize("breath"), provider);
    CHECK(t.f1 == 0.0);

    std::istringstream bad("a\t1,0\nb\t1,2,3\n");
    REQUIRE_THROWS_WITH(FileEmbeddingProvider(bad),
                        Catch::Matchers::ContainsSubstring("inconsistent dimension"));
}

TEST_CASE("sim equals the proportion of matching labels") {
    using S = Strategy;
    CHECK(sim({{S::Reflection, S::Prompting}, {S::Reflection, S::Prompting}}) == 1.0);
    CHECK_THAT(sim({{S::Reflection, S::Prompting, S::Neutral},
                    {S::Reflection, S::Suggestion, S::Neutral}}),
               Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
    REQUIRE_THROWS_AS(sim({{S::Neutral}, {}}), std::invalid_argument);
    REQUIRE_THROWS_AS(sim({{}, {}}), std::invalid_argument);
}

TEST_CASE("sim agrees with a brute-force match counter on random lists") {
    DetRng rng(88);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t m = 1 + rng.bounded(50);
        SimInput input;
        for (std::size_t i = 0; i < m; ++i) {
            input.predicted.push_back(random_strategy(rng));
            input.gold.push_back(random_strategy(rng));
        }
        std::size_t matches = 0;
        for (std::size_t i = 0; i < m; ++i)
            if (input.predicted[i] == input.gold[i]) ++matches;
        CHECK(sim(input) == double(matches) / double(m));
    }
}

TEST_CASE("evaluate_run on identity generations attains every maximum") {
    SynthConfig cfg;
    cfg.n_sessions = 12;
    cfg.seed = 5;
    const SynthCorpus synth = generate_corpus(cfg);
    const auto samples = expand_corpus(synth.corpus, "sys");
    REQUIRE(samples.size() >= 20);

    std::vector<GenerationRecord> identity;
    for (const auto& s : samples)
        identity.push_back({s.sample_id, s.target, "identity", std::nullopt});

    const auto labeled = labeled_counselor_utterances(synth.corpus, synth.gold);
    TrainConfig tc;
    tc.features.hash_bits = 14;
    tc.seed = 3;
    const ClassifierModel classifier =
        train_classifier(labeled, std::vector<LabeledUtterance>(labeled.begin(),
                                                                labeled.begin() + 40),
                         tc);
    LmConfig lc;
    lc.min_count = 1;
    const NgramLm lm = train_lm(counselor_utterances(synth.corpus), lc);
    HashEmbeddingProvider provider(1);
    const EvalBundle bundle{&classifier, &lm, &provider, 2};

    const MetricSuiteResult result = evaluate_run(samples, identity, bundle);
    REQUIRE(result.samples.size() == samples.size());
    CHECK(result.aggregate.sim == 1.0);
    CHECK_THAT(result.aggregate.corpus_bleu, Catch::Matchers::WithinAbs(100.0, 1e-9));
    CHECK_THAT(result.aggregate.rouge1.f1, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(result.aggregate.rouge2.f1, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(result.aggregate.rouge_l.f1, Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(result.aggregate.bert.f1, Catch::Matchers::WithinAbs(1.0, 1e-9));
    CHECK(result.aggregate.ppl_scored == samples.size());

    // aggregates are invariant under sample reordering
    auto shuffled_samples = samples;
    auto shuffled_gens = identity;
    DetRng r1(9), r2(9);
    r1.shuffle(shuffled_samples);
    r2.shuffle(shuffled_gens);
    const MetricSuiteResult again = evaluate_run(shuffled_samples, shuffled_gens, bundle);
    CHECK(again.aggregate.sim == result.aggregate.sim);
    CHECK(again.aggregate.corpus_bleu == result.aggregate.corpus_bleu);
    CHECK(again.aggregate.mean_ppl == result.aggregate.mean_ppl);

    // metric suite JSON round-trips
    const auto j = metric_result_to_json(result);
    const MetricSuiteResult parsed = metric_result_from_json(j);
    CHECK(metric_result_to_json(parsed) == j);
}

TEST_CASE("evaluate_run fails closed on unaligned samples") {
    SynthConfig cfg;
    cfg.n_sessions = 3;
    cfg.seed = 1;
    const SynthCorpus synth = generate_corpus(cfg);
    const auto samples = expand_corpus(synth.corpus, "sys");
    std::vector<GenerationRecord> gens;
    for (std::size_t i = 0; i + 1 < samples.size(); ++i)
        gens.push_back({samples[i].sample_id, samples[i].target, "it", std::nullopt});

    const auto labeled = labeled_counselor_utterances(synth.corpus, synth.gold);
    TrainConfig tc;
    tc.features.hash_bits = 12;
    tc.max_epochs = 2;
    const ClassifierModel classifier = train_classifier(labeled, labeled, tc);
    LmConfig lc;
    lc.min_count = 1;
    const NgramLm lm = train_lm(counselor_utterances(synth.corpus), lc);
    HashEmbeddingProvider provider;
    const EvalBundle bundle{&classifier, &lm, &provider, 1};
    REQUIRE_THROWS_WITH(evaluate_run(samples, gens, bundle),
                        Catch::Matchers::ContainsSubstring("without generations"));
}
