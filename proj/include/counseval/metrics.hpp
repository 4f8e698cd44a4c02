#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "counseval/curate.hpp"
#include "counseval/genclient.hpp"
#include "counseval/parallel.hpp"
#include "counseval/rng.hpp"
#include "counseval/slm.hpp"
#include "counseval/strategy.hpp"
#include "counseval/text.hpp"

namespace counseval {

// Tokens with byte spans into the (NFC-normalized) source they came from.
struct TokenStream {
    std::vector<std::string> tokens;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::string source;

    std::size_t size() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
};

// The language tag is accepted for interface symmetry; the rule set itself is
// script-driven (case folding only applies where the script has case).
inline TokenStream tokenize(const std::string& text, const std::string& /*language*/ = "") {
    RawTokens raw = tokenize_core(text);
    return {std::move(raw.tokens), std::move(raw.spans), std::move(raw.source)};
}

struct ScoreTriple {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    static ScoreTriple from_pr(double p, double r) {
        ScoreTriple t;
        t.precision = p;
        t.recall = r;
        t.f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
        return t;
    }
};

namespace detail {

inline std::map<std::string, std::size_t> ngram_counts(const TokenStream& ts, int n) {
    std::map<std::string, std::size_t> counts;
    if (ts.size() < static_cast<std::size_t>(n)) return counts;
    for (std::size_t i = 0; i + n <= ts.size(); ++i) {
        std::string key;
        for (int j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += ts.tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

} // namespace detail

// Clipped n-gram overlap; both precision and recall are retained, F1 is the
// headline number.
inline ScoreTriple rouge_n(const TokenStream& candidate, const TokenStream& reference, int n) {
    if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    std::size_t cand_total = 0, ref_total = 0, overlap = 0;
    for (const auto& [_, c] : cand) cand_total += c;
    for (const auto& [_, c] : ref) ref_total += c;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    const double p = cand_total ? double(overlap) / double(cand_total) : 0.0;
    const double r = ref_total ? double(overlap) / double(ref_total) : 0.0;
    return ScoreTriple::from_pr(p, r);
}

inline ScoreTriple rouge_l(const TokenStream& candidate, const TokenStream& reference) {
    const std::size_t l = detail::lcs_length(candidate.tokens, reference.tokens);
    const double p = candidate.size() ? double(l) / double(candidate.size()) : 0.0;
    const double r = reference.size() ? double(l) / double(reference.size()) : 0.0;
    return ScoreTriple::from_pr(p, r);
}

// ---- BLEU (0-100 scale) ----

namespace detail {

struct BleuStats {
    std::array<std::size_t, 4> match{};
    std::array<std::size_t, 4> total{};
    std::size_t cand_len = 0;
    std::size_t ref_len = 0;

    void add(const TokenStream& candidate, const TokenStream& reference) {
        cand_len += candidate.size();
        ref_len += reference.size();
        for (int n = 1; n <= 4; ++n) {
            const auto cand = ngram_counts(candidate, n);
            const auto ref = ngram_counts(reference, n);
            for (const auto& [_, c] : cand) total[n - 1] += c;
            for (const auto& [g, c] : cand) {
                auto it = ref.find(g);
                if (it != ref.end()) match[n - 1] += std::min(c, it->second);
            }
        }
    }
};

// Modified n-gram precision up to order 4 with add-one smoothing on orders
// >= 2, uniform weights, geometric mean and the standard brevity penalty.
inline double bleu_from_stats(const BleuStats& s) {
    if (s.cand_len == 0) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        double p;
        if (n == 1) {
            if (s.total[0] == 0 || s.match[0] == 0) return 0.0;
            p = double(s.match[0]) / double(s.total[0]);
        } else {
            p = (double(s.match[n - 1]) + 1.0) / (double(s.total[n - 1]) + 1.0);
        }
        log_sum += 0.25 * std::log(p);
    }
    const double bp = s.cand_len >= s.ref_len
                          ? 1.0
                          : std::exp(1.0 - double(s.ref_len) / double(s.cand_len));
    return 100.0 * bp * std::exp(log_sum);
}

} // namespace detail

inline double corpus_bleu(const std::vector<TokenStream>& candidates,
                          const std::vector<TokenStream>& references) {
    if (candidates.size() != references.size())
        throw std::invalid_argument("corpus_bleu: list length mismatch");
    if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty input");
    detail::BleuStats stats;
    for (std::size_t i = 0; i < candidates.size(); ++i) stats.add(candidates[i], references[i]);
    return detail::bleu_from_stats(stats);
}

// Same formula restricted to one pair; feeds the paired statistics, which
// need a per-sample value.
inline double sentence_bleu(const TokenStream& candidate, const TokenStream& reference) {
    detail::BleuStats stats;
    stats.add(candidate, reference);
    return detail::bleu_from_stats(stats);
}

// ---- BERTScore with a pluggable embedding source ----

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    // One unit-norm vector per token, fixed dimension.
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) = 0;
};

// Deterministic per-token-string embeddings: a seeded hash drives a gaussian
// draw which is then unit-normalized. Bit-stable across runs and platforms,
// which makes metric plumbing testable; it carries no semantics, so quality
// claims require a real provider behind the same interface.
class HashEmbeddingProvider : public EmbeddingProvider {
public:
    explicit HashEmbeddingProvider(std::uint64_t seed = 0, std::size_t dim = 64)
        : seed_(seed), dim_(dim) {}

    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) override {
        std::vector<std::vector<double>> out;
        out.reserve(tokens.size());
        for (const std::string& t : tokens) {
            std::uint64_t state = seed_ ^ fnv1a(t);
            std::vector<double> v(dim_);
            for (std::size_t i = 0; i < dim_; ++i) {
                double u1 = double(splitmix64(state) >> 11) * 0x1.0p-53;
                const double u2 = double(splitmix64(state) >> 11) * 0x1.0p-53;
                if (u1 <= 0.0) u1 = 0x1.0p-53;
                v[i] = std::sqrt(-2.0 * std::log(u1)) *
                       std::cos(2.0 * 3.14159265358979323846 * u2);
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) {
                v[0] = 1.0;
            } else {
                for (double& x : v) x /= norm;
            }
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::uint64_t seed_;
    std::size_t dim_;
};

// Local vector file: one `token<TAB>v1,...,vd` line per token. Vectors are
// unit-normalized on load; tokens absent from the file fall back to the
// deterministic hash embedding so the provider stays total.
class FileEmbeddingProvider : public EmbeddingProvider {
public:
    explicit FileEmbeddingProvider(std::istream& in, std::uint64_t fallback_seed = 0) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error("vector file line " + std::to_string(line_no) +
                                         ": missing tab separator");
            std::vector<double> v;
            std::size_t pos = tab + 1;
            while (pos <= line.size()) {
                const auto comma = line.find(',', pos);
                const std::string cell =
                    line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                v.push_back(std::stod(cell));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            if (v.empty())
                throw std::runtime_error("vector file line " + std::to_string(line_no) +
                                         ": empty vector");
            if (dim_ == 0) dim_ = v.size();
            if (v.size() != dim_)
                throw std::runtime_error("vector file line " + std::to_string(line_no) +
                                         ": inconsistent dimension");
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0)
                throw std::runtime_error("vector file line " + std::to_string(line_no) +
                                         ": zero vector");
            for (double& x : v) x /= norm;
            vectors_[line.substr(0, tab)] = std::move(v);
        }
        fallback_ = std::make_unique<HashEmbeddingProvider>(fallback_seed,
                                                            dim_ == 0 ? 64 : dim_);
    }

    static FileEmbeddingProvider from_file(const std::string& path,
                                           std::uint64_t fallback_seed = 0) {
        auto in = open_input(path);
        return FileEmbeddingProvider(in, fallback_seed);
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) override {
        std::vector<std::vector<double>> out;
        out.reserve(tokens.size());
        for (const std::string& t : tokens) {
            auto it = vectors_.find(t);
            if (it != vectors_.end()) {
                out.push_back(it->second);
            } else {
                out.push_back(fallback_->embed({t}).front());
            }
        }
        return out;
    }

    std::size_t dimension() const { return dim_; }

private:
    std::map<std::string, std::vector<double>> vectors_;
    std::size_t dim_ = 0;
    std::unique_ptr<HashEmbeddingProvider> fallback_;
};

// HTTP provider contract: POST {"tokens": [...]} -> {"vectors": [[...]]}.
class RemoteEmbeddingProvider : public EmbeddingProvider {
public:
    explicit RemoteEmbeddingProvider(EndpointConfig endpoint) : endpoint_(std::move(endpoint)) {}

    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) override {
        nlohmann::json response = post_json(endpoint_, {{"tokens", tokens}});
        std::vector<std::vector<double>> out;
        for (const auto& vj : response.at("vectors"))
            out.push_back(vj.get<std::vector<double>>());
        if (out.size() != tokens.size())
            throw std::runtime_error("embedding provider returned wrong vector count");
        return out;
    }

private:
    EndpointConfig endpoint_;
};

// Greedy-matching token similarity. Negative cosines are floored at zero so
// all components stay in [0, 1]; no IDF weighting, no baseline rescaling.
inline ScoreTriple bertscore(const TokenStream& candidate, const TokenStream& reference,
                             EmbeddingProvider& provider) {
    if (candidate.empty() || reference.empty())
        throw std::invalid_argument("bertscore: empty token stream");
    const auto cand_vecs = provider.embed(candidate.tokens);
    const auto ref_vecs = provider.embed(reference.tokens);

    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        const std::size_t n = std::min(a.size(), b.size());
        for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
        return s;
    };

    double r_sum = 0.0;
    for (const auto& rv : ref_vecs) {
        double best = 0.0;
        for (const auto& cv : cand_vecs) best = std::max(best, dot(rv, cv));
        r_sum += std::min(1.0, best);
    }
    double p_sum = 0.0;
    for (const auto& cv : cand_vecs) {
        double best = 0.0;
        for (const auto& rv : ref_vecs) best = std::max(best, dot(cv, rv));
        p_sum += std::min(1.0, best);
    }
    return ScoreTriple::from_pr(p_sum / double(cand_vecs.size()),
                                r_sum / double(ref_vecs.size()));
}

// ---- SIM ----

struct SimInput {
    std::vector<Strategy> predicted;
    std::vector<Strategy> gold;
};

// Proportion of positions where predicted and gold strategy agree.
inline double sim(const SimInput& input) {
    if (input.predicted.size() != input.gold.size())
        throw std::invalid_argument("sim: label list length mismatch");
    if (input.predicted.empty()) throw std::invalid_argument("sim: empty label lists");
    std::size_t matches = 0;
    for (std::size_t i = 0; i < input.predicted.size(); ++i)
        if (input.predicted[i] == input.gold[i]) ++matches;
    return double(matches) / double(input.predicted.size());
}

// ---- whole-run evaluation ----

struct PerSampleMetrics {
    std::string sample_id;
    ScoreTriple rouge1, rouge2, rouge_l, bert;
    double sentence_bleu = 0.0;
    Strategy gold_strategy = Strategy::Neutral;
    Strategy predicted_strategy = Strategy::Neutral;
    bool sim_match = false;
    double ppl = std::numeric_limits<double>::quiet_NaN(); // NaN when unscoreable
    std::size_t input_token_length = 0;
};

struct MetricAggregates {
    ScoreTriple rouge1, rouge2, rouge_l, bert;
    double corpus_bleu = 0.0;
    double mean_sentence_bleu = 0.0;
    double sim = 0.0;
    double mean_ppl = 0.0;
    std::size_t ppl_scored = 0;
    std::size_t ppl_skipped = 0;
    std::size_t n_samples = 0;
};

struct MetricSuiteResult {
    std::string system_name;
    std::string language;
    std::vector<PerSampleMetrics> samples;
    MetricAggregates aggregate;
};

struct EvalBundle {
    const ClassifierModel* classifier = nullptr;
    const NgramLm* lm = nullptr;
    EmbeddingProvider* provider = nullptr;
    unsigned jobs = 1;
};

// Runs the full metric suite over aligned (sample, generation) pairs. The SIM
// gold label comes from classifying the gold target, the predicted label from
// classifying the generation. PPL is computed on generations only. Missing
// generations fail the run (fail closed); callers relax alignment via
// genclient::align first if partial runs are wanted.
inline MetricSuiteResult evaluate_run(const std::vector<SftSample>& samples,
                                      const std::vector<GenerationRecord>& generations,
                                      const EvalBundle& bundle) {
    if (!bundle.classifier || !bundle.lm || !bundle.provider)
        throw std::invalid_argument("evaluate_run: incomplete bundle");
    std::map<std::string, const GenerationRecord*> by_id;
    for (const GenerationRecord& g : generations) {
        if (!by_id.emplace(g.sample_id, &g).second)
            throw std::invalid_argument("evaluate_run: duplicate generation for " + g.sample_id);
    }
    std::vector<std::string> unmatched;
    for (const SftSample& s : samples)
        if (!by_id.count(s.sample_id)) unmatched.push_back(s.sample_id);
    if (!unmatched.empty()) {
        std::string what = "evaluate_run: samples without generations:";
        for (const std::string& id : unmatched) what += " " + id;
        throw std::runtime_error(what);
    }

    MetricSuiteResult result;
    result.samples.resize(samples.size());
    if (!generations.empty()) result.system_name = generations.front().system_name;
    if (!samples.empty()) result.language = samples.front().language;

    // canonical processing order: sample_id ascending, so results and the
    // floating-point reduction are identical no matter how inputs arrive
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return samples[x].sample_id < samples[y].sample_id;
    });

    std::vector<std::pair<TokenStream, TokenStream>> token_pairs(samples.size());
    parallel_for(samples.size(), bundle.jobs, [&](std::size_t i) {
        const SftSample& sample = samples[order[i]];
        const GenerationRecord& gen = *by_id.at(sample.sample_id);
        PerSampleMetrics& m = result.samples[i];
        m.sample_id = sample.sample_id;

        const TokenStream target = tokenize(sample.target, sample.language);
        const TokenStream candidate = tokenize(gen.text, sample.language);

        m.rouge1 = rouge_n(candidate, target, 1);
        m.rouge2 = rouge_n(candidate, target, 2);
        m.rouge_l = rouge_l(candidate, target);
        m.sentence_bleu = sentence_bleu(candidate, target);
        if (!candidate.empty() && !target.empty())
            m.bert = bertscore(candidate, target, *bundle.provider);

        m.gold_strategy = classify(*bundle.classifier, sample.target).label;
        m.predicted_strategy = classify(*bundle.classifier, gen.text).label;
        m.sim_match = m.gold_strategy == m.predicted_strategy;

        if (!candidate.empty()) m.ppl = bundle.lm->perplexity(gen.text);

        const RenderedSample rendered = render_chat_template(sample);
        const std::string prefix = rendered.text.substr(0, rendered.target_span.first);
        m.input_token_length = tokenize(prefix, sample.language).size();

        token_pairs[i] = {candidate, target};
    });

    MetricAggregates& agg = result.aggregate;
    agg.n_samples = samples.size();
    detail::BleuStats bleu_stats;
    std::size_t sim_matches = 0;
    double ppl_sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const PerSampleMetrics& m = result.samples[i];
        auto add = [](ScoreTriple& acc, const ScoreTriple& t) {
            acc.precision += t.precision;
            acc.recall += t.recall;
            acc.f1 += t.f1;
        };
        add(agg.rouge1, m.rouge1);
        add(agg.rouge2, m.rouge2);
        add(agg.rouge_l, m.rouge_l);
        add(agg.bert, m.bert);
        agg.mean_sentence_bleu += m.sentence_bleu;
        if (m.sim_match) ++sim_matches;
        if (std::isnan(m.ppl)) {
            ++agg.ppl_skipped;
        } else {
            ppl_sum += m.ppl;
            ++agg.ppl_scored;
        }
        bleu_stats.add(token_pairs[i].first, token_pairs[i].second);
    }
    if (agg.n_samples > 0) {
        const double n = double(agg.n_samples);
        auto scale = [n](ScoreTriple& t) {
            t.precision /= n;
            t.recall /= n;
            t.f1 /= n;
        };
        scale(agg.rouge1);
        scale(agg.rouge2);
        scale(agg.rouge_l);
        scale(agg.bert);
        agg.mean_sentence_bleu /= n;
        agg.sim = double(sim_matches) / n;
        agg.corpus_bleu = detail::bleu_from_stats(bleu_stats);
    }
    if (agg.ppl_scored > 0) agg.mean_ppl = ppl_sum / double(agg.ppl_scored);
    return result;
}

// ---- serialization ----

inline nlohmann::json score_triple_to_json(const ScoreTriple& t) {
    return {{"precision", t.precision}, {"recall", t.recall}, {"f1", t.f1}};
}

inline ScoreTriple score_triple_from_json(const nlohmann::json& j) {
    ScoreTriple t;
    t.precision = j.at("precision").get<double>();
    t.recall = j.at("recall").get<double>();
    t.f1 = j.at("f1").get<double>();
    return t;
}

inline nlohmann::json metric_result_to_json(const MetricSuiteResult& r) {
    nlohmann::json samples = nlohmann::json::array();
    for (const PerSampleMetrics& m : r.samples) {
        samples.push_back(
            {{"sample_id", m.sample_id},
             {"rouge1", score_triple_to_json(m.rouge1)},
             {"rouge2", score_triple_to_json(m.rouge2)},
             {"rougeL", score_triple_to_json(m.rouge_l)},
             {"bertscore", score_triple_to_json(m.bert)},
             {"sentence_bleu", m.sentence_bleu},
             {"gold_strategy", strategy_to_string(m.gold_strategy)},
             {"predicted_strategy", strategy_to_string(m.predicted_strategy)},
             {"sim_match", m.sim_match ? 1 : 0},
             {"ppl", std::isnan(m.ppl) ? nlohmann::json(nullptr) : nlohmann::json(m.ppl)},
             {"input_token_length", m.input_token_length}});
    }
    return {{"system", r.system_name},
            {"language", r.language},
            {"samples", std::move(samples)},
            {"aggregate",
             {{"rouge1", score_triple_to_json(r.aggregate.rouge1)},
              {"rouge2", score_triple_to_json(r.aggregate.rouge2)},
              {"rougeL", score_triple_to_json(r.aggregate.rouge_l)},
              {"bertscore", score_triple_to_json(r.aggregate.bert)},
              {"corpus_bleu", r.aggregate.corpus_bleu},
              {"mean_sentence_bleu", r.aggregate.mean_sentence_bleu},
              {"sim", r.aggregate.sim},
              {"mean_ppl", r.aggregate.mean_ppl},
              {"ppl_scored", r.aggregate.ppl_scored},
              {"ppl_skipped", r.aggregate.ppl_skipped},
              {"n_samples", r.aggregate.n_samples}}}};
}

inline MetricSuiteResult metric_result_from_json(const nlohmann::json& j) {
    MetricSuiteResult r;
    r.system_name = j.at("system").get<std::string>();
    r.language = j.value("language", std::string());
    for (const auto& mj : j.at("samples")) {
        PerSampleMetrics m;
        m.sample_id = mj.at("sample_id").get<std::string>();
        m.rouge1 = score_triple_from_json(mj.at("rouge1"));
        m.rouge2 = score_triple_from_json(mj.at("rouge2"));
        m.rouge_l = score_triple_from_json(mj.at("rougeL"));
        m.bert = score_triple_from_json(mj.at("bertscore"));
        m.sentence_bleu = mj.at("sentence_bleu").get<double>();
        m.gold_strategy = strategy_from_string(mj.at("gold_strategy").get<std::string>());
        m.predicted_strategy = strategy_from_string(mj.at("predicted_strategy").get<std::string>());
        m.sim_match = mj.at("sim_match").get<int>() != 0;
        if (!mj.at("ppl").is_null()) m.ppl = mj.at("ppl").get<double>();
        m.input_token_length = mj.at("input_token_length").get<std::size_t>();
        r.samples.push_back(std::move(m));
    }
    const auto& aj = j.at("aggregate");
    r.aggregate.rouge1 = score_triple_from_json(aj.at("rouge1"));
    r.aggregate.rouge2 = score_triple_from_json(aj.at("rouge2"));
    r.aggregate.rouge_l = score_triple_from_json(aj.at("rougeL"));
    r.aggregate.bert = score_triple_from_json(aj.at("bertscore"));
    r.aggregate.corpus_bleu = aj.at("corpus_bleu").get<double>();
    r.aggregate.mean_sentence_bleu = aj.at("mean_sentence_bleu").get<double>();
    r.aggregate.sim = aj.at("sim").get<double>();
    r.aggregate.mean_ppl = aj.at("mean_ppl").get<double>();
    r.aggregate.ppl_scored = aj.at("ppl_scored").get<std::size_t>();
    r.aggregate.ppl_skipped = aj.at("ppl_skipped").get<std::size_t>();
    r.aggregate.n_samples = aj.at("n_samples").get<std::size_t>();
    return r;
}

} // namespace counseval
