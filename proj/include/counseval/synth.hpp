#pragma once

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "counseval/corpus.hpp"
#include "counseval/curate.hpp"
#include "counseval/genclient.hpp"
#include "counseval/rng.hpp"
#include "counseval/strategy.hpp"

namespace counseval {

// Token pools for the generator. Pairwise disjoint (validated), which makes
// strategy recovery from text information-theoretically possible and gives
// the Generic persona zero overlap with any strategy lexicon.
struct SynthLexicons {
    std::array<std::vector<std::string>, kNumStrategies> strategy_pools;
    std::vector<std::string> seeker_pool;
    std::vector<std::string> generic_pool;
};

inline SynthLexicons default_lexicons() {
    SynthLexicons lex;
    lex.strategy_pools[static_cast<int>(Strategy::Reflection)] = {
        "hear", "sounds", "feeling", "overwhelmed", "understand", "carrying", "heavy",
        "valid", "listening", "present", "acknowledge", "pain", "holding", "difficult"};
    lex.strategy_pools[static_cast<int>(Strategy::Prompting)] = {
        "what", "when", "happened", "tell", "share", "more", "wonder", "curious",
        "today", "changed", "moment", "start", "else", "how"};
    lex.strategy_pools[static_cast<int>(Strategy::Suggestion)] = {
        "maybe", "try", "could", "perhaps", "small", "step", "breathing", "gentle",
        "plan", "tonight", "safer", "together", "idea", "practice"};
    lex.strategy_pools[static_cast<int>(Strategy::Neutral)] = {
        "okay", "thanks", "here", "alright", "sure", "yes", "welcome", "hello",
        "noted", "right", "take", "time"};
    lex.seeker_pool = {"alone",  "cant",   "sleep", "dark",  "tired",     "scared", "nobody",
                       "hurt",   "lost",   "empty", "afraid", "worthless", "crying", "night",
                       "heavier", "nothing"};
    lex.generic_pool = {"everything", "will",     "fine",      "worry",    "positive",
                        "consult",    "professional", "recommend", "services", "resources",
                        "wellness",   "guidance", "advise",    "contact",  "specialist"};
    return lex;
}

struct SynthConfig {
    std::size_t n_sessions = 100;
    std::uint64_t seed = 0;
    std::string language = "xx";
    std::array<double, kNumStrategies> strategy_mix = {0.3, 0.3, 0.2, 0.2};
    int min_session_length = 8;
    int max_session_length = 24;
    double gsr_fraction = 0.17; // includes IMSR
    double imsr_fraction = 0.04;
    SynthLexicons lexicons = default_lexicons();

    void validate() const {
        double mix_sum = 0.0;
        for (double m : strategy_mix) {
            if (m < 0) throw std::invalid_argument("synth: negative strategy mix entry");
            mix_sum += m;
        }
        if (std::fabs(mix_sum - 1.0) > 1e-9)
            throw std::invalid_argument("synth: strategy mix must sum to 1");
        if (min_session_length < 2)
            throw std::invalid_argument("synth: minimum session length must be >= 2");
        if (max_session_length < min_session_length)
            throw std::invalid_argument("synth: empty session length range");
        if (imsr_fraction > gsr_fraction)
            throw std::invalid_argument("synth: imsr fraction exceeds gsr fraction");

        std::set<std::string> seen;
        auto check_pool = [&](const std::vector<std::string>& pool, const char* name) {
            if (pool.empty())
                throw std::invalid_argument(std::string("synth: empty lexicon pool ") + name);
            for (const std::string& w : pool)
                if (!seen.insert(w).second)
                    throw std::invalid_argument("synth: lexicon pools not disjoint, token \"" + w +
                                                "\" repeats");
        };
        for (int c = 0; c < kNumStrategies; ++c)
            check_pool(lexicons.strategy_pools[c], strategy_to_string(static_cast<Strategy>(c)));
        check_pool(lexicons.seeker_pool, "seeker");
        check_pool(lexicons.generic_pool, "generic");
    }
};

struct GoldLabel {
    std::string session_id;
    int message_index = 0;
    Strategy label = Strategy::Neutral;
};

struct SynthCorpus {
    Corpus corpus;
    std::vector<GoldLabel> gold; // one per counselor message
};

// The two response personas the end-to-end harness contrasts: Aligned reuses
// the gold target's strategy lexicon (and shares at least one token with the
// target), Generic draws only from the strategy-agnostic generic pool.
enum class Persona { Aligned, Generic };

inline const char* persona_to_string(Persona p) {
    return p == Persona::Aligned ? "aligned" : "generic";
}

inline Persona persona_from_string(const std::string& s) {
    if (s == "aligned") return Persona::Aligned;
    if (s == "generic") return Persona::Generic;
    throw std::invalid_argument("unknown persona: " + s);
}

namespace detail {

inline std::string sample_message(DetRng& rng, const std::vector<std::string>& pool,
                                  bool question_mark) {
    const std::size_t k = 3 + rng.bounded(5);
    std::string text;
    for (std::size_t i = 0; i < k; ++i) {
        if (i) text += ' ';
        text += pool[rng.bounded(pool.size())];
    }
    if (question_mark) text += '?';
    return text;
}

inline Strategy draw_strategy(DetRng& rng, const std::array<double, kNumStrategies>& mix) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int c = 0; c < kNumStrategies; ++c) {
        acc += mix[c];
        if (u < acc) return static_cast<Strategy>(c);
    }
    return Strategy::Neutral;
}

} // namespace detail

// Deterministic given the seed: sessions derive independent streams from the
// root seed, so output does not depend on generation order. Counselor runs
// pick one strategy per run and draw every message from that pool, so the
// gold label of a merged intervention is unambiguous.
inline SynthCorpus generate_corpus(const SynthConfig& config) {
    config.validate();
    SynthCorpus out;
    out.corpus.language = config.language;
    const DetRng root(config.seed);

    for (std::size_t idx = 0; idx < config.n_sessions; ++idx) {
        DetRng rng = root.derive(idx);
        Session session;
        char id[32];
        std::snprintf(id, sizeof(id), "synth-%06zu", idx);
        session.id = id;
        session.language = config.language;
        session.metadata["generator"] = "synth";
        session.ved = 4 + static_cast<int>(rng.bounded(2));
        const double risk_draw = rng.uniform();
        session.risk = risk_draw < config.imsr_fraction  ? RiskLabel::Imsr
                       : risk_draw < config.gsr_fraction ? RiskLabel::Gsr
                                                         : RiskLabel::NoRisk;

        const int target_len =
            config.min_session_length +
            static_cast<int>(rng.bounded(
                static_cast<std::uint64_t>(config.max_session_length -
                                           config.min_session_length + 1)));
        int index = 0;
        bool counselor_turn = false;
        while (index < target_len) {
            const int run_len = rng.bounded(4) == 0 ? 2 : 1; // occasional bursts
            if (counselor_turn) {
                const Strategy strategy = detail::draw_strategy(rng, config.strategy_mix);
                const auto& pool = config.lexicons.strategy_pools[static_cast<int>(strategy)];
                for (int r = 0; r < run_len && index < target_len; ++r) {
                    Message m;
                    m.index = index++;
                    m.role = SpeakerRole::Counselor;
                    m.text = detail::sample_message(rng, pool, strategy == Strategy::Prompting);
                    session.messages.push_back(std::move(m));
                    out.gold.push_back({session.id, index - 1, strategy});
                }
            } else {
                for (int r = 0; r < run_len && index < target_len; ++r) {
                    Message m;
                    m.index = index++;
                    m.role = SpeakerRole::HelpSeeker;
                    m.text = detail::sample_message(rng, config.lexicons.seeker_pool, false);
                    session.messages.push_back(std::move(m));
                }
            }
            counselor_turn = !counselor_turn;
        }
        // very short length draws can exhaust the budget on seeker turns
        bool has_counselor = false;
        for (const Message& m : session.messages)
            if (m.role == SpeakerRole::Counselor) has_counselor = true;
        if (!has_counselor) {
            const Strategy strategy = detail::draw_strategy(rng, config.strategy_mix);
            Message m;
            m.index = index;
            m.role = SpeakerRole::Counselor;
            m.text = detail::sample_message(
                rng, config.lexicons.strategy_pools[static_cast<int>(strategy)],
                strategy == Strategy::Prompting);
            session.messages.push_back(std::move(m));
            out.gold.push_back({session.id, index, strategy});
        }
        out.corpus.sessions.push_back(std::move(session));
    }
    return out;
}

// Recovers the generating pool of a synth target from token membership
// (possible because pools are disjoint).
inline Strategy infer_pool_strategy(const std::string& target, const SynthLexicons& lexicons) {
    std::array<std::size_t, kNumStrategies> votes{};
    std::map<std::string, int> membership;
    for (int c = 0; c < kNumStrategies; ++c)
        for (const std::string& w : lexicons.strategy_pools[c]) membership[w] = c;
    for (const std::string& t : word_tokens(target)) {
        auto it = membership.find(t);
        if (it != membership.end()) ++votes[it->second];
    }
    int best = static_cast<int>(Strategy::Neutral);
    std::size_t best_votes = 0;
    for (int c = 0; c < kNumStrategies; ++c) {
        if (votes[c] > best_votes) {
            best = c;
            best_votes = votes[c];
        }
    }
    return static_cast<Strategy>(best);
}

// Aligned responses draw from the gold target's pool and always include at
// least one token of the target itself; Generic responses use the generic
// pool only.
inline std::vector<GenerationRecord> generate_responses(Persona persona,
                                                        const std::vector<SftSample>& samples,
                                                        std::uint64_t seed,
                                                        const SynthLexicons& lexicons =
                                                            default_lexicons()) {
    std::vector<GenerationRecord> records;
    records.reserve(samples.size());
    const DetRng root(seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        DetRng rng = root.derive(i);
        const SftSample& sample = samples[i];
        GenerationRecord record;
        record.sample_id = sample.sample_id;
        record.system_name = persona_to_string(persona);
        if (persona == Persona::Generic) {
            record.text = detail::sample_message(rng, lexicons.generic_pool, false);
        } else {
            const Strategy strategy = infer_pool_strategy(sample.target, lexicons);
            const auto& pool = lexicons.strategy_pools[static_cast<int>(strategy)];
            std::string text =
                detail::sample_message(rng, pool, strategy == Strategy::Prompting);
            // force >= 1 shared token with the target
            std::vector<std::string> target_pool_tokens;
            const std::set<std::string> pool_set(pool.begin(), pool.end());
            for (const std::string& t : word_tokens(sample.target))
                if (pool_set.count(t)) target_pool_tokens.push_back(t);
            if (!target_pool_tokens.empty()) {
                const std::string& shared =
                    target_pool_tokens[rng.bounded(target_pool_tokens.size())];
                text += ' ';
                text += shared;
            }
            record.text = std::move(text);
        }
        records.push_back(std::move(record));
    }
    return records;
}

// ---- gold sidecar JSONL ({"session_id", "message_index", "label"}) ----

inline void save_gold_labels(const std::vector<GoldLabel>& gold, std::ostream& out) {
    for (const GoldLabel& g : gold) {
        nlohmann::json j = {{"session_id", g.session_id},
                            {"message_index", g.message_index},
                            {"label", strategy_to_string(g.label)}};
        out << j.dump() << '\n';
    }
}

inline std::vector<GoldLabel> load_gold_labels(std::istream& in) {
    std::vector<GoldLabel> out;
    for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& rec) {
        try {
            out.push_back({rec.at("session_id").get<std::string>(),
                           rec.at("message_index").get<int>(),
                           strategy_from_string(rec.at("label").get<std::string>())});
        } catch (const std::exception& e) {
            throw JsonlError(line_no, e.what());
        }
    });
    return out;
}

// Labeled counselor utterances for classifier training, joined from a synth
// corpus and its gold sidecar.
inline std::vector<LabeledUtterance> labeled_counselor_utterances(
    const Corpus& corpus, const std::vector<GoldLabel>& gold) {
    std::map<std::pair<std::string, int>, Strategy> by_key;
    for (const GoldLabel& g : gold) by_key[{g.session_id, g.message_index}] = g.label;
    std::vector<LabeledUtterance> out;
    for (const Session& s : corpus.sessions)
        for (const Message& m : s.messages) {
            if (m.role != SpeakerRole::Counselor) continue;
            auto it = by_key.find({s.id, m.index});
            if (it == by_key.end()) continue;
            out.push_back({m.text, it->second, LabelSource::Gold});
        }
    return out;
}

} // namespace counseval
