#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "counseval/corpus.hpp"
#include "counseval/rng.hpp"

namespace counseval {

struct CurationConfig {
    int min_ved = 4;
    std::size_t train_sessions = 0;
    std::size_t eval_sessions = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (min_ved < 1 || min_ved > 5)
            throw std::invalid_argument("min_ved must be in 1..5");
    }
};

struct HistoryTurn {
    SpeakerRole role = SpeakerRole::HelpSeeker;
    std::string text;
};

// One training unit: the full dialogue history before a counselor
// intervention, plus that intervention as the target. An intervention is a
// maximal run of consecutive counselor messages merged with newlines;
// turn_index is the message index where the run starts.
struct SftSample {
    std::string sample_id;
    std::string session_id;
    int turn_index = 0;
    std::string system_prompt;
    std::vector<HistoryTurn> history;
    std::string target;
    std::string language;
};

// Deterministic flat rendering of a sample. target_span holds byte offsets
// into text such that text.substr(start, end - start) == target; this is the
// unmasked supervision region, everything before it is the fixed prefix.
struct RenderedSample {
    std::string text;
    std::pair<std::size_t, std::size_t> target_span;
};

// Keeps sessions whose VED is present and >= min_ved; unscored sessions are
// dropped rather than imputed.
inline Corpus filter_by_ved(const Corpus& corpus, int min_ved) {
    Corpus out;
    out.language = corpus.language;
    for (const Session& s : corpus.sessions)
        if (s.ved && *s.ved >= min_ved) out.sessions.push_back(s);
    return out;
}

// Disjoint train/eval split, deterministic given the seed: session ids are
// sorted, shuffled by the seeded RNG, and the first train+eval taken. The
// result does not depend on input ordering.
inline std::pair<Corpus, Corpus> split(const Corpus& corpus, const CurationConfig& config) {
    config.validate();
    const std::size_t need = config.train_sessions + config.eval_sessions;
    if (need > corpus.sessions.size())
        throw std::invalid_argument("requested " + std::to_string(need) + " sessions but only " +
                                    std::to_string(corpus.sessions.size()) + " available");

    std::vector<std::size_t> order(corpus.sessions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return corpus.sessions[a].id < corpus.sessions[b].id;
    });
    DetRng rng(config.seed);
    rng.shuffle(order);

    Corpus train, eval;
    train.language = corpus.language;
    eval.language = corpus.language;
    for (std::size_t i = 0; i < config.train_sessions; ++i)
        train.sessions.push_back(corpus.sessions[order[i]]);
    for (std::size_t i = 0; i < config.eval_sessions; ++i)
        eval.sessions.push_back(corpus.sessions[order[config.train_sessions + i]]);
    return {std::move(train), std::move(eval)};
}

// One sample per counselor intervention. History carries every message
// strictly before the run, unmerged and in order; earlier interventions thus
// appear verbatim as history turns.
inline std::vector<SftSample> expand_full_history(const Session& session,
                                                  const std::string& system_prompt) {
    std::vector<SftSample> samples;
    const auto& msgs = session.messages;
    std::size_t i = 0;
    while (i < msgs.size()) {
        if (msgs[i].role != SpeakerRole::Counselor) {
            ++i;
            continue;
        }
        std::size_t run_end = i;
        while (run_end < msgs.size() && msgs[run_end].role == SpeakerRole::Counselor) ++run_end;

        SftSample sample;
        sample.session_id = session.id;
        sample.turn_index = msgs[i].index;
        sample.sample_id = session.id + "#" + std::to_string(sample.turn_index);
        sample.system_prompt = system_prompt;
        sample.language = session.language;
        for (std::size_t h = 0; h < i; ++h)
            sample.history.push_back({msgs[h].role, msgs[h].text});
        std::string target;
        for (std::size_t t = i; t < run_end; ++t) {
            if (t > i) target += '\n';
            target += msgs[t].text;
        }
        sample.target = std::move(target);
        samples.push_back(std::move(sample));
        i = run_end;
    }
    return samples;
}

// Expands every session; output ordered by (session_id, turn_index).
inline std::vector<SftSample> expand_corpus(const Corpus& corpus,
                                            const std::string& system_prompt) {
    std::vector<const Session*> ordered;
    ordered.reserve(corpus.sessions.size());
    for (const Session& s : corpus.sessions) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(),
              [](const Session* a, const Session* b) { return a->id < b->id; });
    std::vector<SftSample> all;
    for (const Session* s : ordered) {
        auto samples = expand_full_history(*s, system_prompt);
        all.insert(all.end(), std::make_move_iterator(samples.begin()),
                   std::make_move_iterator(samples.end()));
    }
    return all;
}

inline RenderedSample render_chat_template(const SftSample& sample) {
    RenderedSample rendered;
    std::string& text = rendered.text;
    text = "system: " + sample.system_prompt + "\n";
    for (const HistoryTurn& turn : sample.history)
        text += std::string(role_to_string(turn.role)) + ": " + turn.text + "\n";
    text += "counselor: ";
    rendered.target_span = {text.size(), text.size() + sample.target.size()};
    text += sample.target;
    return rendered;
}

// ---- SFT JSONL export ----

// Header metadata carried as the file's first record under "_meta". The LoRA
// settings are recorded for downstream trainers; no training happens here.
struct SftMeta {
    int min_ved = 4;
    std::uint64_t seed = 0;
    int lora_r = 8;
    int lora_alpha = 8;
};

inline nlohmann::json sft_sample_to_json(const SftSample& s) {
    auto history = nlohmann::json::array();
    for (const HistoryTurn& t : s.history)
        history.push_back({{"role", role_to_string(t.role)}, {"text", t.text}});
    return {{"sample_id", s.sample_id}, {"session_id", s.session_id},
            {"turn_index", s.turn_index}, {"language", s.language},
            {"system", s.system_prompt}, {"history", std::move(history)},
            {"target", s.target}};
}

inline SftSample sft_sample_from_json(const nlohmann::json& j) {
    SftSample s;
    s.sample_id = j.at("sample_id").get<std::string>();
    s.session_id = j.at("session_id").get<std::string>();
    s.turn_index = j.at("turn_index").get<int>();
    s.language = j.at("language").get<std::string>();
    s.system_prompt = j.at("system").get<std::string>();
    for (const auto& tj : j.at("history"))
        s.history.push_back(
            {role_from_string(tj.at("role").get<std::string>()), tj.at("text").get<std::string>()});
    s.target = j.at("target").get<std::string>();
    return s;
}

inline std::size_t export_sft(const std::vector<SftSample>& samples, std::ostream& out,
                              const SftMeta& meta) {
    nlohmann::json header = {{"_meta",
                              {{"min_ved", meta.min_ved},
                               {"seed", meta.seed},
                               {"lora_r", meta.lora_r},
                               {"lora_alpha", meta.lora_alpha}}}};
    out << header.dump() << '\n';
    for (const SftSample& s : samples) out << sft_sample_to_json(s).dump() << '\n';
    if (!out) throw std::runtime_error("SFT export: write failure");
    return samples.size();
}

inline std::size_t export_sft_file(const std::vector<SftSample>& samples, const std::string& path,
                                   const SftMeta& meta) {
    auto out = open_output(path);
    return export_sft(samples, out, meta);
}

inline std::pair<SftMeta, std::vector<SftSample>> load_sft(std::istream& in) {
    SftMeta meta;
    std::vector<SftSample> samples;
    std::set<std::string> seen;
    bool meta_seen = false;
    for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& rec) {
        try {
            if (rec.contains("_meta")) {
                const auto& m = rec.at("_meta");
                meta.min_ved = m.value("min_ved", meta.min_ved);
                meta.seed = m.value("seed", meta.seed);
                meta.lora_r = m.value("lora_r", meta.lora_r);
                meta.lora_alpha = m.value("lora_alpha", meta.lora_alpha);
                meta_seen = true;
                return;
            }
            SftSample s = sft_sample_from_json(rec);
            if (!seen.insert(s.sample_id).second)
                throw std::invalid_argument("duplicate sample_id " + s.sample_id);
            samples.push_back(std::move(s));
        } catch (const JsonlError&) {
            throw;
        } catch (const std::exception& e) {
            throw JsonlError(line_no, e.what());
        }
    });
    (void)meta_seen;
    return {meta, std::move(samples)};
}

inline std::pair<SftMeta, std::vector<SftSample>> load_sft_file(const std::string& path) {
    auto in = open_input(path);
    return load_sft(in);
}

} // namespace counseval
