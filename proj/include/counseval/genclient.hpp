#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "counseval/curate.hpp"
#include "counseval/http.hpp"
#include "counseval/jsonl.hpp"
#include "counseval/parallel.hpp"

namespace counseval {

// One model-produced candidate response, aligned to a sample id.
struct GenerationRecord {
    std::string sample_id;
    std::string text;
    std::string system_name;
    std::optional<double> latency_ms;
};

struct SystemPrompt {
    std::string language;
    std::string text;
};

// Default prompt used when no per-language override is configured.
inline constexpr const char* kDefaultSystemPrompt =
    "You are an empathetic and compassionate emotional support assistant, providing emotional "
    "assistance through text conversations to people seeking help. Your role is to actively "
    "listen, validate their feelings, and offer emotional support. Gently encourage, ask "
    "open-ended questions, and guide help-seekers toward positive coping strategies. Avoid "
    "making clinical diagnoses or giving medical treatment recommendations. If a help-seeker "
    "states that they are in immediate distress or mentions self-harm, gently suggest contacting "
    "a mental health professional or reaching out to emergency services. Always maintain a safe "
    "and non-judgmental space where help-seekers can share openly.";

inline SystemPrompt default_system_prompt(const std::string& language) {
    return {language, kDefaultSystemPrompt};
}

// ---- generation JSONL ({"sample_id", "system", "text", "latency_ms"}) ----

inline std::vector<GenerationRecord> load_generations(std::istream& in) {
    std::vector<GenerationRecord> records;
    std::set<std::string> seen;
    for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& rec) {
        try {
            GenerationRecord r;
            r.sample_id = rec.at("sample_id").get<std::string>();
            r.text = rec.at("text").get<std::string>();
            r.system_name = rec.value("system", std::string());
            if (rec.contains("latency_ms") && !rec.at("latency_ms").is_null())
                r.latency_ms = rec.at("latency_ms").get<double>();
            if (!seen.insert(r.sample_id).second)
                throw std::invalid_argument("duplicate sample_id " + r.sample_id);
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw JsonlError(line_no, e.what());
        }
    });
    return records;
}

inline std::vector<GenerationRecord> load_generations_file(const std::string& path) {
    auto in = open_input(path);
    return load_generations(in);
}

inline void save_generations(const std::vector<GenerationRecord>& records, std::ostream& out) {
    for (const GenerationRecord& r : records) {
        nlohmann::json j = {{"sample_id", r.sample_id},
                            {"system", r.system_name},
                            {"text", r.text},
                            {"latency_ms", r.latency_ms ? nlohmann::json(*r.latency_ms)
                                                        : nlohmann::json(nullptr)}};
        out << j.dump() << '\n';
    }
}

inline void save_generations_file(const std::vector<GenerationRecord>& records,
                                  const std::string& path) {
    auto out = open_output(path);
    save_generations(records, out);
}

// ---- alignment ----

struct AlignedPairs {
    std::vector<SftSample> samples;
    std::vector<GenerationRecord> records; // records[i] pairs with samples[i]
    std::vector<std::string> missing_ids;  // samples without a generation
    std::vector<std::string> extra_ids;    // generations without a sample
};

// Inner-join on sample_id. Samples without a generation fail the run unless
// allow_partial; extra generations are only reported, never fatal.
inline AlignedPairs align(const std::vector<SftSample>& samples,
                          const std::vector<GenerationRecord>& records,
                          bool allow_partial = false) {
    std::map<std::string, const GenerationRecord*> by_id;
    for (const GenerationRecord& r : records) by_id[r.sample_id] = &r;

    AlignedPairs out;
    std::set<std::string> used;
    for (const SftSample& s : samples) {
        auto it = by_id.find(s.sample_id);
        if (it == by_id.end()) {
            out.missing_ids.push_back(s.sample_id);
            continue;
        }
        used.insert(s.sample_id);
        out.samples.push_back(s);
        out.records.push_back(*it->second);
    }
    for (const GenerationRecord& r : records)
        if (!used.count(r.sample_id)) out.extra_ids.push_back(r.sample_id);

    if (!out.missing_ids.empty() && !allow_partial) {
        std::string what = "samples without generations:";
        for (const std::string& id : out.missing_ids) what += " " + id;
        throw std::runtime_error(what);
    }
    return out;
}

// ---- remote chat-completion generation ----

// Request body for one sample; a pure function of (sample, prompt, model).
inline nlohmann::json chat_request_body(const SftSample& sample, const SystemPrompt& prompt,
                                        const std::string& model_name) {
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "system"}, {"content", prompt.text}});
    for (const HistoryTurn& turn : sample.history)
        messages.push_back({{"role", turn.role == SpeakerRole::Counselor ? "assistant" : "user"},
                            {"content", turn.text}});
    return {{"model", model_name}, {"messages", messages}};
}

struct GenerateResult {
    std::vector<GenerationRecord> records; // sample order, failed samples omitted
    std::vector<std::string> failed_ids;
};

// One chat-completion call per sample with bounded parallelism; per-request
// retry/backoff lives in post_json. Output order always equals input order.
inline GenerateResult generate_remote(const std::vector<SftSample>& samples,
                                      const EndpointConfig& endpoint, const SystemPrompt& prompt,
                                      bool allow_partial = false) {
    endpoint.validate();
    std::vector<std::optional<GenerationRecord>> slots(samples.size());
    std::vector<std::string> errors(samples.size());

    parallel_for(samples.size(), static_cast<unsigned>(endpoint.max_parallel), [&](std::size_t i) {
        const auto start = std::chrono::steady_clock::now();
        try {
            nlohmann::json response =
                post_json(endpoint, chat_request_body(samples[i], prompt, endpoint.model_name));
            GenerationRecord r;
            r.sample_id = samples[i].sample_id;
            r.text = response.at("text").get<std::string>();
            r.system_name = endpoint.model_name;
            r.latency_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - start)
                               .count();
            slots[i] = std::move(r);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    GenerateResult result;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (slots[i]) {
            result.records.push_back(std::move(*slots[i]));
        } else {
            result.failed_ids.push_back(samples[i].sample_id);
        }
    }
    if (!result.failed_ids.empty() && !allow_partial) {
        std::string what = "generation failed for:";
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (!errors[i].empty())
                what += " " + samples[i].sample_id + " (" + errors[i] + ")";
        throw std::runtime_error(what);
    }
    return result;
}

} // namespace counseval
