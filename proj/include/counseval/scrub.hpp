#pragma once

#include <algorithm>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "counseval/corpus.hpp"
#include "counseval/http.hpp"
#include "counseval/text.hpp"

namespace counseval {

// Closed set of replacement tokens. Rules may only emit these, and no rule
// pattern may match any of them (validated), which makes scrubbing idempotent.
inline const std::vector<std::string>& replacement_tokens() {
    static const std::vector<std::string> tokens = {"[NAME]", "[PHONE]", "[ID]",  "[EMAIL]",
                                                    "[URL]",  "[LOC]",   "[ORG]", "[META]"};
    return tokens;
}

struct ScrubRule {
    std::string name;
    std::string pattern;
    std::string replacement;
    std::regex re;
};

inline ScrubRule make_rule(std::string name, std::string pattern, std::string replacement,
                           bool icase = false) {
    auto flags = std::regex::ECMAScript | std::regex::optimize;
    if (icase) flags |= std::regex::icase;
    ScrubRule rule;
    rule.name = std::move(name);
    rule.pattern = std::move(pattern);
    rule.replacement = std::move(replacement);
    try {
        rule.re = std::regex(rule.pattern, flags);
    } catch (const std::regex_error& e) {
        throw std::invalid_argument("rule \"" + rule.name + "\": invalid pattern: " + e.what());
    }
    return rule;
}

// Tier-1 span as produced by an external NER provider. Offsets are Unicode
// codepoint positions into the message text.
struct NerSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::string kind;
};

struct ScrubReport {
    std::map<std::string, std::size_t> rule_counts;
    std::map<std::string, std::size_t> ner_counts;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [_, c] : rule_counts) n += c;
        for (const auto& [_, c] : ner_counts) n += c;
        return n;
    }

    void merge(const ScrubReport& other) {
        for (const auto& [k, c] : other.rule_counts) rule_counts[k] += c;
        for (const auto& [k, c] : other.ner_counts) ner_counts[k] += c;
    }
};

inline std::string ner_kind_to_token(const std::string& kind) {
    std::string k = fold_case(kind);
    if (k == "per" || k == "pers" || k == "person" || k == "name") return "[NAME]";
    if (k == "loc" || k == "gpe" || k == "location" || k == "address") return "[LOC]";
    if (k == "org" || k == "organization" || k == "organisation") return "[ORG]";
    if (k == "phone") return "[PHONE]";
    if (k == "email") return "[EMAIL]";
    if (k == "url") return "[URL]";
    if (k == "id") return "[ID]";
    return "[META]";
}

// Checks names are unique and that no pattern can hit a replacement token.
inline void validate_rules(const std::vector<ScrubRule>& rules) {
    std::set<std::string> names;
    for (const ScrubRule& rule : rules) {
        if (!names.insert(rule.name).second)
            throw std::invalid_argument("duplicate rule name: " + rule.name);
        for (const std::string& token : replacement_tokens()) {
            if (std::regex_search(token, rule.re))
                throw std::invalid_argument("rule \"" + rule.name +
                                            "\" matches replacement token " + token);
        }
    }
}

// Sorts, merges same-kind overlaps, and rejects cross-kind overlaps and
// out-of-range spans. text_cp_len is the codepoint length of the target text.
inline std::vector<NerSpan> normalize_spans(std::vector<NerSpan> spans, std::size_t text_cp_len) {
    for (const NerSpan& s : spans) {
        if (s.start >= s.end)
            throw std::invalid_argument("NER span with start >= end");
        if (s.end > text_cp_len)
            throw std::invalid_argument("NER span end " + std::to_string(s.end) +
                                        " beyond text length " + std::to_string(text_cp_len));
    }
    std::sort(spans.begin(), spans.end(), [](const NerSpan& a, const NerSpan& b) {
        return a.start != b.start ? a.start < b.start : a.end < b.end;
    });
    std::vector<NerSpan> merged;
    for (const NerSpan& s : spans) {
        if (!merged.empty() && s.start < merged.back().end) {
            if (ner_kind_to_token(s.kind) != ner_kind_to_token(merged.back().kind))
                throw std::invalid_argument("overlapping NER spans of different kinds");
            merged.back().end = std::max(merged.back().end, s.end);
        } else {
            merged.push_back(s);
        }
    }
    return merged;
}

// Replaces each span with its kind's token, resolving offsets right-to-left so
// earlier offsets stay valid while the string shrinks or grows.
inline std::string apply_ner_spans(const std::string& text, const std::vector<NerSpan>& spans,
                                   ScrubReport* report = nullptr) {
    const auto cps = utf8_decode(text);
    const auto normalized = normalize_spans(spans, cps.size());
    std::string out = text;
    for (auto it = normalized.rbegin(); it != normalized.rend(); ++it) {
        const std::size_t byte_start = cps[it->start].offset;
        const std::size_t byte_end =
            it->end == cps.size() ? text.size() : cps[it->end].offset;
        const std::string token = ner_kind_to_token(it->kind);
        out.replace(byte_start, byte_end - byte_start, token);
        if (report) ++report->ner_counts[token];
    }
    return out;
}

// Tier-2 pass: applies every rule in order, counting each substitution.
inline std::pair<std::string, ScrubReport> scrub_text(const std::string& text,
                                                      const std::vector<ScrubRule>& rules) {
    std::string current = text;
    ScrubReport report;
    for (const ScrubRule& rule : rules) {
        std::string next;
        next.reserve(current.size());
        auto begin = std::sregex_iterator(current.begin(), current.end(), rule.re);
        auto end = std::sregex_iterator();
        std::size_t last = 0;
        std::size_t count = 0;
        for (auto it = begin; it != end; ++it) {
            next.append(current, last, static_cast<std::size_t>(it->position()) - last);
            next.append(rule.replacement);
            last = static_cast<std::size_t>(it->position() + it->length());
            ++count;
        }
        next.append(current, last, current.size() - last);
        report.rule_counts[rule.name] += count;
        current = std::move(next);
    }
    return {current, report};
}

// Base pattern set: email, URL, service metadata markers, international phone
// numbers, standalone digit runs of length >= 7. Language tags add local
// phone formats on top; an unknown tag falls back to the base set and reports
// a warning through the out-parameter.
inline std::vector<ScrubRule> default_rules(const std::string& language,
                                            std::string* warning = nullptr) {
    std::vector<ScrubRule> rules;
    rules.push_back(make_rule("email", R"([A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,})",
                              "[EMAIL]"));
    rules.push_back(make_rule("url", R"((https?://|www\.)[^\s]+)", "[URL]"));
    rules.push_back(make_rule(
        "service_meta", R"((session|chat|ticket|ref)[ _\-]?(id|no|num)?\s*[:#]\s*[A-Za-z0-9\-]+)",
        "[META]", /*icase=*/true));
    rules.push_back(make_rule(
        "phone_intl", R"(\+\d{1,3}[-. ]?(\(\d{1,4}\)[-. ]?)?\d{1,4}([-. ]?\d{2,4}){1,3})",
        "[PHONE]"));
    if (language == "he" || language == "ar") {
        // Local formats: 0X/0XX prefix followed by seven digits.
        rules.push_back(
            make_rule("phone_local", R"(\b0\d{1,2}[-. ]?\d{3}[-. ]?\d{4}\b)", "[PHONE]"));
    } else if (language != "en" && !language.empty() && warning) {
        *warning = "unknown language tag \"" + language + "\": using base rule set";
    }
    rules.push_back(make_rule("digit_run", R"(\d{7,})", "[ID]"));
    validate_rules(rules);
    return rules;
}

// ---- corpus-level helpers ----

using NerSpanIndex = std::map<std::pair<std::string, int>, std::vector<NerSpan>>;

// Sidecar schema: {"session_id", "message_index", "start", "end", "kind"}.
inline NerSpanIndex load_ner_spans(std::istream& in) {
    NerSpanIndex index;
    for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& rec) {
        try {
            NerSpan span;
            span.start = rec.at("start").get<std::size_t>();
            span.end = rec.at("end").get<std::size_t>();
            span.kind = rec.at("kind").get<std::string>();
            index[{rec.at("session_id").get<std::string>(),
                   rec.at("message_index").get<int>()}]
                .push_back(span);
        } catch (const std::exception& e) {
            throw JsonlError(line_no, e.what());
        }
    });
    return index;
}

// Optional HTTP span provider: POST {"text": ...} -> {"spans": [...]}.
inline std::vector<NerSpan> fetch_ner_spans(const EndpointConfig& endpoint,
                                            const std::string& text) {
    nlohmann::json response = post_json(endpoint, {{"text", text}});
    std::vector<NerSpan> spans;
    for (const auto& sj : response.at("spans")) {
        NerSpan span;
        span.start = sj.at("start").get<std::size_t>();
        span.end = sj.at("end").get<std::size_t>();
        span.kind = sj.at("kind").get<std::string>();
        spans.push_back(std::move(span));
    }
    return spans;
}

// Two-tier pass over a whole corpus: NER spans first, pattern rules second.
inline std::pair<Corpus, ScrubReport> scrub_corpus(const Corpus& corpus,
                                                   const std::vector<ScrubRule>& rules,
                                                   const NerSpanIndex& spans = {}) {
    Corpus out = corpus;
    ScrubReport report;
    for (Session& session : out.sessions) {
        for (Message& message : session.messages) {
            if (auto it = spans.find({session.id, message.index}); it != spans.end())
                message.text = apply_ner_spans(message.text, it->second, &report);
            auto [scrubbed, r] = scrub_text(message.text, rules);
            message.text = std::move(scrubbed);
            report.merge(r);
        }
    }
    return {std::move(out), report};
}

inline nlohmann::json scrub_report_to_json(const ScrubReport& report) {
    return {{"rule_counts", report.rule_counts},
            {"ner_counts", report.ner_counts},
            {"total", report.total()}};
}

} // namespace counseval
