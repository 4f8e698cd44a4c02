#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "counseval/jsonl.hpp"
#include "counseval/text.hpp"

namespace counseval {

enum class SpeakerRole { HelpSeeker, Counselor };

// IMSR is the imminent-danger subset of GSR; anything counting GSR sessions
// must count IMSR too.
enum class RiskLabel { NoRisk, Gsr, Imsr };

inline const char* role_to_string(SpeakerRole r) {
    return r == SpeakerRole::Counselor ? "counselor" : "seeker";
}

inline SpeakerRole role_from_string(const std::string& s) {
    if (s == "seeker") return SpeakerRole::HelpSeeker;
    if (s == "counselor") return SpeakerRole::Counselor;
    throw std::invalid_argument("unknown role: " + s);
}

inline const char* risk_to_string(RiskLabel r) {
    switch (r) {
        case RiskLabel::Gsr: return "gsr";
        case RiskLabel::Imsr: return "imsr";
        default: return "none";
    }
}

inline RiskLabel risk_from_string(const std::string& s) {
    if (s == "none") return RiskLabel::NoRisk;
    if (s == "gsr") return RiskLabel::Gsr;
    if (s == "imsr") return RiskLabel::Imsr;
    throw std::invalid_argument("unknown risk label: " + s);
}

inline bool counts_as_gsr(RiskLabel r) { return r != RiskLabel::NoRisk; }

struct Message {
    int index = 0;
    SpeakerRole role = SpeakerRole::HelpSeeker;
    std::string text;
    std::optional<std::string> timestamp; // provenance only, ignored by metrics
};

struct Session {
    std::string id;
    std::string language;
    std::vector<Message> messages;
    std::optional<int> ved; // 1..5 when present
    RiskLabel risk = RiskLabel::NoRisk;
    std::map<std::string, std::string> metadata; // unknown keys preserved verbatim
};

struct Corpus {
    std::string language;
    std::vector<Session> sessions;
};

struct CorpusStats {
    std::size_t n_sessions = 0;
    std::size_t n_messages = 0;
    double mean_messages_per_session = 0.0;
    double gsr_fraction = 0.0;
    bool empty = false; // set when n_sessions == 0 and the mean is undefined
};

struct CorpusParseError : std::runtime_error {
    CorpusParseError(std::size_t line_no, const std::string& reason)
        : std::runtime_error("line " + std::to_string(line_no) + ": " + reason), line(line_no) {}
    std::size_t line;
};

// Non-throwing invariant check; empty result means the session is valid.
inline std::vector<std::string> validate_session(const Session& session) {
    std::vector<std::string> violations;
    if (session.id.empty()) violations.push_back("empty session id");
    if (session.ved && (*session.ved < 1 || *session.ved > 5))
        violations.push_back("ved out of range");
    for (std::size_t i = 0; i < session.messages.size(); ++i) {
        const Message& m = session.messages[i];
        if (m.index != static_cast<int>(i))
            violations.push_back("non-contiguous index at position " + std::to_string(i));
        if (trim(m.text).empty())
            violations.push_back("empty text at index " + std::to_string(m.index));
    }
    return violations;
}

inline nlohmann::json message_to_json(const Message& m) {
    nlohmann::json j;
    j["index"] = m.index;
    j["role"] = role_to_string(m.role);
    j["text"] = m.text;
    j["ts"] = m.timestamp ? nlohmann::json(*m.timestamp) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json session_to_json(const Session& s) {
    nlohmann::json j;
    j["id"] = s.id;
    j["language"] = s.language;
    j["ved"] = s.ved ? nlohmann::json(*s.ved) : nlohmann::json(nullptr);
    j["risk"] = risk_to_string(s.risk);
    auto msgs = nlohmann::json::array();
    for (const Message& m : s.messages) msgs.push_back(message_to_json(m));
    j["messages"] = std::move(msgs);
    j["metadata"] = s.metadata;
    return j;
}

// Parses one session record; message text is NFC-normalized on ingest.
inline Session session_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("record is not an object");
    for (const char* field : {"id", "risk", "messages"})
        if (!j.contains(field))
            throw std::invalid_argument(std::string("missing \"") + field + "\" field");

    Session s;
    s.id = j.at("id").get<std::string>();
    s.language = j.value("language", std::string());
    if (j.contains("ved") && !j.at("ved").is_null()) s.ved = j.at("ved").get<int>();
    s.risk = risk_from_string(j.at("risk").get<std::string>());
    if (!j.at("messages").is_array()) throw std::invalid_argument("\"messages\" is not an array");
    for (const auto& mj : j.at("messages")) {
        Message m;
        m.index = mj.at("index").get<int>();
        m.role = role_from_string(mj.at("role").get<std::string>());
        m.text = nfc_normalize(mj.at("text").get<std::string>());
        if (mj.contains("ts") && !mj.at("ts").is_null())
            m.timestamp = mj.at("ts").get<std::string>();
        s.messages.push_back(std::move(m));
    }
    if (j.contains("metadata")) {
        for (const auto& [k, v] : j.at("metadata").items())
            s.metadata[k] = v.get<std::string>();
    }
    return s;
}

// One session per line. Rejects malformed records, duplicate ids and invariant
// violations with the offending line number.
inline Corpus parse_corpus(std::istream& in, const std::string& language) {
    Corpus corpus;
    corpus.language = language;
    std::set<std::string> seen_ids;
    for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& rec) {
        Session s;
        try {
            s = session_from_json(rec);
        } catch (const std::exception& e) {
            throw CorpusParseError(line_no, e.what());
        }
        if (!seen_ids.insert(s.id).second)
            throw CorpusParseError(line_no, "duplicate session id \"" + s.id + "\"");
        if (auto violations = validate_session(s); !violations.empty())
            throw CorpusParseError(line_no, violations.front());
        corpus.sessions.push_back(std::move(s));
    });
    return corpus;
}

inline void serialize_corpus(const Corpus& corpus, std::ostream& out) {
    for (const Session& s : corpus.sessions) out << session_to_json(s).dump() << '\n';
}

inline Corpus load_corpus(const std::string& path, const std::string& language) {
    auto in = open_input(path);
    return parse_corpus(in, language);
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    auto out = open_output(path);
    serialize_corpus(corpus, out);
}

inline CorpusStats corpus_stats(const Corpus& corpus) {
    CorpusStats st;
    st.n_sessions = corpus.sessions.size();
    std::size_t gsr = 0;
    for (const Session& s : corpus.sessions) {
        st.n_messages += s.messages.size();
        if (counts_as_gsr(s.risk)) ++gsr;
    }
    if (st.n_sessions == 0) {
        st.empty = true;
    } else {
        st.mean_messages_per_session =
            static_cast<double>(st.n_messages) / static_cast<double>(st.n_sessions);
        st.gsr_fraction = static_cast<double>(gsr) / static_cast<double>(st.n_sessions);
    }
    return st;
}

inline nlohmann::json corpus_stats_to_json(const CorpusStats& st) {
    return {{"n_sessions", st.n_sessions},
            {"n_messages", st.n_messages},
            {"mean_messages_per_session", st.mean_messages_per_session},
            {"gsr_fraction", st.gsr_fraction},
            {"empty", st.empty}};
}

} // namespace counseval
