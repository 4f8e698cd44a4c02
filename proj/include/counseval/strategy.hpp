#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "counseval/binio.hpp"
#include "counseval/http.hpp"
#include "counseval/jsonl.hpp"
#include "counseval/rng.hpp"
#include "counseval/text.hpp"

namespace counseval {

// Enum order doubles as the deterministic tie-break order for classification.
enum class Strategy { Reflection, Prompting, Suggestion, Neutral };

inline constexpr int kNumStrategies = 4;

inline const char* strategy_to_string(Strategy s) {
    switch (s) {
        case Strategy::Reflection: return "Reflection";
        case Strategy::Prompting: return "Prompting";
        case Strategy::Suggestion: return "Suggestion";
        default: return "Neutral";
    }
}

inline Strategy strategy_from_string(const std::string& s) {
    std::string k = fold_case(trim(s));
    if (k == "reflection") return Strategy::Reflection;
    if (k == "prompting") return Strategy::Prompting;
    if (k == "suggestion") return Strategy::Suggestion;
    if (k == "neutral") return Strategy::Neutral;
    throw std::invalid_argument("unknown strategy: " + s);
}

inline bool try_strategy_from_string(const std::string& s, Strategy& out) {
    try {
        out = strategy_from_string(s);
        return true;
    } catch (const std::invalid_argument&) {
        return false;
    }
}

enum class LabelSource { Gold, Silver, Rule };

inline const char* label_source_to_string(LabelSource s) {
    switch (s) {
        case LabelSource::Gold: return "gold";
        case LabelSource::Silver: return "silver";
        default: return "rule";
    }
}

inline LabelSource label_source_from_string(const std::string& s) {
    if (s == "gold") return LabelSource::Gold;
    if (s == "silver") return LabelSource::Silver;
    if (s == "rule") return LabelSource::Rule;
    throw std::invalid_argument("unknown label source: " + s);
}

struct LabeledUtterance {
    std::string text;
    Strategy label = Strategy::Neutral;
    LabelSource source = LabelSource::Rule;
};

// Deterministic offline fallback labeler. Keyword and punctuation rules with
// precedence Reflection > Suggestion > Prompting, else Neutral.
inline Strategy rule_label(const std::string& utterance) {
    static const std::vector<std::string> reflection_phrases = {
        "i hear", "it sounds like", "sounds like you", "you seem to feel",
        "אני שומע", "אני שומעת", "נשמע ש", "זה נשמע",
        "أسمع", "يبدو أن", "يبدو انك"};
    static const std::vector<std::string> suggestion_phrases = {
        "maybe you could", "try to", "perhaps we could", "you could try", "one small thing",
        "אולי תוכל", "אולי כדאי", "נסה ל",
        "ربما يمكنك", "حاول أن", "ربما نفكر"};
    const std::string folded = fold_case(nfc_normalize(utterance));
    for (const auto& p : reflection_phrases)
        if (folded.find(p) != std::string::npos) return Strategy::Reflection;
    for (const auto& p : suggestion_phrases)
        if (folded.find(p) != std::string::npos) return Strategy::Suggestion;
    const std::string t = trim(folded);
    if (!t.empty() && (t.ends_with("?") || t.ends_with("؟"))) return Strategy::Prompting;
    return Strategy::Neutral;
}

// ---- hashed-feature multinomial logistic classifier ----

struct FeatureSpec {
    int ngram_min = 2;
    int ngram_max = 4;
    int hash_bits = 18;

    std::size_t dim() const { return std::size_t(1) << hash_bits; }
};

struct TrainConfig {
    FeatureSpec features;
    double learning_rate = 0.1;
    int batch_size = 64;
    int max_epochs = 15;
    int patience = 5; // epochs without validation improvement before stopping
    std::uint64_t seed = 0;

    void validate() const {
        if (features.ngram_min < 1 || features.ngram_max < features.ngram_min)
            throw std::invalid_argument("classifier: bad n-gram orders");
        if (features.hash_bits < 8 || features.hash_bits > 26)
            throw std::invalid_argument("classifier: hash_bits out of range");
        if (learning_rate <= 0) throw std::invalid_argument("classifier: learning rate must be > 0");
        if (batch_size < 1) throw std::invalid_argument("classifier: batch size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("classifier: max_epochs must be >= 1");
        if (patience < 1) throw std::invalid_argument("classifier: patience must be >= 1");
    }
};

// Character n-grams (codepoint windows, orders ngram_min..ngram_max) over the
// folded text plus word unigrams, hashed into a fixed dimension and
// L2-normalized. Collisions are accepted; they only blur features.
inline std::vector<std::pair<std::uint32_t, double>> extract_features(const std::string& text,
                                                                      const FeatureSpec& spec) {
    const RawTokens toks = tokenize_core(text);
    const std::string folded = fold_case(toks.source);
    const auto cps = utf8_decode(folded);
    const std::uint32_t mask = static_cast<std::uint32_t>(spec.dim() - 1);

    std::map<std::uint32_t, double> acc;
    for (int n = spec.ngram_min; n <= spec.ngram_max; ++n) {
        if (cps.size() < static_cast<std::size_t>(n)) break;
        for (std::size_t i = 0; i + n <= cps.size(); ++i) {
            std::string gram = "c|";
            for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j)
                utf8_append(gram, cps[i + j].cp);
            acc[static_cast<std::uint32_t>(fnv1a(gram)) & mask] += 1.0;
        }
    }
    for (const std::string& t : toks.tokens)
        acc[static_cast<std::uint32_t>(fnv1a("w|" + t)) & mask] += 1.0;

    double norm = 0.0;
    for (const auto& [_, v] : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<std::pair<std::uint32_t, double>> out;
    out.reserve(acc.size());
    for (const auto& [idx, v] : acc) out.emplace_back(idx, norm > 0 ? v / norm : 0.0);
    return out;
}

struct TrainMetadata {
    int epochs_run = 0;
    int best_epoch = -1;
    double best_val_macro_f1 = 0.0;
    std::vector<double> val_f1_trace; // one entry per epoch actually run
    std::uint64_t seed = 0;
};

struct ClassifierModel {
    FeatureSpec spec;
    std::array<std::vector<double>, kNumStrategies> weights; // dim() each
    std::array<double, kNumStrategies> bias{};
    TrainMetadata meta;
};

struct Classification {
    Strategy label = Strategy::Neutral;
    std::array<double, kNumStrategies> scores{};
    bool degenerate = false; // empty utterance; uniform scores returned
};

inline Classification classify(const ClassifierModel& model, const std::string& utterance) {
    Classification result;
    const auto features = extract_features(utterance, model.spec);
    if (features.empty()) {
        result.scores.fill(1.0 / kNumStrategies);
        result.label = Strategy::Neutral;
        result.degenerate = true;
        return result;
    }
    std::array<double, kNumStrategies> logits = model.bias;
    for (const auto& [idx, v] : features)
        for (int c = 0; c < kNumStrategies; ++c) logits[c] += model.weights[c][idx] * v;
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (int c = 0; c < kNumStrategies; ++c) {
        result.scores[c] = std::exp(logits[c] - max_logit);
        z += result.scores[c];
    }
    int best = 0;
    for (int c = 0; c < kNumStrategies; ++c) {
        result.scores[c] /= z;
        if (result.scores[c] > result.scores[best]) best = c; // first max wins ties
    }
    result.label = static_cast<Strategy>(best);
    return result;
}

struct ClassifierEvalReport {
    std::array<std::array<std::size_t, kNumStrategies>, kNumStrategies> confusion{}; // [gold][pred]
    std::array<double, kNumStrategies> precision{};
    std::array<double, kNumStrategies> recall{};
    std::array<double, kNumStrategies> f1{};
    double macro_f1 = 0.0;
};

inline ClassifierEvalReport evaluate_classifier(const ClassifierModel& model,
                                                const std::vector<LabeledUtterance>& gold) {
    if (gold.empty()) throw std::invalid_argument("classifier: empty gold set");
    ClassifierEvalReport report;
    for (const LabeledUtterance& u : gold) {
        const auto pred = classify(model, u.text);
        ++report.confusion[static_cast<int>(u.label)][static_cast<int>(pred.label)];
    }
    for (int c = 0; c < kNumStrategies; ++c) {
        std::size_t tp = report.confusion[c][c];
        std::size_t pred_total = 0, gold_total = 0;
        for (int g = 0; g < kNumStrategies; ++g) {
            pred_total += report.confusion[g][c];
            gold_total += report.confusion[c][g];
        }
        report.precision[c] = pred_total ? double(tp) / double(pred_total) : 0.0;
        report.recall[c] = gold_total ? double(tp) / double(gold_total) : 0.0;
        const double pr = report.precision[c] + report.recall[c];
        report.f1[c] = pr > 0 ? 2.0 * report.precision[c] * report.recall[c] / pr : 0.0;
        report.macro_f1 += report.f1[c] / kNumStrategies;
    }
    return report;
}

namespace detail {

// Macro-F1 of the current weights on a labeled set, for early stopping.
inline double validation_macro_f1(const ClassifierModel& model,
                                  const std::vector<LabeledUtterance>& val) {
    return evaluate_classifier(model, val).macro_f1;
}

} // namespace detail

// Mini-batch softmax regression with early stopping on validation macro-F1.
// Returns the checkpoint from the best epoch; metadata keeps the full
// per-epoch trace so the early-stopping contract is assertable.
inline ClassifierModel train_classifier(const std::vector<LabeledUtterance>& train,
                                        const std::vector<LabeledUtterance>& val,
                                        const TrainConfig& config) {
    config.validate();
    if (val.empty()) throw std::invalid_argument("classifier: validation set is empty");
    std::array<bool, kNumStrategies> present{};
    for (const LabeledUtterance& u : train) present[static_cast<int>(u.label)] = true;
    for (int c = 0; c < kNumStrategies; ++c)
        if (!present[c])
            throw std::invalid_argument(std::string("classifier: class ") +
                                        strategy_to_string(static_cast<Strategy>(c)) +
                                        " missing from training data");

    // features are static per utterance; extract once
    std::vector<std::vector<std::pair<std::uint32_t, double>>> feats(train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
        feats[i] = extract_features(train[i].text, config.features);

    ClassifierModel model;
    model.spec = config.features;
    for (auto& w : model.weights) w.assign(config.features.dim(), 0.0);
    model.meta.seed = config.seed;

    ClassifierModel best = model;
    DetRng rng(config.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            std::map<std::pair<int, std::uint32_t>, double> grad;
            std::array<double, kNumStrategies> bias_grad{};
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                std::array<double, kNumStrategies> logits = model.bias;
                for (const auto& [idx, v] : feats[i])
                    for (int c = 0; c < kNumStrategies; ++c)
                        logits[c] += model.weights[c][idx] * v;
                const double max_logit = *std::max_element(logits.begin(), logits.end());
                std::array<double, kNumStrategies> p{};
                double z = 0.0;
                for (int c = 0; c < kNumStrategies; ++c) {
                    p[c] = std::exp(logits[c] - max_logit);
                    z += p[c];
                }
                const int y = static_cast<int>(train[i].label);
                for (int c = 0; c < kNumStrategies; ++c) {
                    const double g = p[c] / z - (c == y ? 1.0 : 0.0);
                    bias_grad[c] += g;
                    for (const auto& [idx, v] : feats[i]) grad[{c, idx}] += g * v;
                }
            }
            const double scale = config.learning_rate / static_cast<double>(end - start);
            for (const auto& [key, g] : grad) model.weights[key.first][key.second] -= scale * g;
            for (int c = 0; c < kNumStrategies; ++c) model.bias[c] -= scale * bias_grad[c];
        }

        const double f1 = detail::validation_macro_f1(model, val);
        model.meta.val_f1_trace.push_back(f1);
        model.meta.epochs_run = epoch + 1;
        if (model.meta.best_epoch < 0 || f1 > model.meta.best_val_macro_f1) {
            model.meta.best_epoch = epoch;
            model.meta.best_val_macro_f1 = f1;
            best = model; // checkpoint: weights + bias at the best epoch
        }
        if (epoch - model.meta.best_epoch >= config.patience) break;
    }

    // best holds the winning weights; carry over the full trace
    best.meta = model.meta;
    return best;
}

// ---- model file (versioned, deterministic bytes, sparse weights) ----

inline void save_classifier(const ClassifierModel& model, std::ostream& out) {
    out.write("CEVSC001", 8);
    binio::write_u32(out, static_cast<std::uint32_t>(model.spec.ngram_min));
    binio::write_u32(out, static_cast<std::uint32_t>(model.spec.ngram_max));
    binio::write_u32(out, static_cast<std::uint32_t>(model.spec.hash_bits));
    for (int c = 0; c < kNumStrategies; ++c) binio::write_f64(out, model.bias[c]);
    std::vector<std::uint32_t> nonzero;
    for (std::uint32_t idx = 0; idx < model.spec.dim(); ++idx) {
        for (int c = 0; c < kNumStrategies; ++c) {
            if (model.weights[c][idx] != 0.0) {
                nonzero.push_back(idx);
                break;
            }
        }
    }
    binio::write_u64(out, nonzero.size());
    for (std::uint32_t idx : nonzero) {
        binio::write_u32(out, idx);
        for (int c = 0; c < kNumStrategies; ++c) binio::write_f64(out, model.weights[c][idx]);
    }
    binio::write_u32(out, static_cast<std::uint32_t>(model.meta.epochs_run));
    binio::write_u32(out, static_cast<std::uint32_t>(model.meta.best_epoch));
    binio::write_f64(out, model.meta.best_val_macro_f1);
    binio::write_u64(out, model.meta.seed);
    binio::write_u64(out, model.meta.val_f1_trace.size());
    for (double f : model.meta.val_f1_trace) binio::write_f64(out, f);
    if (!out) throw std::runtime_error("classifier: write failure");
}

inline ClassifierModel load_classifier(std::istream& in) {
    binio::expect_magic(in, "CEVSC001");
    ClassifierModel model;
    model.spec.ngram_min = static_cast<int>(binio::read_u32(in));
    model.spec.ngram_max = static_cast<int>(binio::read_u32(in));
    model.spec.hash_bits = static_cast<int>(binio::read_u32(in));
    for (int c = 0; c < kNumStrategies; ++c) model.bias[c] = binio::read_f64(in);
    for (auto& w : model.weights) w.assign(model.spec.dim(), 0.0);
    const std::uint64_t nonzero = binio::read_u64(in);
    for (std::uint64_t i = 0; i < nonzero; ++i) {
        const std::uint32_t idx = binio::read_u32(in);
        if (idx >= model.spec.dim()) throw std::runtime_error("classifier: index out of range");
        for (int c = 0; c < kNumStrategies; ++c) model.weights[c][idx] = binio::read_f64(in);
    }
    model.meta.epochs_run = static_cast<int>(binio::read_u32(in));
    model.meta.best_epoch = static_cast<int>(binio::read_u32(in));
    model.meta.best_val_macro_f1 = binio::read_f64(in);
    model.meta.seed = binio::read_u64(in);
    const std::uint64_t trace = binio::read_u64(in);
    for (std::uint64_t i = 0; i < trace; ++i)
        model.meta.val_f1_trace.push_back(binio::read_f64(in));
    return model;
}

inline void save_classifier_file(const ClassifierModel& model, const std::string& path) {
    auto out = open_output(path);
    save_classifier(model, out);
}

inline ClassifierModel load_classifier_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return load_classifier(in);
}

// ---- silver labeling via remote zero-shot endpoint ----

struct SilverLabelResult {
    std::vector<LabeledUtterance> labeled;
    std::vector<std::string> warnings;
};

// POST {"utterances": [...], "classes": [...]} -> {"labels": [...]}.
// Responses that fail to parse into a class get one retry, then fall back to
// Neutral with a warning.
inline SilverLabelResult silver_label_remote(const std::vector<std::string>& utterances,
                                             const EndpointConfig& endpoint,
                                             std::size_t request_batch = 64) {
    static const std::vector<std::string> classes = {"Reflection", "Prompting", "Suggestion",
                                                     "Neutral"};
    SilverLabelResult result;
    result.labeled.resize(utterances.size());

    auto request = [&](const std::vector<std::size_t>& indices)
        -> std::vector<std::pair<std::size_t, std::string>> {
        nlohmann::json batch = nlohmann::json::array();
        for (std::size_t i : indices) batch.push_back(utterances[i]);
        nlohmann::json response =
            post_json(endpoint, {{"utterances", batch}, {"classes", classes}});
        const auto& labels = response.at("labels");
        if (!labels.is_array() || labels.size() != indices.size())
            throw HttpError("silver endpoint returned " + std::to_string(labels.size()) +
                            " labels for " + std::to_string(indices.size()) + " utterances");
        std::vector<std::pair<std::size_t, std::string>> out;
        for (std::size_t k = 0; k < indices.size(); ++k)
            out.emplace_back(indices[k], labels[k].get<std::string>());
        return out;
    };

    std::vector<std::size_t> pending;
    for (std::size_t start = 0; start < utterances.size(); start += request_batch) {
        const std::size_t end = std::min(utterances.size(), start + request_batch);
        std::vector<std::size_t> indices;
        for (std::size_t i = start; i < end; ++i) indices.push_back(i);
        for (const auto& [i, raw] : request(indices)) {
            Strategy s;
            if (try_strategy_from_string(raw, s)) {
                result.labeled[i] = {utterances[i], s, LabelSource::Silver};
            } else {
                pending.push_back(i);
            }
        }
    }
    if (!pending.empty()) {
        for (const auto& [i, raw] : request(pending)) {
            Strategy s;
            if (try_strategy_from_string(raw, s)) {
                result.labeled[i] = {utterances[i], s, LabelSource::Silver};
            } else {
                result.labeled[i] = {utterances[i], Strategy::Neutral, LabelSource::Silver};
                result.warnings.push_back("utterance " + std::to_string(i) +
                                          ": unparseable label \"" + raw + "\", using Neutral");
            }
        }
    }
    return result;
}

// ---- labeled-utterance JSONL ({"text", "label", "source"}) ----

inline std::vector<LabeledUtterance> load_labeled(std::istream& in) {
    std::vector<LabeledUtterance> out;
    for_each_jsonl(in, [&](std::size_t line_no, const nlohmann::json& rec) {
        try {
            LabeledUtterance u;
            u.text = rec.at("text").get<std::string>();
            u.label = strategy_from_string(rec.at("label").get<std::string>());
            u.source = label_source_from_string(rec.value("source", std::string("rule")));
            out.push_back(std::move(u));
        } catch (const std::exception& e) {
            throw JsonlError(line_no, e.what());
        }
    });
    return out;
}

inline void save_labeled(const std::vector<LabeledUtterance>& labeled, std::ostream& out) {
    for (const LabeledUtterance& u : labeled) {
        nlohmann::json j = {{"text", u.text},
                            {"label", strategy_to_string(u.label)},
                            {"source", label_source_to_string(u.source)}};
        out << j.dump() << '\n';
    }
}

inline nlohmann::json classifier_report_to_json(const ClassifierEvalReport& report) {
    nlohmann::json per_class = nlohmann::json::object();
    nlohmann::json confusion = nlohmann::json::array();
    for (int c = 0; c < kNumStrategies; ++c) {
        per_class[strategy_to_string(static_cast<Strategy>(c))] = {
            {"precision", report.precision[c]},
            {"recall", report.recall[c]},
            {"f1", report.f1[c]}};
        nlohmann::json row = nlohmann::json::array();
        for (int g = 0; g < kNumStrategies; ++g) row.push_back(report.confusion[c][g]);
        confusion.push_back(std::move(row));
    }
    return {{"per_class", per_class}, {"macro_f1", report.macro_f1}, {"confusion", confusion}};
}

} // namespace counseval
