#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "counseval/binio.hpp"
#include "counseval/corpus.hpp"
#include "counseval/jsonl.hpp"
#include "counseval/text.hpp"

namespace counseval {

enum class Smoothing { AddK, InterpolatedKN };

struct LmConfig {
    int order = 3;
    int min_count = 2;       // tokens below this become UNK
    Smoothing smoothing = Smoothing::InterpolatedKN;
    double add_k = 1.0;      // AddK only
    double discount = 0.75;  // KN only

    void validate() const {
        if (order < 1) throw std::invalid_argument("lm: order must be >= 1");
        if (min_count < 1) throw std::invalid_argument("lm: min_count must be >= 1");
        if (smoothing == Smoothing::AddK && add_k <= 0)
            throw std::invalid_argument("lm: add_k must be > 0");
        if (smoothing == Smoothing::InterpolatedKN && (discount <= 0 || discount >= 1))
            throw std::invalid_argument("lm: discount must be in (0, 1)");
    }
};

struct MeanPerplexity {
    double mean = 0.0;
    std::size_t scored = 0;
    std::size_t skipped = 0; // utterances with no tokens
};

// Count-based n-gram model over counselor utterances. The predictable
// vocabulary is {UNK, </s>} plus every kept word; <s> exists only inside
// contexts. Both smoothing modes normalize exactly: conditional probabilities
// over the vocabulary sum to 1 for every context, seen or unseen.
class NgramLm {
public:
    static constexpr std::uint32_t kUnkId = 0;
    static constexpr std::uint32_t kEosId = 1;
    static constexpr std::uint32_t kBosId = 0xFFFFFFFF;
    static constexpr std::uint32_t kFirstWordId = 2;

    NgramLm() = default;

    static NgramLm train(const std::vector<std::string>& utterances, const LmConfig& config) {
        config.validate();
        std::vector<std::vector<std::string>> tokenized;
        bool any = false;
        for (const std::string& u : utterances) {
            auto toks = word_tokens(u);
            if (!toks.empty()) any = true;
            tokenized.push_back(std::move(toks));
        }
        if (!any) throw std::invalid_argument("lm: training corpus has no tokens");

        NgramLm lm;
        lm.config_ = config;

        std::map<std::string, std::uint64_t> freq;
        for (const auto& toks : tokenized)
            for (const auto& t : toks) ++freq[t];
        for (const auto& [word, count] : freq)
            if (count >= static_cast<std::uint64_t>(config.min_count)) lm.words_.push_back(word);
        // words_ is sorted (map order), so id assignment is deterministic
        for (std::size_t i = 0; i < lm.words_.size(); ++i)
            lm.word_ids_[lm.words_[i]] = kFirstWordId + static_cast<std::uint32_t>(i);

        lm.tables_.assign(static_cast<std::size_t>(config.order), Table{});
        Table& top = lm.tables_.back();
        for (const auto& toks : tokenized) {
            if (toks.empty()) continue;
            const auto ids = lm.pad_ids(toks);
            const std::size_t ctx_len = static_cast<std::size_t>(config.order) - 1;
            for (std::size_t pos = ctx_len; pos < ids.size(); ++pos) {
                std::vector<std::uint32_t> ctx(ids.begin() + (pos - ctx_len), ids.begin() + pos);
                ++top[ctx].words[ids[pos]];
            }
        }
        lm.finalize_counts();
        return lm;
    }

    // Degenerate model with an empty count table: every conditional
    // distribution is uniform over the vocabulary, so PPL == vocab_size().
    static NgramLm uniform(const std::vector<std::string>& vocab_words, int order = 2) {
        NgramLm lm;
        lm.config_.order = order;
        lm.config_.min_count = 1;
        lm.config_.smoothing = Smoothing::AddK;
        lm.config_.add_k = 1.0;
        std::map<std::string, bool> uniq;
        for (const auto& w : vocab_words) uniq[w] = true;
        for (const auto& [w, _] : uniq) lm.words_.push_back(w);
        for (std::size_t i = 0; i < lm.words_.size(); ++i)
            lm.word_ids_[lm.words_[i]] = kFirstWordId + static_cast<std::uint32_t>(i);
        lm.tables_.assign(static_cast<std::size_t>(order), Table{});
        return lm;
    }

    const LmConfig& config() const { return config_; }

    // UNK and </s> plus kept words.
    std::size_t vocab_size() const { return words_.size() + 2; }

    std::uint32_t token_id(const std::string& token) const {
        auto it = word_ids_.find(token);
        return it == word_ids_.end() ? kUnkId : it->second;
    }

    std::vector<std::uint32_t> predictable_ids() const {
        std::vector<std::uint32_t> ids = {kUnkId, kEosId};
        for (std::size_t i = 0; i < words_.size(); ++i)
            ids.push_back(kFirstWordId + static_cast<std::uint32_t>(i));
        return ids;
    }

    // Conditional probability of word given a context of exactly order-1 ids.
    double cond_prob(const std::vector<std::uint32_t>& context, std::uint32_t word) const {
        if (context.size() != static_cast<std::size_t>(config_.order) - 1)
            throw std::invalid_argument("lm: context length must be order - 1");
        if (config_.smoothing == Smoothing::AddK) return addk_prob(context, word);
        return kn_prob(static_cast<std::size_t>(config_.order), context, word);
    }

    // All contexts with observed top-order counts (for diagnostics/tests).
    std::vector<std::vector<std::uint32_t>> seen_contexts() const {
        std::vector<std::vector<std::uint32_t>> out;
        for (const auto& [ctx, _] : tables_.back()) out.push_back(ctx);
        return out;
    }

    // exp(-(1/N) * sum log p(w_i | context)), N counting the end boundary.
    double perplexity(const std::string& utterance) const {
        const auto toks = word_tokens(utterance);
        if (toks.empty()) throw std::invalid_argument("lm: no tokens in utterance");
        const auto ids = pad_ids(toks);
        const std::size_t ctx_len = static_cast<std::size_t>(config_.order) - 1;
        double log_sum = 0.0;
        std::size_t n = 0;
        for (std::size_t pos = ctx_len; pos < ids.size(); ++pos) {
            std::vector<std::uint32_t> ctx(ids.begin() + (pos - ctx_len), ids.begin() + pos);
            log_sum += std::log(cond_prob(ctx, ids[pos]));
            ++n;
        }
        return std::exp(-log_sum / static_cast<double>(n));
    }

    // Macro average across utterances; empty ones are skipped and counted.
    MeanPerplexity mean_perplexity(const std::vector<std::string>& utterances) const {
        MeanPerplexity result;
        double sum = 0.0;
        for (const std::string& u : utterances) {
            if (word_tokens(u).empty()) {
                ++result.skipped;
                continue;
            }
            sum += perplexity(u);
            ++result.scored;
        }
        if (result.scored == 0)
            throw std::invalid_argument("lm: no scoreable utterances");
        result.mean = sum / static_cast<double>(result.scored);
        return result;
    }

    // ---- serialization (versioned, deterministic bytes) ----

    void save(std::ostream& out) const {
        out.write("CEVLM001", 8);
        binio::write_u32(out, static_cast<std::uint32_t>(config_.order));
        binio::write_u32(out, static_cast<std::uint32_t>(config_.min_count));
        binio::write_u8(out, config_.smoothing == Smoothing::AddK ? 0 : 1);
        binio::write_f64(out, config_.add_k);
        binio::write_f64(out, config_.discount);
        binio::write_u64(out, words_.size());
        for (const auto& w : words_) binio::write_string(out, w);
        binio::write_u32(out, static_cast<std::uint32_t>(tables_.size()));
        for (const Table& table : tables_) {
            binio::write_u64(out, table.size());
            for (const auto& [ctx, entry] : table) {
                binio::write_u32(out, static_cast<std::uint32_t>(ctx.size()));
                for (std::uint32_t id : ctx) binio::write_u32(out, id);
                binio::write_u64(out, entry.words.size());
                for (const auto& [id, count] : entry.words) {
                    binio::write_u32(out, id);
                    binio::write_u64(out, count);
                }
            }
        }
        if (!out) throw std::runtime_error("lm: write failure");
    }

    static NgramLm load(std::istream& in) {
        binio::expect_magic(in, "CEVLM001");
        NgramLm lm;
        lm.config_.order = static_cast<int>(binio::read_u32(in));
        lm.config_.min_count = static_cast<int>(binio::read_u32(in));
        lm.config_.smoothing = binio::read_u8(in) == 0 ? Smoothing::AddK : Smoothing::InterpolatedKN;
        lm.config_.add_k = binio::read_f64(in);
        lm.config_.discount = binio::read_f64(in);
        const std::uint64_t n_words = binio::read_u64(in);
        for (std::uint64_t i = 0; i < n_words; ++i) lm.words_.push_back(binio::read_string(in));
        for (std::size_t i = 0; i < lm.words_.size(); ++i)
            lm.word_ids_[lm.words_[i]] = kFirstWordId + static_cast<std::uint32_t>(i);
        const std::uint32_t n_tables = binio::read_u32(in);
        lm.tables_.assign(n_tables, Table{});
        for (Table& table : lm.tables_) {
            const std::uint64_t n_ctx = binio::read_u64(in);
            for (std::uint64_t c = 0; c < n_ctx; ++c) {
                const std::uint32_t ctx_len = binio::read_u32(in);
                std::vector<std::uint32_t> ctx(ctx_len);
                for (auto& id : ctx) id = binio::read_u32(in);
                Entry& entry = table[ctx];
                const std::uint64_t n_entries = binio::read_u64(in);
                for (std::uint64_t e = 0; e < n_entries; ++e) {
                    const std::uint32_t id = binio::read_u32(in);
                    entry.words[id] = binio::read_u64(in);
                }
            }
        }
        lm.refresh_totals();
        return lm;
    }

    void save_file(const std::string& path) const {
        auto out = open_output(path);
        save(out);
    }

    static NgramLm load_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open for reading: " + path);
        return load(in);
    }

private:
    struct Entry {
        std::map<std::uint32_t, std::uint64_t> words;
        std::uint64_t total = 0;
    };
    using Table = std::map<std::vector<std::uint32_t>, Entry>;

    LmConfig config_;
    std::vector<std::string> words_; // sorted; id = kFirstWordId + index
    std::map<std::string, std::uint32_t> word_ids_;
    // tables_[k-1] holds k-gram counts: raw at the top order, continuation
    // counts (distinct left extensions) below it.
    std::vector<Table> tables_;

    std::vector<std::uint32_t> pad_ids(const std::vector<std::string>& toks) const {
        std::vector<std::uint32_t> ids;
        ids.reserve(toks.size() + static_cast<std::size_t>(config_.order));
        for (int i = 0; i < config_.order - 1; ++i) ids.push_back(kBosId);
        for (const auto& t : toks) ids.push_back(token_id(t));
        ids.push_back(kEosId);
        return ids;
    }

    void refresh_totals() {
        for (Table& table : tables_)
            for (auto& [_, entry] : table) {
                entry.total = 0;
                for (const auto& [__, c] : entry.words) entry.total += c;
            }
    }

    // Derives each lower-order table from the one above it: the continuation
    // count of a k-gram is the number of distinct (k+1)-gram left extensions.
    void finalize_counts() {
        for (std::size_t level = tables_.size(); level-- > 1;) {
            const Table& upper = tables_[level];
            Table& lower = tables_[level - 1];
            for (const auto& [ctx, entry] : upper) {
                for (const auto& [word, _] : entry.words) {
                    // (k+1)-gram is ctx + word; drop its first id
                    std::vector<std::uint32_t> suffix(ctx.begin() + 1, ctx.end());
                    ++lower[suffix].words[word];
                }
            }
        }
        refresh_totals();
    }

    double addk_prob(const std::vector<std::uint32_t>& context, std::uint32_t word) const {
        const double k = config_.add_k;
        const double v = static_cast<double>(vocab_size());
        const Table& top = tables_.back();
        auto it = top.find(context);
        if (it == top.end()) return 1.0 / v;
        const Entry& entry = it->second;
        auto wit = entry.words.find(word);
        const double c = wit == entry.words.end() ? 0.0 : static_cast<double>(wit->second);
        return (c + k) / (static_cast<double>(entry.total) + k * v);
    }

    // Interpolated Kneser-Ney, recursing through continuation counts down to
    // a unigram distribution with a uniform 1/|V| backstop. Normalizes
    // exactly at every level for any discount in (0, 1).
    double kn_prob(std::size_t level, const std::vector<std::uint32_t>& context,
                   std::uint32_t word) const {
        const double d = config_.discount;
        if (level == 1) {
            const Table& unigrams = tables_.front();
            auto it = unigrams.find({});
            const double v = static_cast<double>(vocab_size());
            if (it == unigrams.end() || it->second.total == 0) return 1.0 / v;
            const Entry& entry = it->second;
            auto wit = entry.words.find(word);
            const double c = wit == entry.words.end() ? 0.0 : static_cast<double>(wit->second);
            const double total = static_cast<double>(entry.total);
            const double distinct = static_cast<double>(entry.words.size());
            return std::max(c - d, 0.0) / total + (d * distinct / total) * (1.0 / v);
        }
        std::vector<std::uint32_t> shorter(context.begin() + 1, context.end());
        const Table& table = tables_[level - 1];
        auto it = table.find(context);
        if (it == table.end() || it->second.total == 0)
            return kn_prob(level - 1, shorter, word);
        const Entry& entry = it->second;
        auto wit = entry.words.find(word);
        const double c = wit == entry.words.end() ? 0.0 : static_cast<double>(wit->second);
        const double total = static_cast<double>(entry.total);
        const double distinct = static_cast<double>(entry.words.size());
        const double lambda = d * distinct / total;
        return std::max(c - d, 0.0) / total + lambda * kn_prob(level - 1, shorter, word);
    }
};

// The LM's training corpus role: counselor messages only.
inline std::vector<std::string> counselor_utterances(const Corpus& corpus) {
    std::vector<std::string> out;
    for (const Session& s : corpus.sessions)
        for (const Message& m : s.messages)
            if (m.role == SpeakerRole::Counselor) out.push_back(m.text);
    return out;
}

inline NgramLm train_lm(const std::vector<std::string>& utterances, const LmConfig& config) {
    return NgramLm::train(utterances, config);
}

} // namespace counseval
