#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "counseval/metrics.hpp"

namespace counseval {

struct PairedScores {
    std::vector<std::string> sample_ids;
    std::vector<double> a;
    std::vector<double> b;
};

enum class WilcoxonMethod { Exact, NormalApprox };

struct WilcoxonResult {
    double w_statistic = 0.0; // min(W+, W-)
    std::size_t n_effective = 0;
    double p_two_sided = 1.0;
    WilcoxonMethod method = WilcoxonMethod::Exact;
};

struct DegeneratePairingError : std::runtime_error {
    DegeneratePairingError() : std::runtime_error("degenerate pairing: all differences zero") {}
};

// Paired signed-rank test. Zero differences are dropped (classic treatment),
// |d| gets average ranks on ties, W = min(W+, W-). The two-sided p is exact
// for n_effective <= exact_threshold -- the null distribution of W+ over all
// 2^n sign assignments, computed by dynamic programming over doubled ranks --
// and a tie- and continuity-corrected normal approximation above it.
inline WilcoxonResult wilcoxon_signed_rank(const PairedScores& pairs,
                                           std::size_t exact_threshold = 25) {
    if (pairs.a.size() != pairs.b.size())
        throw std::invalid_argument("wilcoxon: unequal score vectors");
    if (pairs.a.empty()) throw std::invalid_argument("wilcoxon: empty input");

    std::vector<double> diffs;
    for (std::size_t i = 0; i < pairs.a.size(); ++i) {
        const double d = pairs.a[i] - pairs.b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    const std::size_t n = diffs.size();
    if (n == 0) throw DegeneratePairingError();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return std::fabs(diffs[x]) < std::fabs(diffs[y]);
    });

    // average ranks; doubled so tie-averages stay integral
    std::vector<std::int64_t> doubled_rank(n, 0);
    std::vector<std::size_t> tie_sizes;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n &&
               std::fabs(diffs[order[j + 1]]) == std::fabs(diffs[order[i]]))
            ++j;
        const std::int64_t doubled_avg = static_cast<std::int64_t>(i + 1 + j + 1); // 2 * mean rank
        for (std::size_t k = i; k <= j; ++k) doubled_rank[order[k]] = doubled_avg;
        tie_sizes.push_back(j - i + 1);
        i = j + 1;
    }

    std::int64_t w_plus2 = 0, total2 = 0;
    for (std::size_t k = 0; k < n; ++k) {
        total2 += doubled_rank[k];
        if (diffs[k] > 0) w_plus2 += doubled_rank[k];
    }
    const std::int64_t w_minus2 = total2 - w_plus2;
    const std::int64_t w_min2 = std::min(w_plus2, w_minus2);

    WilcoxonResult result;
    result.n_effective = n;
    result.w_statistic = static_cast<double>(w_min2) / 2.0;

    if (n <= exact_threshold) {
        result.method = WilcoxonMethod::Exact;
        // dp[s] = number of sign assignments whose positive doubled-rank sum is s
        std::vector<double> dp(static_cast<std::size_t>(total2) + 1, 0.0);
        dp[0] = 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto r = static_cast<std::size_t>(doubled_rank[k]);
            for (std::size_t s = dp.size(); s-- > r;) dp[s] += dp[s - r];
        }
        const double denom = std::pow(2.0, static_cast<double>(n));
        double low = 0.0, high = 0.0;
        for (std::size_t s = 0; s < dp.size(); ++s) {
            if (static_cast<std::int64_t>(s) <= w_min2) low += dp[s];
            if (static_cast<std::int64_t>(s) >= total2 - w_min2) high += dp[s];
        }
        result.p_two_sided = std::min(1.0, (low + high) / denom);
    } else {
        result.method = WilcoxonMethod::NormalApprox;
        const double dn = static_cast<double>(n);
        const double mean = dn * (dn + 1.0) / 4.0;
        double tie_term = 0.0;
        for (std::size_t t : tie_sizes) {
            const double dt = static_cast<double>(t);
            tie_term += dt * dt * dt - dt;
        }
        const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie_term / 48.0;
        const double w = result.w_statistic;
        const double z = (w - mean + 0.5) / std::sqrt(var); // continuity toward the mean
        const double phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
        result.p_two_sided = std::min(1.0, std::max(0.0, 2.0 * phi));
    }
    return result;
}

// Holm step-down: sort ascending, adjusted_(i) = max over j <= i of
// min(1, (m - j) * p_(j)) with 0-based j, mapped back to input order.
inline std::vector<double> holm_adjust(const std::vector<double>& raw_p) {
    for (double p : raw_p)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("holm: p-value outside [0, 1]");
    const std::size_t m = raw_p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return raw_p[x] < raw_p[y]; });
    std::vector<double> adjusted(m, 0.0);
    double running = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double scaled = static_cast<double>(m - i) * raw_p[order[i]];
        running = std::max(running, std::min(1.0, scaled));
        adjusted[order[i]] = running;
    }
    return adjusted;
}

// ---- input-length quintile sensitivity ----

struct QuintileRecord {
    std::string sample_id;
    std::size_t input_token_length = 0;
    std::map<std::string, double> scores; // system name -> per-sample score
};

struct QuintileBin {
    std::size_t size = 0;
    std::size_t min_length = 0;
    std::size_t max_length = 0;
    std::map<std::string, double> mean_scores;
};

struct QuintileReport {
    std::string metric;
    std::vector<QuintileBin> bins; // always 5
};

// Stable sort by (input length, sample id), then five contiguous bins whose
// sizes differ by at most one; the remainder goes to the earliest bins.
inline QuintileReport quintile_sensitivity(std::vector<QuintileRecord> records,
                                           const std::string& metric_name = "") {
    if (records.size() < 5)
        throw std::invalid_argument("quintile_sensitivity: need at least 5 samples");
    std::stable_sort(records.begin(), records.end(),
                     [](const QuintileRecord& x, const QuintileRecord& y) {
                         if (x.input_token_length != y.input_token_length)
                             return x.input_token_length < y.input_token_length;
                         return x.sample_id < y.sample_id;
                     });
    QuintileReport report;
    report.metric = metric_name;
    const std::size_t base = records.size() / 5;
    const std::size_t remainder = records.size() % 5;
    std::size_t pos = 0;
    for (std::size_t b = 0; b < 5; ++b) {
        const std::size_t size = base + (b < remainder ? 1 : 0);
        QuintileBin bin;
        bin.size = size;
        bin.min_length = records[pos].input_token_length;
        bin.max_length = records[pos + size - 1].input_token_length;
        std::map<std::string, double> sums;
        for (std::size_t k = pos; k < pos + size; ++k)
            for (const auto& [system, score] : records[k].scores) sums[system] += score;
        for (const auto& [system, sum] : sums)
            bin.mean_scores[system] = sum / static_cast<double>(size);
        report.bins.push_back(std::move(bin));
        pos += size;
    }
    return report;
}

// ---- the full significance protocol ----

inline const std::vector<std::string>& protocol_metrics() {
    static const std::vector<std::string> metrics = {
        "rouge1_f1", "rouge2_f1", "rougeL_f1", "sentence_bleu", "bertscore_f1", "sim_match",
        "ppl"};
    return metrics;
}

inline std::optional<double> per_sample_metric(const PerSampleMetrics& m,
                                               const std::string& metric) {
    if (metric == "rouge1_f1") return m.rouge1.f1;
    if (metric == "rouge2_f1") return m.rouge2.f1;
    if (metric == "rougeL_f1") return m.rouge_l.f1;
    if (metric == "sentence_bleu") return m.sentence_bleu;
    if (metric == "bertscore_f1") return m.bert.f1;
    if (metric == "sim_match") return m.sim_match ? 1.0 : 0.0;
    if (metric == "ppl") {
        if (std::isnan(m.ppl)) return std::nullopt;
        return m.ppl;
    }
    throw std::invalid_argument("unknown per-sample metric: " + metric);
}

struct ProtocolComparison {
    std::string baseline;
    double w = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_effective = 0;
    std::string method;
    double p_raw = std::numeric_limits<double>::quiet_NaN();
    double p_holm = std::numeric_limits<double>::quiet_NaN();
    bool reject = false;
    std::size_t skipped_pairs = 0; // pairs dropped because a side was unscoreable
    std::string error;             // set when the test could not run
};

struct ProtocolFamily {
    std::string metric;
    std::vector<ProtocolComparison> comparisons;
};

struct ProtocolReport {
    std::string care_system;
    double alpha = 0.05;
    std::vector<ProtocolFamily> families;
    // Pairing decisions that affect comparability; rendered into every report.
    std::string note =
        "BLEU is paired at sentence level; SIM is paired as per-sample match indicators.";
};

// One Wilcoxon per (metric, baseline) pair, Holm-corrected within each
// metric's family of comparisons.
inline ProtocolReport run_protocol(const MetricSuiteResult& care,
                                   const std::vector<MetricSuiteResult>& baselines,
                                   double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0, 1)");

    auto ids_of = [](const MetricSuiteResult& r) {
        std::vector<std::string> ids;
        for (const auto& m : r.samples) ids.push_back(m.sample_id);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    const auto care_ids = ids_of(care);
    for (const MetricSuiteResult& b : baselines)
        if (ids_of(b) != care_ids)
            throw std::invalid_argument("run_protocol: sample-set mismatch between " +
                                        care.system_name + " and " + b.system_name);

    ProtocolReport report;
    report.care_system = care.system_name;
    report.alpha = alpha;

    for (const std::string& metric : protocol_metrics()) {
        ProtocolFamily family;
        family.metric = metric;
        for (const MetricSuiteResult& baseline : baselines) {
            std::map<std::string, const PerSampleMetrics*> base_by_id;
            for (const auto& m : baseline.samples) base_by_id[m.sample_id] = &m;

            ProtocolComparison cmp;
            cmp.baseline = baseline.system_name;
            PairedScores pairs;
            for (const auto& m : care.samples) {
                const auto av = per_sample_metric(m, metric);
                const auto bv = per_sample_metric(*base_by_id.at(m.sample_id), metric);
                if (!av || !bv) {
                    ++cmp.skipped_pairs;
                    continue;
                }
                pairs.sample_ids.push_back(m.sample_id);
                pairs.a.push_back(*av);
                pairs.b.push_back(*bv);
            }
            try {
                if (pairs.a.empty()) throw std::runtime_error("no scoreable pairs");
                const WilcoxonResult w = wilcoxon_signed_rank(pairs);
                cmp.w = w.w_statistic;
                cmp.n_effective = w.n_effective;
                cmp.method = w.method == WilcoxonMethod::Exact ? "exact" : "normal_approx";
                cmp.p_raw = w.p_two_sided;
            } catch (const std::exception& e) {
                cmp.error = e.what();
            }
            family.comparisons.push_back(std::move(cmp));
        }

        // Holm within the family, over the comparisons that produced a p.
        std::vector<std::size_t> valid;
        std::vector<double> raw;
        for (std::size_t i = 0; i < family.comparisons.size(); ++i) {
            if (family.comparisons[i].error.empty()) {
                valid.push_back(i);
                raw.push_back(family.comparisons[i].p_raw);
            }
        }
        if (!raw.empty()) {
            const auto adjusted = holm_adjust(raw);
            for (std::size_t k = 0; k < valid.size(); ++k) {
                family.comparisons[valid[k]].p_holm = adjusted[k];
                family.comparisons[valid[k]].reject = adjusted[k] < alpha;
            }
        }
        report.families.push_back(std::move(family));
    }
    return report;
}

// ---- serialization ----

inline nlohmann::json quintile_report_to_json(const QuintileReport& report) {
    nlohmann::json bins = nlohmann::json::array();
    for (std::size_t b = 0; b < report.bins.size(); ++b) {
        const QuintileBin& bin = report.bins[b];
        bins.push_back({{"quintile", b + 1},
                        {"size", bin.size},
                        {"min_length", bin.min_length},
                        {"max_length", bin.max_length},
                        {"mean_scores", bin.mean_scores}});
    }
    return {{"metric", report.metric}, {"bins", std::move(bins)}};
}

inline nlohmann::json protocol_report_to_json(const ProtocolReport& report) {
    nlohmann::json families = nlohmann::json::array();
    for (const ProtocolFamily& family : report.families) {
        nlohmann::json comps = nlohmann::json::array();
        for (const ProtocolComparison& c : family.comparisons) {
            nlohmann::json cj = {{"baseline", c.baseline}, {"skipped_pairs", c.skipped_pairs}};
            if (c.error.empty()) {
                cj["W"] = c.w;
                cj["n_effective"] = c.n_effective;
                cj["method"] = c.method;
                cj["p_raw"] = c.p_raw;
                cj["p_holm"] = c.p_holm;
                cj["reject"] = c.reject;
            } else {
                cj["error"] = c.error;
            }
            comps.push_back(std::move(cj));
        }
        families.push_back({{"metric", family.metric}, {"comparisons", std::move(comps)}});
    }
    return {{"care_system", report.care_system},
            {"alpha", report.alpha},
            {"note", report.note},
            {"families", std::move(families)}};
}

} // namespace counseval
