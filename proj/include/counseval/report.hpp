#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "counseval/metrics.hpp"
#include "counseval/stats.hpp"

namespace counseval {

// Everything a rendered report needs. Reports never recompute: each number
// traces back to a persisted MetricSuiteResult or protocol/quintile output.
struct ReportBundle {
    std::string language;
    std::vector<MetricSuiteResult> results;
    std::optional<ProtocolReport> protocol;
    std::vector<QuintileReport> quintiles;
    nlohmann::json run_metadata; // config hash, seeds, tool version
};

inline std::vector<std::string> validate_bundle(const ReportBundle& bundle) {
    std::vector<std::string> missing;
    if (bundle.results.empty()) missing.push_back("results");
    if (bundle.run_metadata.is_null()) missing.push_back("run_metadata");
    return missing;
}

namespace detail {

// One formatting path for every sink: the JSON shortest-roundtrip repr, so
// CSV cells re-parse to exactly the JSON values.
inline std::string num(double v) { return nlohmann::json(v).dump(); }

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    auto out = open_output(path.string());
    out << content;
}

} // namespace detail

// Systems x overlap metrics (R-1/R-2/R-L F1 and corpus BLEU, one row per
// system).
inline std::string linguistic_table_markdown(const ReportBundle& bundle) {
    std::string md = "| Model | R-1 | R-2 | R-L | BLEU |\n|---|---|---|---|---|\n";
    for (const MetricSuiteResult& r : bundle.results) {
        md += "| " + r.system_name + " | " + detail::num(r.aggregate.rouge1.f1) + " | " +
              detail::num(r.aggregate.rouge2.f1) + " | " + detail::num(r.aggregate.rouge_l.f1) +
              " | " + detail::num(r.aggregate.corpus_bleu) + " |\n";
    }
    return md;
}

inline std::string linguistic_table_csv(const ReportBundle& bundle) {
    std::string csv = "system,rouge1_f1,rouge2_f1,rougeL_f1,corpus_bleu\n";
    for (const MetricSuiteResult& r : bundle.results) {
        csv += r.system_name + "," + detail::num(r.aggregate.rouge1.f1) + "," +
               detail::num(r.aggregate.rouge2.f1) + "," + detail::num(r.aggregate.rouge_l.f1) +
               "," + detail::num(r.aggregate.corpus_bleu) + "\n";
    }
    return csv;
}

inline nlohmann::json linguistic_table_json(const ReportBundle& bundle) {
    nlohmann::json rows = nlohmann::json::array();
    for (const MetricSuiteResult& r : bundle.results) {
        rows.push_back({{"system", r.system_name},
                        {"rouge1_f1", r.aggregate.rouge1.f1},
                        {"rouge2_f1", r.aggregate.rouge2.f1},
                        {"rougeL_f1", r.aggregate.rouge_l.f1},
                        {"corpus_bleu", r.aggregate.corpus_bleu}});
    }
    return {{"language", bundle.language}, {"rows", std::move(rows)}};
}

inline std::string perplexity_table_markdown(const ReportBundle& bundle) {
    std::string md = "| Model | Supportive Language Perplexity |\n|---|---|\n";
    for (const MetricSuiteResult& r : bundle.results)
        md += "| " + r.system_name + " | " + detail::num(r.aggregate.mean_ppl) + " |\n";
    return md;
}

inline std::string perplexity_table_csv(const ReportBundle& bundle) {
    std::string csv = "system,mean_ppl\n";
    for (const MetricSuiteResult& r : bundle.results)
        csv += r.system_name + "," + detail::num(r.aggregate.mean_ppl) + "\n";
    return csv;
}

inline nlohmann::json bar_data_json(const ReportBundle& bundle, const std::string& which) {
    nlohmann::json bars = nlohmann::json::array();
    for (const MetricSuiteResult& r : bundle.results) {
        const double value = which == "sim" ? r.aggregate.sim : r.aggregate.bert.f1;
        bars.push_back({{"system", r.system_name}, {"value", value}});
    }
    return {{"metric", which}, {"language", bundle.language}, {"bars", std::move(bars)}};
}

inline std::string stats_table_markdown(const ProtocolReport& protocol) {
    std::string md = "| Metric | Baseline | W | p (raw) | p (Holm) | Reject |\n"
                     "|---|---|---|---|---|---|\n";
    for (const ProtocolFamily& family : protocol.families) {
        for (const ProtocolComparison& c : family.comparisons) {
            if (!c.error.empty()) {
                md += "| " + family.metric + " | " + c.baseline + " | - | - | - | error: " +
                      c.error + " |\n";
                continue;
            }
            md += "| " + family.metric + " | " + c.baseline + " | " + detail::num(c.w) + " | " +
                  detail::num(c.p_raw) + " | " + detail::num(c.p_holm) + " | " +
                  (c.reject ? "yes" : "no") + " |\n";
        }
    }
    md += "\n" + protocol.note + "\n";
    return md;
}

inline std::string stats_table_csv(const ProtocolReport& protocol) {
    std::string csv = "metric,baseline,W,p_raw,p_holm,reject\n";
    for (const ProtocolFamily& family : protocol.families) {
        for (const ProtocolComparison& c : family.comparisons) {
            if (!c.error.empty()) {
                csv += family.metric + "," + c.baseline + ",,,,error\n";
                continue;
            }
            csv += family.metric + "," + c.baseline + "," + detail::num(c.w) + "," +
                   detail::num(c.p_raw) + "," + detail::num(c.p_holm) + "," +
                   (c.reject ? "true" : "false") + "\n";
        }
    }
    return csv;
}

// Writes the requested formats into out_dir and returns the file list.
// Formats: any subset of {"json", "csv", "markdown"}.
inline std::vector<std::string> emit_report(const ReportBundle& bundle,
                                            const std::string& out_dir,
                                            const std::set<std::string>& formats) {
    if (auto missing = validate_bundle(bundle); !missing.empty()) {
        std::string what = "report bundle incomplete, missing:";
        for (const std::string& m : missing) what += " " + m;
        throw std::invalid_argument(what);
    }
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        const fs::path path = fs::path(out_dir) / name;
        detail::write_file(path, content);
        written.push_back(path.string());
    };

    if (formats.count("json")) {
        emit("linguistic_metrics.json", linguistic_table_json(bundle).dump(2) + "\n");
        nlohmann::json ppl_rows = nlohmann::json::array();
        for (const MetricSuiteResult& r : bundle.results)
            ppl_rows.push_back({{"system", r.system_name}, {"mean_ppl", r.aggregate.mean_ppl}});
        emit("perplexity.json",
             nlohmann::json({{"language", bundle.language}, {"rows", ppl_rows}}).dump(2) + "\n");
        emit("sim_bars.json", bar_data_json(bundle, "sim").dump(2) + "\n");
        emit("bertscore_bars.json", bar_data_json(bundle, "bertscore_f1").dump(2) + "\n");
        if (bundle.protocol)
            emit("stats.json", protocol_report_to_json(*bundle.protocol).dump(2) + "\n");
        if (!bundle.quintiles.empty()) {
            nlohmann::json qs = nlohmann::json::array();
            for (const QuintileReport& q : bundle.quintiles)
                qs.push_back(quintile_report_to_json(q));
            emit("quintiles.json", qs.dump(2) + "\n");
        }
        emit("run_metadata.json", bundle.run_metadata.dump(2) + "\n");
    }
    if (formats.count("csv")) {
        emit("linguistic_metrics.csv", linguistic_table_csv(bundle));
        emit("perplexity.csv", perplexity_table_csv(bundle));
        if (bundle.protocol) emit("stats.csv", stats_table_csv(*bundle.protocol));
    }
    if (formats.count("markdown")) {
        std::string md = "# Evaluation report (" + bundle.language + ")\n\n";
        md += "## Linguistic overlap metrics\n\n" + linguistic_table_markdown(bundle) + "\n";
        md += "## Supportive language perplexity\n\n" + perplexity_table_markdown(bundle) + "\n";
        md += "## Support intent match\n\n| Model | SIM |\n|---|---|\n";
        for (const MetricSuiteResult& r : bundle.results)
            md += "| " + r.system_name + " | " + detail::num(r.aggregate.sim) + " |\n";
        md += "\n## BERTScore (F1)\n\n| Model | F1 |\n|---|---|\n";
        for (const MetricSuiteResult& r : bundle.results)
            md += "| " + r.system_name + " | " + detail::num(r.aggregate.bert.f1) + " |\n";
        if (bundle.protocol)
            md += "\n## Significance tests\n\n" + stats_table_markdown(*bundle.protocol);
        emit("report.md", md);
    }
    return written;
}

} // namespace counseval
