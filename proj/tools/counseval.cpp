// counseval command-line pipeline: corpus ingestion, anonymization, curation,
// SFT export, synthetic harness, strategy classifier, counselor LM, candidate
// generation, metric evaluation, significance protocol and report rendering.
// Subcommands compose through files only; identical config + seed reproduces
// every output byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "counseval/corpus.hpp"
#include "counseval/curate.hpp"
#include "counseval/genclient.hpp"
#include "counseval/metrics.hpp"
#include "counseval/report.hpp"
#include "counseval/scrub.hpp"
#include "counseval/slm.hpp"
#include "counseval/stats.hpp"
#include "counseval/strategy.hpp"
#include "counseval/synth.hpp"
#include "counseval/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace counseval;

namespace {

struct GlobalOpts {
    unsigned jobs = 1;
    std::uint64_t seed = 0;
    bool allow_partial = false;
    std::string out_dir = ".";
    std::string config_path;
};

void add_global_options(CLI::App* cmd, GlobalOpts& g) {
    cmd->add_option("--config", g.config_path, "JSON config file (flags override config)");
    cmd->add_option("--jobs", g.jobs, "worker threads for parallel stages")->check(CLI::Range(1u, 256u));
    cmd->add_option("--seed", g.seed, "seed for every randomized step");
    cmd->add_flag("--allow-partial", g.allow_partial, "tolerate missing generations/alignments");
    cmd->add_option("--out", g.out_dir, "directory for default-named outputs");
}

std::string config_hash_hex(const json& effective) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a(effective.dump())));
    return buf;
}

// Reproducibility record written next to a command's primary output. Holds
// only deterministic fields so reruns are byte-identical.
void write_run_meta(const std::string& primary_output, const std::string& command,
                    const GlobalOpts& g, const json& effective) {
    if (primary_output.empty()) return;
    json meta = {{"tool", "counseval"},
                 {"version", kVersion},
                 {"command", command},
                 {"seed", g.seed},
                 {"config_hash", config_hash_hex(effective)}};
    auto out = open_output(primary_output + ".meta.json");
    out << meta.dump(2) << '\n';
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw std::invalid_argument(what + " not found: " + path);
}

// Explicit paths win; unset outputs land as default-named files under --out.
std::string resolve_out(const GlobalOpts& g, std::string value, const std::string& fallback) {
    fs::path path = value.empty() ? fs::path(g.out_dir) / fallback : fs::path(value);
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    return path.string();
}

std::string read_text_file(const std::string& path) {
    auto in = open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> load_text_records(const std::string& path) {
    std::vector<std::string> out;
    auto in = open_input(path);
    for_each_jsonl(in, [&](std::size_t, const json& rec) {
        out.push_back(rec.at("text").get<std::string>());
    });
    return out;
}

std::array<double, 4> parse_mix(const std::string& mix) {
    std::array<double, 4> out{};
    std::stringstream ss(mix);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',') && i < 4) out[i++] = std::stod(item);
    if (i != 4) throw std::invalid_argument("--mix needs four comma-separated numbers");
    return out;
}

// Pre-parse --config and splice config-file values into argv as synthetic
// flags, so explicit flags always win and every option keeps one code path.
// Schema: {"global": {...}, "<subcommand>": {"option-name": value}}.
std::vector<std::string> merge_config_args(const std::vector<std::string>& args,
                                           const std::vector<std::string>& subcommands) {
    std::string config_path;
    std::string subcommand;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
        if (subcommand.empty() && !args[i].empty() && args[i][0] != '-') {
            for (const auto& s : subcommands)
                if (args[i] == s) subcommand = s;
        }
    }
    if (config_path.empty() || subcommand.empty()) return args;

    json config;
    {
        auto in = open_input(config_path);
        in >> config;
    }
    auto present = [&](const std::string& key) {
        const std::string flag = "--" + key;
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    std::vector<std::string> merged = args;
    auto inject = [&](const json& section) {
        if (!section.is_object()) return;
        for (const auto& [key, value] : section.items()) {
            if (present(key)) continue;
            if (value.is_boolean()) {
                if (value.get<bool>()) merged.push_back("--" + key);
            } else if (value.is_array()) {
                for (const auto& v : value)
                    merged.push_back("--" + key + "=" +
                                     (v.is_string() ? v.get<std::string>() : v.dump()));
            } else {
                merged.push_back("--" + key + "=" +
                                 (value.is_string() ? value.get<std::string>() : value.dump()));
            }
        }
    };
    if (config.contains(subcommand)) inject(config[subcommand]);
    if (config.contains("global")) inject(config["global"]);
    return merged;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"counsel-response corpus pipeline and evaluation engine"};
    app.require_subcommand(1);

    const std::vector<std::string> subcommand_names = {
        "ingest",       "scrub",    "curate",          "export-sft", "synth",
        "label-silver", "train-classifier", "eval-classifier", "train-lm",
        "generate",     "evaluate", "stats",           "report"};

    GlobalOpts g;
    std::string active;
    int exit_code = 0;

    auto guarded = [&](const std::string& name, auto&& body) {
        return [&, name, body]() {
            active = name;
            body();
        };
    };

    // ---- ingest ----
    auto* ingest = app.add_subcommand("ingest", "parse, validate and describe a corpus");
    struct {
        std::string in, language = "he", stats_out;
    } ingest_opts;
    add_global_options(ingest, g);
    ingest->add_option("--in", ingest_opts.in, "session JSONL")->required();
    ingest->add_option("--language", ingest_opts.language, "corpus language tag");
    ingest->add_option("--stats-out", ingest_opts.stats_out, "write stats JSON here too");
    ingest->callback(guarded("ingest", [&] {
        require_file(ingest_opts.in, "corpus");
        const Corpus corpus = load_corpus(ingest_opts.in, ingest_opts.language);
        const json stats = corpus_stats_to_json(corpus_stats(corpus));
        std::cout << stats.dump(2) << '\n';
        if (!ingest_opts.stats_out.empty()) {
            auto out = open_output(ingest_opts.stats_out);
            out << stats.dump(2) << '\n';
            write_run_meta(ingest_opts.stats_out, "ingest", g,
                           {{"in", ingest_opts.in}, {"language", ingest_opts.language}});
        }
    }));

    // ---- scrub ----
    auto* scrub = app.add_subcommand("scrub", "two-tier anonymization pass");
    struct {
        std::string in, out, language = "he", ner_spans, ner_endpoint, report;
    } scrub_opts;
    add_global_options(scrub, g);
    scrub->add_option("--in", scrub_opts.in, "session JSONL")->required();
    scrub->add_option("--out-file", scrub_opts.out, "scrubbed session JSONL");
    scrub->add_option("--language", scrub_opts.language, "rule-set language tag");
    scrub->add_option("--ner-spans", scrub_opts.ner_spans, "tier-1 span sidecar JSONL");
    scrub->add_option("--ner-endpoint", scrub_opts.ner_endpoint, "tier-1 HTTP span provider");
    scrub->add_option("--report", scrub_opts.report, "write replacement counts here");
    scrub->callback(guarded("scrub", [&] {
        require_file(scrub_opts.in, "corpus");
        scrub_opts.out = resolve_out(g, scrub_opts.out, "scrubbed.jsonl");
        if (!scrub_opts.ner_spans.empty()) require_file(scrub_opts.ner_spans, "NER span file");
        const Corpus corpus = load_corpus(scrub_opts.in, scrub_opts.language);
        std::string warning;
        const auto rules = default_rules(scrub_opts.language, &warning);
        if (!warning.empty()) std::cerr << warning << '\n';

        NerSpanIndex spans;
        if (!scrub_opts.ner_spans.empty()) {
            auto in = open_input(scrub_opts.ner_spans);
            spans = load_ner_spans(in);
        } else if (!scrub_opts.ner_endpoint.empty()) {
            EndpointConfig ep;
            ep.base_url = scrub_opts.ner_endpoint;
            for (const Session& s : corpus.sessions)
                for (const Message& m : s.messages)
                    spans[{s.id, m.index}] = fetch_ner_spans(ep, m.text);
        }
        auto [scrubbed, report] = scrub_corpus(corpus, rules, spans);
        save_corpus(scrubbed, scrub_opts.out);
        if (!scrub_opts.report.empty()) {
            auto out = open_output(scrub_opts.report);
            out << scrub_report_to_json(report).dump(2) << '\n';
        }
        write_run_meta(scrub_opts.out, "scrub", g,
                       {{"in", scrub_opts.in}, {"language", scrub_opts.language}});
        std::cout << scrub_report_to_json(report).dump(2) << '\n';
    }));

    // ---- curate ----
    auto* curate = app.add_subcommand("curate", "effectiveness filter + deterministic split");
    struct {
        std::string in, language = "he", out_train, out_eval;
        int min_ved = 4;
        std::size_t train = 0, eval = 0;
    } curate_opts;
    add_global_options(curate, g);
    curate->add_option("--in", curate_opts.in, "session JSONL")->required();
    curate->add_option("--language", curate_opts.language, "corpus language tag");
    curate->add_option("--min-ved", curate_opts.min_ved, "effectiveness threshold");
    curate->add_option("--train", curate_opts.train, "train session count")->required();
    curate->add_option("--eval", curate_opts.eval, "eval session count")->required();
    curate->add_option("--out-train", curate_opts.out_train, "train corpus JSONL");
    curate->add_option("--out-eval", curate_opts.out_eval, "eval corpus JSONL");
    curate->callback(guarded("curate", [&] {
        require_file(curate_opts.in, "corpus");
        curate_opts.out_train = resolve_out(g, curate_opts.out_train, "train.jsonl");
        curate_opts.out_eval = resolve_out(g, curate_opts.out_eval, "eval.jsonl");
        const Corpus corpus = load_corpus(curate_opts.in, curate_opts.language);
        const Corpus filtered = filter_by_ved(corpus, curate_opts.min_ved);
        CurationConfig cfg;
        cfg.min_ved = curate_opts.min_ved;
        cfg.train_sessions = curate_opts.train;
        cfg.eval_sessions = curate_opts.eval;
        cfg.seed = g.seed;
        auto [train, eval] = split(filtered, cfg);
        save_corpus(train, curate_opts.out_train);
        save_corpus(eval, curate_opts.out_eval);
        const json effective = {{"in", curate_opts.in},
                                {"min_ved", curate_opts.min_ved},
                                {"train", curate_opts.train},
                                {"eval", curate_opts.eval},
                                {"seed", g.seed}};
        write_run_meta(curate_opts.out_train, "curate", g, effective);
        std::cout << json({{"filtered_sessions", filtered.sessions.size()},
                           {"train_sessions", train.sessions.size()},
                           {"eval_sessions", eval.sessions.size()}})
                         .dump(2)
                  << '\n';
    }));

    // ---- export-sft ----
    auto* export_sft_cmd = app.add_subcommand("export-sft", "full-history sample expansion");
    struct {
        std::string in, language = "he", out, prompt_file;
        int min_ved = 4;
    } sft_opts;
    add_global_options(export_sft_cmd, g);
    export_sft_cmd->add_option("--in", sft_opts.in, "curated session JSONL")->required();
    export_sft_cmd->add_option("--language", sft_opts.language, "corpus language tag");
    export_sft_cmd->add_option("--out-file", sft_opts.out, "SFT sample JSONL");
    export_sft_cmd->add_option("--prompt-file", sft_opts.prompt_file,
                               "system prompt override (plain text)");
    export_sft_cmd->add_option("--min-ved", sft_opts.min_ved, "recorded in the export header");
    export_sft_cmd->callback(guarded("export-sft", [&] {
        require_file(sft_opts.in, "corpus");
        sft_opts.out = resolve_out(g, sft_opts.out, "sft.jsonl");
        const Corpus corpus = load_corpus(sft_opts.in, sft_opts.language);
        const std::string prompt = sft_opts.prompt_file.empty()
                                       ? default_system_prompt(sft_opts.language).text
                                       : trim(read_text_file(sft_opts.prompt_file));
        const auto samples = expand_corpus(corpus, prompt);
        SftMeta meta;
        meta.min_ved = sft_opts.min_ved;
        meta.seed = g.seed;
        const std::size_t written = export_sft_file(samples, sft_opts.out, meta);
        write_run_meta(sft_opts.out, "export-sft", g,
                       {{"in", sft_opts.in}, {"min_ved", sft_opts.min_ved}, {"seed", g.seed}});
        std::cout << json({{"samples_written", written}}).dump(2) << '\n';
    }));

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "deterministic synthetic corpus");
    struct {
        std::size_t sessions = 100;
        std::string language = "xx", out, labels_out, mix = "0.3,0.3,0.2,0.2";
        int min_len = 8, max_len = 24;
    } synth_opts;
    add_global_options(synth_cmd, g);
    synth_cmd->add_option("--sessions", synth_opts.sessions, "session count");
    synth_cmd->add_option("--language", synth_opts.language, "language tag for the corpus");
    synth_cmd->add_option("--out-file", synth_opts.out, "session JSONL");
    synth_cmd->add_option("--labels-out", synth_opts.labels_out, "gold strategy sidecar JSONL");
    synth_cmd->add_option("--mix", synth_opts.mix,
                          "Reflection,Prompting,Suggestion,Neutral fractions");
    synth_cmd->add_option("--min-len", synth_opts.min_len, "minimum messages per session");
    synth_cmd->add_option("--max-len", synth_opts.max_len, "maximum messages per session");
    synth_cmd->callback(guarded("synth", [&] {
        synth_opts.out = resolve_out(g, synth_opts.out, "synth_corpus.jsonl");
        synth_opts.labels_out = resolve_out(g, synth_opts.labels_out, "synth_gold.jsonl");
        SynthConfig cfg;
        cfg.n_sessions = synth_opts.sessions;
        cfg.seed = g.seed;
        cfg.language = synth_opts.language;
        cfg.strategy_mix = parse_mix(synth_opts.mix);
        cfg.min_session_length = synth_opts.min_len;
        cfg.max_session_length = synth_opts.max_len;
        const SynthCorpus synth = generate_corpus(cfg);
        save_corpus(synth.corpus, synth_opts.out);
        {
            auto out = open_output(synth_opts.labels_out);
            save_gold_labels(synth.gold, out);
        }
        write_run_meta(synth_opts.out, "synth", g,
                       {{"sessions", synth_opts.sessions},
                        {"mix", synth_opts.mix},
                        {"seed", g.seed}});
        std::cout << json({{"sessions", synth.corpus.sessions.size()},
                           {"gold_labels", synth.gold.size()}})
                         .dump(2)
                  << '\n';
    }));

    // ---- label-silver ----
    auto* silver = app.add_subcommand("label-silver", "zero-shot silver labels via endpoint");
    struct {
        std::string in, out, endpoint, token_env, model;
        double timeout = 30.0;
        int retries = 3;
    } silver_opts;
    add_global_options(silver, g);
    silver->add_option("--in", silver_opts.in, "utterance JSONL ({\"text\": ...})")->required();
    silver->add_option("--out-file", silver_opts.out, "labeled JSONL");
    silver->add_option("--endpoint", silver_opts.endpoint, "label endpoint URL")->required();
    silver->add_option("--token-env", silver_opts.token_env, "env var holding the bearer token");
    silver->add_option("--timeout", silver_opts.timeout, "request timeout seconds");
    silver->add_option("--retries", silver_opts.retries, "retries per request");
    silver->callback(guarded("label-silver", [&] {
        require_file(silver_opts.in, "utterance file");
        silver_opts.out = resolve_out(g, silver_opts.out, "labeled.jsonl");
        const auto texts = load_text_records(silver_opts.in);
        EndpointConfig ep;
        ep.base_url = silver_opts.endpoint;
        ep.auth_token_env = silver_opts.token_env;
        ep.timeout_s = silver_opts.timeout;
        ep.max_retries = silver_opts.retries;
        const SilverLabelResult result = silver_label_remote(texts, ep);
        for (const std::string& w : result.warnings) std::cerr << w << '\n';
        {
            auto out = open_output(silver_opts.out);
            save_labeled(result.labeled, out);
        }
        write_run_meta(silver_opts.out, "label-silver", g, {{"in", silver_opts.in}});
        std::cout << json({{"labeled", result.labeled.size()},
                           {"warnings", result.warnings.size()}})
                         .dump(2)
                  << '\n';
    }));

    // ---- train-classifier ----
    auto* train_cls = app.add_subcommand("train-classifier", "hashed-feature strategy classifier");
    struct {
        std::string train, val, out;
        double lr = 0.1;
        int batch = 64, epochs = 15, patience = 5, hash_bits = 18;
    } cls_opts;
    add_global_options(train_cls, g);
    train_cls->add_option("--train", cls_opts.train, "labeled JSONL")->required();
    train_cls->add_option("--val", cls_opts.val, "labeled JSONL")->required();
    train_cls->add_option("--out-file", cls_opts.out, "model file");
    train_cls->add_option("--lr", cls_opts.lr, "learning rate");
    train_cls->add_option("--batch", cls_opts.batch, "mini-batch size");
    train_cls->add_option("--epochs", cls_opts.epochs, "maximum epochs");
    train_cls->add_option("--patience", cls_opts.patience, "early-stopping patience");
    train_cls->add_option("--hash-bits", cls_opts.hash_bits, "feature hash dimension exponent");
    train_cls->callback(guarded("train-classifier", [&] {
        require_file(cls_opts.train, "training set");
        cls_opts.out = resolve_out(g, cls_opts.out, "classifier.bin");
        require_file(cls_opts.val, "validation set");
        auto train_in = open_input(cls_opts.train);
        auto val_in = open_input(cls_opts.val);
        const auto train_set = load_labeled(train_in);
        const auto val_set = load_labeled(val_in);
        TrainConfig cfg;
        cfg.features.hash_bits = cls_opts.hash_bits;
        cfg.learning_rate = cls_opts.lr;
        cfg.batch_size = cls_opts.batch;
        cfg.max_epochs = cls_opts.epochs;
        cfg.patience = cls_opts.patience;
        cfg.seed = g.seed;
        const ClassifierModel model = train_classifier(train_set, val_set, cfg);
        save_classifier_file(model, cls_opts.out);
        write_run_meta(cls_opts.out, "train-classifier", g,
                       {{"train", cls_opts.train},
                        {"val", cls_opts.val},
                        {"lr", cls_opts.lr},
                        {"batch", cls_opts.batch},
                        {"epochs", cls_opts.epochs},
                        {"seed", g.seed}});
        std::cout << json({{"epochs_run", model.meta.epochs_run},
                           {"best_epoch", model.meta.best_epoch},
                           {"best_val_macro_f1", model.meta.best_val_macro_f1}})
                         .dump(2)
                  << '\n';
    }));

    // ---- eval-classifier ----
    auto* eval_cls = app.add_subcommand("eval-classifier", "score a classifier on a gold set");
    struct {
        std::string model, gold, out;
    } ecls_opts;
    add_global_options(eval_cls, g);
    eval_cls->add_option("--model", ecls_opts.model, "model file")->required();
    eval_cls->add_option("--gold", ecls_opts.gold, "labeled JSONL")->required();
    eval_cls->add_option("--out-file", ecls_opts.out, "write the eval report here");
    eval_cls->callback(guarded("eval-classifier", [&] {
        require_file(ecls_opts.model, "model");
        require_file(ecls_opts.gold, "gold set");
        const ClassifierModel model = load_classifier_file(ecls_opts.model);
        auto gold_in = open_input(ecls_opts.gold);
        const auto gold = load_labeled(gold_in);
        const auto report = evaluate_classifier(model, gold);
        const json rj = classifier_report_to_json(report);
        std::cout << rj.dump(2) << '\n';
        if (!ecls_opts.out.empty()) {
            auto out = open_output(ecls_opts.out);
            out << rj.dump(2) << '\n';
            write_run_meta(ecls_opts.out, "eval-classifier", g,
                           {{"model", ecls_opts.model}, {"gold", ecls_opts.gold}});
        }
    }));

    // ---- train-lm ----
    auto* train_lm_cmd = app.add_subcommand("train-lm", "counselor-style n-gram LM");
    struct {
        std::string in, language = "he", out, from = "corpus", smoothing = "kn";
        int order = 3, min_count = 2;
        double add_k = 1.0, discount = 0.75;
    } lm_opts;
    add_global_options(train_lm_cmd, g);
    train_lm_cmd->add_option("--in", lm_opts.in, "corpus or utterance JSONL")->required();
    train_lm_cmd->add_option("--language", lm_opts.language, "corpus language tag");
    train_lm_cmd->add_option("--out-file", lm_opts.out, "model file");
    train_lm_cmd->add_option("--from", lm_opts.from, "corpus (counselor side) | utterances")
        ->check(CLI::IsMember({"corpus", "utterances"}));
    train_lm_cmd->add_option("--order", lm_opts.order, "n-gram order");
    train_lm_cmd->add_option("--min-count", lm_opts.min_count, "UNK threshold");
    train_lm_cmd->add_option("--smoothing", lm_opts.smoothing, "kn | addk")
        ->check(CLI::IsMember({"kn", "addk"}));
    train_lm_cmd->add_option("--add-k", lm_opts.add_k, "additive constant for addk");
    train_lm_cmd->add_option("--discount", lm_opts.discount, "Kneser-Ney discount");
    train_lm_cmd->callback(guarded("train-lm", [&] {
        require_file(lm_opts.in, "input");
        lm_opts.out = resolve_out(g, lm_opts.out, "lm.bin");
        std::vector<std::string> utterances;
        if (lm_opts.from == "corpus") {
            utterances = counselor_utterances(load_corpus(lm_opts.in, lm_opts.language));
        } else {
            utterances = load_text_records(lm_opts.in);
        }
        LmConfig cfg;
        cfg.order = lm_opts.order;
        cfg.min_count = lm_opts.min_count;
        cfg.smoothing = lm_opts.smoothing == "addk" ? Smoothing::AddK : Smoothing::InterpolatedKN;
        cfg.add_k = lm_opts.add_k;
        cfg.discount = lm_opts.discount;
        const NgramLm lm = train_lm(utterances, cfg);
        lm.save_file(lm_opts.out);
        write_run_meta(lm_opts.out, "train-lm", g,
                       {{"in", lm_opts.in},
                        {"order", lm_opts.order},
                        {"min_count", lm_opts.min_count},
                        {"smoothing", lm_opts.smoothing}});
        std::cout << json({{"utterances", utterances.size()}, {"vocab_size", lm.vocab_size()}})
                         .dump(2)
                  << '\n';
    }));

    // ---- generate ----
    auto* generate = app.add_subcommand("generate", "candidate responses: endpoint or persona");
    struct {
        std::string sft, out, endpoint, model, token_env, persona, prompt_file;
        double timeout = 60.0;
        int retries = 3, parallel = 4;
    } gen_opts;
    add_global_options(generate, g);
    generate->add_option("--sft", gen_opts.sft, "SFT sample JSONL")->required();
    generate->add_option("--out-file", gen_opts.out, "generation JSONL");
    generate->add_option("--endpoint", gen_opts.endpoint, "chat-completion endpoint URL");
    generate->add_option("--model", gen_opts.model, "model name sent to the endpoint");
    generate->add_option("--token-env", gen_opts.token_env, "env var holding the bearer token");
    generate->add_option("--persona", gen_opts.persona, "offline persona: aligned | generic")
        ->check(CLI::IsMember({"aligned", "generic"}));
    generate->add_option("--prompt-file", gen_opts.prompt_file, "system prompt override");
    generate->add_option("--timeout", gen_opts.timeout, "request timeout seconds");
    generate->add_option("--retries", gen_opts.retries, "retries per request");
    generate->add_option("--parallel", gen_opts.parallel, "max concurrent requests");
    generate->callback(guarded("generate", [&] {
        require_file(gen_opts.sft, "SFT file");
        gen_opts.out = resolve_out(g, gen_opts.out, "generations.jsonl");
        if (gen_opts.endpoint.empty() == gen_opts.persona.empty())
            throw std::invalid_argument("need exactly one of --endpoint or --persona");
        const auto [meta, samples] = load_sft_file(gen_opts.sft);
        (void)meta;
        std::vector<GenerationRecord> records;
        if (!gen_opts.persona.empty()) {
            records = generate_responses(persona_from_string(gen_opts.persona), samples, g.seed);
        } else {
            EndpointConfig ep;
            ep.base_url = gen_opts.endpoint;
            ep.model_name = gen_opts.model;
            ep.auth_token_env = gen_opts.token_env;
            ep.timeout_s = gen_opts.timeout;
            ep.max_retries = gen_opts.retries;
            // outbound concurrency is capped by the global --jobs bound
            ep.max_parallel = std::max(1, std::min(gen_opts.parallel, static_cast<int>(g.jobs)));
            const std::string language = samples.empty() ? "" : samples.front().language;
            SystemPrompt prompt = default_system_prompt(language);
            if (!gen_opts.prompt_file.empty())
                prompt.text = trim(read_text_file(gen_opts.prompt_file));
            GenerateResult result = generate_remote(samples, ep, prompt, g.allow_partial);
            for (const std::string& id : result.failed_ids)
                std::cerr << "generation failed: " << id << '\n';
            records = std::move(result.records);
        }
        save_generations_file(records, gen_opts.out);
        write_run_meta(gen_opts.out, "generate", g,
                       {{"sft", gen_opts.sft},
                        {"persona", gen_opts.persona},
                        {"endpoint", gen_opts.endpoint},
                        {"model", gen_opts.model},
                        {"seed", g.seed}});
        std::cout << json({{"generations", records.size()}}).dump(2) << '\n';
    }));

    // ---- evaluate ----
    auto* evaluate = app.add_subcommand("evaluate", "metric suite over aligned generations");
    struct {
        std::string sft, generations, classifier, lm, out, system, embed_endpoint, embed_file;
        std::uint64_t embed_seed = 0;
        std::size_t embed_dim = 64;
    } eval_opts;
    add_global_options(evaluate, g);
    evaluate->add_option("--sft", eval_opts.sft, "SFT sample JSONL")->required();
    evaluate->add_option("--generations", eval_opts.generations, "generation JSONL")->required();
    evaluate->add_option("--classifier", eval_opts.classifier, "strategy classifier file")
        ->required();
    evaluate->add_option("--lm", eval_opts.lm, "counselor LM file")->required();
    evaluate->add_option("--out-file", eval_opts.out, "metric suite JSON");
    evaluate->add_option("--system", eval_opts.system, "system name override");
    evaluate->add_option("--embed-endpoint", eval_opts.embed_endpoint,
                         "HTTP embedding provider (default: deterministic hash)");
    evaluate->add_option("--embed-file", eval_opts.embed_file,
                         "token<TAB>v1,...,vd vector file provider");
    evaluate->add_option("--embed-seed", eval_opts.embed_seed, "hash provider seed");
    evaluate->add_option("--embed-dim", eval_opts.embed_dim, "hash provider dimension");
    evaluate->callback(guarded("evaluate", [&] {
        require_file(eval_opts.sft, "SFT file");
        eval_opts.out = resolve_out(g, eval_opts.out, "result.json");
        require_file(eval_opts.generations, "generations");
        require_file(eval_opts.classifier, "classifier model");
        require_file(eval_opts.lm, "LM model");

        const auto [meta, samples] = load_sft_file(eval_opts.sft);
        (void)meta;
        const auto generations = load_generations_file(eval_opts.generations);
        const AlignedPairs aligned = align(samples, generations, g.allow_partial);
        for (const std::string& id : aligned.extra_ids)
            std::cerr << "ignoring extra generation: " << id << '\n';
        const ClassifierModel classifier = load_classifier_file(eval_opts.classifier);
        const NgramLm lm = NgramLm::load_file(eval_opts.lm);

        HashEmbeddingProvider hash_provider(eval_opts.embed_seed, eval_opts.embed_dim);
        std::unique_ptr<EmbeddingProvider> alt_provider;
        EmbeddingProvider* provider = &hash_provider;
        if (!eval_opts.embed_endpoint.empty() && !eval_opts.embed_file.empty())
            throw std::invalid_argument("choose one of --embed-endpoint or --embed-file");
        if (!eval_opts.embed_endpoint.empty()) {
            EndpointConfig ep;
            ep.base_url = eval_opts.embed_endpoint;
            alt_provider = std::make_unique<RemoteEmbeddingProvider>(ep);
            provider = alt_provider.get();
        } else if (!eval_opts.embed_file.empty()) {
            require_file(eval_opts.embed_file, "embedding vector file");
            alt_provider = std::make_unique<FileEmbeddingProvider>(
                FileEmbeddingProvider::from_file(eval_opts.embed_file, eval_opts.embed_seed));
            provider = alt_provider.get();
        }
        EvalBundle bundle{&classifier, &lm, provider, g.jobs};
        MetricSuiteResult result = evaluate_run(aligned.samples, aligned.records, bundle);
        if (!eval_opts.system.empty()) result.system_name = eval_opts.system;
        {
            auto out = open_output(eval_opts.out);
            out << metric_result_to_json(result).dump(2) << '\n';
        }
        write_run_meta(eval_opts.out, "evaluate", g,
                       {{"sft", eval_opts.sft},
                        {"generations", eval_opts.generations},
                        {"classifier", eval_opts.classifier},
                        {"lm", eval_opts.lm},
                        {"embed_seed", eval_opts.embed_seed},
                        {"embed_dim", eval_opts.embed_dim}});
        std::cout << json({{"system", result.system_name},
                           {"n_samples", result.aggregate.n_samples},
                           {"sim", result.aggregate.sim},
                           {"corpus_bleu", result.aggregate.corpus_bleu}})
                         .dump(2)
                  << '\n';
    }));

    // ---- stats ----
    auto* stats_cmd = app.add_subcommand("stats", "paired Wilcoxon + Holm protocol");
    struct {
        std::string care, out, quintile_metric = "bertscore_f1", quintile_out;
        std::vector<std::string> baselines;
        double alpha = 0.05;
    } stats_opts;
    add_global_options(stats_cmd, g);
    stats_cmd->add_option("--care", stats_opts.care, "metric suite JSON of the adapted system")
        ->required();
    stats_cmd->add_option("--baseline", stats_opts.baselines, "metric suite JSON (repeatable)")
        ->required();
    stats_cmd->add_option("--alpha", stats_opts.alpha, "significance level");
    stats_cmd->add_option("--out-file", stats_opts.out, "protocol report JSON");
    stats_cmd->add_option("--quintile-metric", stats_opts.quintile_metric,
                          "per-sample metric for the quintile report");
    stats_cmd->add_option("--quintile-out", stats_opts.quintile_out, "quintile report JSON");
    stats_cmd->callback(guarded("stats", [&] {
        require_file(stats_opts.care, "care result");
        stats_opts.out = resolve_out(g, stats_opts.out, "protocol.json");
        for (const auto& b : stats_opts.baselines) require_file(b, "baseline result");
        auto load_result = [](const std::string& path) {
            auto in = open_input(path);
            json j;
            in >> j;
            return metric_result_from_json(j);
        };
        const MetricSuiteResult care = load_result(stats_opts.care);
        std::vector<MetricSuiteResult> baselines;
        for (const auto& b : stats_opts.baselines) baselines.push_back(load_result(b));

        const ProtocolReport protocol = run_protocol(care, baselines, stats_opts.alpha);
        {
            auto out = open_output(stats_opts.out);
            out << protocol_report_to_json(protocol).dump(2) << '\n';
        }
        if (!stats_opts.quintile_out.empty()) {
            std::map<std::string, QuintileRecord> by_id;
            for (const auto& m : care.samples) {
                QuintileRecord rec;
                rec.sample_id = m.sample_id;
                rec.input_token_length = m.input_token_length;
                by_id[m.sample_id] = std::move(rec);
            }
            auto add_scores = [&](const MetricSuiteResult& r) {
                for (const auto& m : r.samples) {
                    const auto v = per_sample_metric(m, stats_opts.quintile_metric);
                    if (v) by_id.at(m.sample_id).scores[r.system_name] = *v;
                }
            };
            add_scores(care);
            for (const auto& b : baselines) add_scores(b);
            std::vector<QuintileRecord> records;
            for (auto& [_, rec] : by_id) records.push_back(std::move(rec));
            const QuintileReport quintiles =
                quintile_sensitivity(std::move(records), stats_opts.quintile_metric);
            auto out = open_output(stats_opts.quintile_out);
            out << quintile_report_to_json(quintiles).dump(2) << '\n';
        }
        write_run_meta(stats_opts.out, "stats", g,
                       {{"care", stats_opts.care},
                        {"baselines", stats_opts.baselines},
                        {"alpha", stats_opts.alpha}});
        std::size_t rejections = 0, comparisons = 0;
        for (const auto& family : protocol.families)
            for (const auto& c : family.comparisons)
                if (c.error.empty()) {
                    ++comparisons;
                    if (c.reject) ++rejections;
                }
        std::cout << json({{"comparisons", comparisons}, {"rejections", rejections}}).dump(2)
                  << '\n';
    }));

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "render tables and plot data");
    struct {
        std::vector<std::string> results;
        std::string protocol, quintiles, out_dir = "reports", formats = "json,csv,markdown";
    } report_opts;
    add_global_options(report_cmd, g);
    report_cmd->add_option("--result", report_opts.results, "metric suite JSON (repeatable)")
        ->required();
    report_cmd->add_option("--protocol", report_opts.protocol, "protocol report JSON");
    report_cmd->add_option("--quintiles", report_opts.quintiles, "quintile report JSON");
    report_cmd->add_option("--out-dir", report_opts.out_dir, "report directory");
    report_cmd->add_option("--formats", report_opts.formats, "comma list of json,csv,markdown");
    report_cmd->callback(guarded("report", [&] {
        for (const auto& r : report_opts.results) require_file(r, "result");
        if (!report_opts.protocol.empty()) require_file(report_opts.protocol, "protocol report");
        if (!report_opts.quintiles.empty()) require_file(report_opts.quintiles, "quintile report");

        ReportBundle bundle;
        for (const auto& path : report_opts.results) {
            auto in = open_input(path);
            json j;
            in >> j;
            bundle.results.push_back(metric_result_from_json(j));
        }
        if (!bundle.results.empty()) bundle.language = bundle.results.front().language;
        json effective = {{"results", report_opts.results},
                          {"protocol", report_opts.protocol},
                          {"seed", g.seed}};
        if (!report_opts.protocol.empty()) {
            auto in = open_input(report_opts.protocol);
            json j;
            in >> j;
            // keep the persisted numbers; only surface shape is rebuilt
            ProtocolReport protocol;
            protocol.care_system = j.at("care_system").get<std::string>();
            protocol.alpha = j.at("alpha").get<double>();
            protocol.note = j.value("note", protocol.note);
            for (const auto& fj : j.at("families")) {
                ProtocolFamily family;
                family.metric = fj.at("metric").get<std::string>();
                for (const auto& cj : fj.at("comparisons")) {
                    ProtocolComparison c;
                    c.baseline = cj.at("baseline").get<std::string>();
                    c.skipped_pairs = cj.value("skipped_pairs", std::size_t(0));
                    if (cj.contains("error")) {
                        c.error = cj.at("error").get<std::string>();
                    } else {
                        c.w = cj.at("W").get<double>();
                        c.n_effective = cj.at("n_effective").get<std::size_t>();
                        c.method = cj.at("method").get<std::string>();
                        c.p_raw = cj.at("p_raw").get<double>();
                        c.p_holm = cj.at("p_holm").get<double>();
                        c.reject = cj.at("reject").get<bool>();
                    }
                    family.comparisons.push_back(std::move(c));
                }
                protocol.families.push_back(std::move(family));
            }
            bundle.protocol = std::move(protocol);
        }
        if (!report_opts.quintiles.empty()) {
            auto in = open_input(report_opts.quintiles);
            json j;
            in >> j;
            QuintileReport q;
            q.metric = j.at("metric").get<std::string>();
            for (const auto& bj : j.at("bins")) {
                QuintileBin bin;
                bin.size = bj.at("size").get<std::size_t>();
                bin.min_length = bj.at("min_length").get<std::size_t>();
                bin.max_length = bj.at("max_length").get<std::size_t>();
                for (const auto& [system, v] : bj.at("mean_scores").items())
                    bin.mean_scores[system] = v.get<double>();
                q.bins.push_back(std::move(bin));
            }
            bundle.quintiles.push_back(std::move(q));
        }
        bundle.run_metadata = {{"tool", "counseval"},
                               {"version", kVersion},
                               {"seed", g.seed},
                               {"config_hash", config_hash_hex(effective)}};

        std::set<std::string> formats;
        std::stringstream ss(report_opts.formats);
        std::string fmt;
        while (std::getline(ss, fmt, ',')) formats.insert(trim(fmt));
        const auto written = emit_report(bundle, report_opts.out_dir, formats);
        std::cout << json({{"files", written}}).dump(2) << '\n';
    }));

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        const auto merged = merge_config_args(args, subcommand_names);
        std::vector<const char*> cargs = {argv[0]};
        for (const auto& a : merged) cargs.push_back(a.c_str());
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help and friends
        std::cerr << json({{"error", e.what()}, {"where", active.empty() ? "cli" : active}}).dump()
                  << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json({{"error", e.what()}, {"where", active.empty() ? "cli" : active}}).dump()
                  << '\n';
        return 1;
    }
    return exit_code;
}
