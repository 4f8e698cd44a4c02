#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return COUNSEVAL_CLI_PATH; }

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("counseval_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& stdout_to = "",
        const std::string& stderr_to = "") {
    std::string cmd = std::string(cli_path()) + " " + args;
    if (!stdout_to.empty()) cmd += " >" + stdout_to;
    if (!stderr_to.empty()) cmd += " 2>" + stderr_to;
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("full pipeline: synth -> curate -> export-sft -> generate -> evaluate -> stats -> report") {
    TempDir dir;
    const std::string null_out = dir.file("stdout.txt");

    // synth
    REQUIRE(run("synth --sessions 60 --seed 11 --language xx --out-file " + dir.file("corpus.jsonl") +
                " --labels-out " + dir.file("gold.jsonl"),
                null_out) == 0);
    REQUIRE(fs::exists(dir.file("corpus.jsonl")));
    REQUIRE(fs::exists(dir.file("corpus.jsonl.meta.json")));

    // ingest (stats sanity)
    REQUIRE(run("ingest --in " + dir.file("corpus.jsonl") + " --language xx --stats-out " +
                dir.file("stats.json"),
                null_out) == 0);
    const auto stats = nlohmann::json::parse(slurp(dir.file("stats.json")));
    CHECK(stats.at("n_sessions") == 60);

    // scrub is part of step 1; on the synthetic corpus it is a no-op pass
    REQUIRE(run("scrub --in " + dir.file("corpus.jsonl") + " --language xx --out-file " +
                dir.file("scrubbed.jsonl") + " --report " + dir.file("scrub_report.json"),
                null_out) == 0);

    // curate: 40 train / 15 eval
    REQUIRE(run("curate --in " + dir.file("scrubbed.jsonl") +
                " --language xx --min-ved 4 --train 40 --eval 15 --seed 11 --out-train " +
                dir.file("train.jsonl") + " --out-eval " + dir.file("eval.jsonl"),
                null_out) == 0);

    // export-sft for both splits
    REQUIRE(run("export-sft --in " + dir.file("train.jsonl") + " --language xx --out-file " +
                dir.file("train_sft.jsonl") + " --seed 11",
                null_out) == 0);
    REQUIRE(run("export-sft --in " + dir.file("eval.jsonl") + " --language xx --out-file " +
                dir.file("eval_sft.jsonl") + " --seed 11",
                null_out) == 0);

    // classifier training data from the synth gold sidecar via rule-free join:
    // the pipeline harness trains on gold-labeled counselor utterances
    {
        // build labeled train/val JSONL from corpus + sidecar with jq-free C++
        const auto corpus = nlohmann::json::array();
        (void)corpus;
        std::ifstream cin(dir.file("train.jsonl"));
        std::map<std::pair<std::string, int>, std::string> gold;
        {
            std::ifstream gin(dir.file("gold.jsonl"));
            std::string line;
            while (std::getline(gin, line)) {
                if (line.empty()) continue;
                const auto j = nlohmann::json::parse(line);
                gold[{j.at("session_id"), j.at("message_index")}] = j.at("label");
            }
        }
        std::ofstream train_out(dir.file("labeled_train.jsonl"));
        std::ofstream val_out(dir.file("labeled_val.jsonl"));
        std::string line;
        std::size_t k = 0;
        while (std::getline(cin, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            for (const auto& m : j.at("messages")) {
                if (m.at("role") != "counselor") continue;
                auto it = gold.find({j.at("id"), m.at("index")});
                if (it == gold.end()) continue;
                const nlohmann::json rec = {
                    {"text", m.at("text")}, {"label", it->second}, {"source", "gold"}};
                ((k++ % 5 == 0) ? val_out : train_out) << rec.dump() << '\n';
            }
        }
    }
    REQUIRE(run("train-classifier --train " + dir.file("labeled_train.jsonl") + " --val " +
                dir.file("labeled_val.jsonl") + " --out-file " + dir.file("classifier.bin") +
                " --hash-bits 14 --seed 11",
                null_out) == 0);

    // counselor LM from the train split
    REQUIRE(run("train-lm --in " + dir.file("train.jsonl") + " --language xx --out-file " +
                dir.file("lm.bin") + " --order 3 --min-count 1",
                null_out) == 0);

    // personas stand in for remote generation
    REQUIRE(run("generate --sft " + dir.file("eval_sft.jsonl") +
                " --persona aligned --seed 11 --out-file " + dir.file("gen_aligned.jsonl"),
                null_out) == 0);
    REQUIRE(run("generate --sft " + dir.file("eval_sft.jsonl") +
                " --persona generic --seed 11 --out-file " + dir.file("gen_generic.jsonl"),
                null_out) == 0);

    // identity run exercises the metric maxima end to end
    {
        std::ifstream in(dir.file("eval_sft.jsonl"));
        std::ofstream out(dir.file("gen_identity.jsonl"));
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (j.contains("_meta")) continue;
            out << nlohmann::json({{"sample_id", j.at("sample_id")},
                                   {"system", "identity"},
                                   {"text", j.at("target")},
                                   {"latency_ms", nullptr}})
                       .dump()
                << '\n';
        }
    }

    for (const char* sys : {"aligned", "generic", "identity"}) {
        REQUIRE(run(std::string("evaluate --sft ") + dir.file("eval_sft.jsonl") +
                    " --generations " + dir.file(std::string("gen_") + sys + ".jsonl") +
                    " --classifier " + dir.file("classifier.bin") + " --lm " + dir.file("lm.bin") +
                    " --out-file " + dir.file(std::string("result_") + sys + ".json") +
                    " --system " + sys,
                    null_out) == 0);
    }

    // identity run attains the maxima
    const auto identity = nlohmann::json::parse(slurp(dir.file("result_identity.json")));
    CHECK(identity.at("aggregate").at("sim") == 1.0);
    CHECK(identity.at("aggregate").at("corpus_bleu").get<double>() == 100.0);

    // stats: aligned (care analogue) vs generic baseline
    REQUIRE(run("stats --care " + dir.file("result_aligned.json") + " --baseline " +
                dir.file("result_generic.json") + " --alpha 0.05 --out-file " +
                dir.file("protocol.json") + " --quintile-out " + dir.file("quintiles.json"),
                null_out) == 0);
    const auto protocol = nlohmann::json::parse(slurp(dir.file("protocol.json")));
    CHECK(protocol.at("families").size() == 7);
    const auto quintiles = nlohmann::json::parse(slurp(dir.file("quintiles.json")));
    CHECK(quintiles.at("bins").size() == 5);

    // report renders all three formats without recomputation
    REQUIRE(run("report --result " + dir.file("result_identity.json") + " --result " +
                dir.file("result_aligned.json") + " --result " + dir.file("result_generic.json") +
                " --protocol " + dir.file("protocol.json") + " --quintiles " +
                dir.file("quintiles.json") + " --out-dir " + dir.file("reports") +
                " --formats json,csv,markdown",
                null_out) == 0);
    REQUIRE(fs::exists(dir.file("reports/report.md")));
    REQUIRE(fs::exists(dir.file("reports/linguistic_metrics.csv")));
    REQUIRE(fs::exists(dir.file("reports/linguistic_metrics.json")));

    // the identity row shows BLEU at its maximum
    const std::string md = slurp(dir.file("reports/report.md"));
    CHECK(md.find("| identity |") != std::string::npos);
    CHECK(md.find("100.0") != std::string::npos);

    // CSV numbers re-parse to exactly the JSON values
    const auto table = nlohmann::json::parse(slurp(dir.file("reports/linguistic_metrics.json")));
    const std::string csv = slurp(dir.file("reports/linguistic_metrics.csv"));
    std::istringstream csv_in(csv);
    std::string header, row;
    std::getline(csv_in, header);
    std::size_t row_idx = 0;
    while (std::getline(csv_in, row)) {
        std::stringstream cells(row);
        std::string system, r1, r2, rl, bleu;
        std::getline(cells, system, ',');
        std::getline(cells, r1, ',');
        std::getline(cells, r2, ',');
        std::getline(cells, rl, ',');
        std::getline(cells, bleu, ',');
        const auto& jrow = table.at("rows").at(row_idx++);
        CHECK(std::stod(r1) == jrow.at("rouge1_f1").get<double>());
        CHECK(std::stod(bleu) == jrow.at("corpus_bleu").get<double>());
    }
    CHECK(row_idx == 3);
}

TEST_CASE("evaluate without a generations file fails with machine-readable JSON") {
    TempDir dir;
    const int code = run("evaluate --sft missing.jsonl --generations nope.jsonl --classifier x "
                         "--lm y --out-file " +
                             dir.file("r.json"),
                         dir.file("out.txt"), dir.file("err.txt"));
    REQUIRE(code != 0);
    const auto err = nlohmann::json::parse(slurp(dir.file("err.txt")));
    CHECK(err.contains("error"));
    CHECK(err.at("where") == "evaluate");
}

TEST_CASE("config file values apply and explicit flags win") {
    TempDir dir;
    {
        std::ofstream cfg(dir.file("config.json"));
        cfg << nlohmann::json({{"synth", {{"sessions", 7}, {"language", "cfg"}}},
                               {"global", {{"seed", 5}}}})
                   .dump();
    }
    REQUIRE(run("synth --config " + dir.file("config.json") + " --language flagged --out-file " +
                dir.file("c.jsonl") + " --labels-out " + dir.file("g.jsonl"),
                dir.file("stdout.json")) == 0);
    const auto summary = nlohmann::json::parse(slurp(dir.file("stdout.json")));
    CHECK(summary.at("sessions") == 7); // from config
    // the flag overrode the config language
    std::ifstream in(dir.file("c.jsonl"));
    std::string first;
    std::getline(in, first);
    CHECK(nlohmann::json::parse(first).at("language") == "flagged");
}

TEST_CASE("--out directs default-named outputs") {
    TempDir dir;
    REQUIRE(run("synth --sessions 5 --seed 3 --out " + dir.file("artifacts"),
                dir.file("null.txt")) == 0);
    CHECK(fs::exists(dir.file("artifacts/synth_corpus.jsonl")));
    CHECK(fs::exists(dir.file("artifacts/synth_gold.jsonl")));
    CHECK(fs::exists(dir.file("artifacts/synth_corpus.jsonl.meta.json")));
}

TEST_CASE("identical seed and config give byte-identical outputs") {
    TempDir dir;
    for (const char* tag : {"a", "b"}) {
        REQUIRE(run(std::string("synth --sessions 20 --seed 99 --out-file ") +
                    dir.file(std::string("corpus_") + tag + ".jsonl") + " --labels-out " +
                    dir.file(std::string("gold_") + tag + ".jsonl"),
                    dir.file("null.txt")) == 0);
        REQUIRE(run(std::string("export-sft --in ") + dir.file(std::string("corpus_") + tag + ".jsonl") +
                    " --language xx --seed 99 --out-file " +
                    dir.file(std::string("sft_") + tag + ".jsonl"),
                    dir.file("null.txt")) == 0);
    }
    CHECK(slurp(dir.file("corpus_a.jsonl")) == slurp(dir.file("corpus_b.jsonl")));
    CHECK(slurp(dir.file("gold_a.jsonl")) == slurp(dir.file("gold_b.jsonl")));
    CHECK(slurp(dir.file("sft_a.jsonl")) == slurp(dir.file("sft_b.jsonl")));
    CHECK(slurp(dir.file("corpus_a.jsonl.meta.json")) ==
          slurp(dir.file("corpus_b.jsonl.meta.json")));
}
