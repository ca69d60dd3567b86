#include <doctest.h>
#include <pybind11/embed.h>

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "healer/bench.hpp"
#include "healer/errors.hpp"
#include "test_support.hpp"

using healer::BenchmarkInstance;
using healer::Grouping;
using healer::HealerConfig;
using healer::PythonRuntime;
using healer::RunResult;
using nlohmann::json;

namespace {

HealerConfig mini_config() {
    HealerConfig cfg;
    cfg.backend.backend = healer::BackendKind::STUB;
    cfg.backend.stub_rules_path =
        (testsupport::data_dir() / "stub_rules_mini.json").string();
    return cfg;
}

std::vector<BenchmarkInstance> mini_corpus() {
    return healer::load_corpus(testsupport::data_dir() / "mini_corpus.jsonl");
}

RunResult synthetic(const std::string& id, bool proceeded, bool correct,
                    const std::string& error_type = "") {
    RunResult result;
    result.program_id = id;
    result.proceeded = proceeded;
    result.correct = correct;
    if (!error_type.empty()) {
        healer::HealingTrace trace;
        trace.error_type = error_type;
        trace.verdict = healer::Verdict::HEALED;
        result.traces.push_back(std::move(trace));
    }
    return result;
}

}  // namespace

TEST_CASE("normalize_output ignores trailing whitespace, not leading") {
    CHECK(healer::normalize_output("a \nb\t\n") == "a\nb");
    CHECK(healer::normalize_output("a\r\nb\r\n") == "a\nb");
    CHECK(healer::normalize_output("a\nb\n\n\n") == "a\nb");
    CHECK(healer::normalize_output("a\nb") == "a\nb");
    CHECK(healer::normalize_output("") == "");
    CHECK(healer::normalize_output("\n\n") == "");
    CHECK(healer::normalize_output("  a") == "  a");      // leading kept
    CHECK(healer::normalize_output("a\n\nb\n") == "a\n\nb");  // interior kept
    CHECK(healer::normalize_output("x \n") ==
          healer::normalize_output("x"));
}

TEST_CASE("load_corpus reads instances and skips blank lines") {
    testsupport::TempDir tmp;
    auto path = tmp.path() / "corpus.jsonl";
    {
        std::ofstream out(path);
        out << R"({"id": "b/1", "source": "print(1)\n", "stdin": "", "expected_stdout": "1\n"})"
            << "\n\n"
            << R"({"id": "b/2", "source": "print(2)\n", "stdin": "x", "expected_stdout": "2\n", "error_type": "NameError"})"
            << "\n";
    }
    auto corpus = healer::load_corpus(path);
    REQUIRE(corpus.size() == 2);
    CHECK(corpus[0].id == "b/1");
    CHECK(corpus[0].source == "print(1)\n");
    CHECK(corpus[0].stdin_payload.empty());
    CHECK_FALSE(corpus[0].error_type_hint.has_value());
    CHECK(corpus[1].stdin_payload == "x");
    CHECK(corpus[1].error_type_hint == "NameError");
}

TEST_CASE("load_corpus reports the offending line") {
    testsupport::TempDir tmp;
    auto path = tmp.path() / "corpus.jsonl";
    {
        std::ofstream out(path);
        out << R"({"id": "a", "source": "", "stdin": "", "expected_stdout": ""})"
            << "\n{not json\n";
    }
    try {
        healer::load_corpus(path);
        FAIL("expected CorpusParseError");
    } catch (const healer::CorpusParseError& e) {
        CHECK(e.line_no == 2);
        CHECK(std::string(e.what()).find("(line 2)") != std::string::npos);
    }

    auto missing = tmp.path() / "missing_field.jsonl";
    {
        std::ofstream out(missing);
        out << R"({"id": "a", "source": ""})" << "\n";
    }
    CHECK_THROWS_AS(healer::load_corpus(missing), healer::CorpusParseError);
    CHECK_THROWS_AS(healer::load_corpus(tmp.path() / "nope.jsonl"),
                    healer::IoError);
}

TEST_CASE("load_corpus rejects duplicate ids") {
    testsupport::TempDir tmp;
    auto path = tmp.path() / "corpus.jsonl";
    {
        std::ofstream out(path);
        for (int i = 0; i < 2; ++i)
            out << R"({"id": "dup", "source": "", "stdin": "", "expected_stdout": ""})"
                << "\n";
    }
    try {
        healer::load_corpus(path);
        FAIL("expected DuplicateIdError");
    } catch (const healer::DuplicateIdError& e) {
        CHECK(e.id == "dup");
    }
}

TEST_CASE("sequential evaluation of the mini corpus") {
    PythonRuntime rt;
    auto corpus = mini_corpus();
    REQUIRE(corpus.size() == 10);
    auto results = healer::evaluate(corpus, mini_config(), rt, 1);
    REQUIRE(results.size() == 10);

    for (size_t i = 1; i < results.size(); ++i)
        CHECK(results[i - 1].program_id < results[i].program_id);

    long proceeded = 0;
    long correct = 0;
    for (const auto& result : results) {
        if (result.proceeded) ++proceeded;
        if (result.correct && *result.correct) ++correct;
        REQUIRE(result.correct.has_value());  // bench runs always grade
        if (*result.correct) CHECK(result.proceeded);
    }
    CHECK(proceeded == 8);
    CHECK(correct == 6);
}

TEST_CASE("forked evaluation matches sequential evaluation") {
    PythonRuntime rt;
    auto corpus = mini_corpus();
    auto cfg = mini_config();
    auto sequential = healer::evaluate(corpus, cfg, rt, 1);
    auto forked = healer::evaluate(corpus, cfg, rt, 3);
    REQUIRE(sequential.size() == forked.size());

    for (size_t i = 0; i < sequential.size(); ++i) {
        const auto& a = sequential[i];
        const auto& b = forked[i];
        CHECK(a.program_id == b.program_id);
        CHECK(a.proceeded == b.proceeded);
        CHECK(a.correct == b.correct);
        CHECK(a.stdout_text == b.stdout_text);
        REQUIRE(a.traces.size() == b.traces.size());
        for (size_t t = 0; t < a.traces.size(); ++t) {
            CHECK(a.traces[t].verdict == b.traces[t].verdict);
            CHECK(a.traces[t].prompt_digest == b.traces[t].prompt_digest);
            CHECK(a.traces[t].response == b.traces[t].response);
        }
    }
}

TEST_CASE("report groups and folds as counted by hand") {
    PythonRuntime rt;
    auto results = healer::evaluate(mini_corpus(), mini_config(), rt, 2);

    auto overall = healer::report(results, Grouping::OVERALL);
    REQUIRE(overall.per_group.size() == 1);
    const auto& all = overall.per_group.at("OVERALL");
    CHECK(all.n == 10);
    CHECK(all.proceed_count == 8);
    CHECK(all.correct_count == 6);
    CHECK(all.proceed_pct == doctest::Approx(80.0));
    CHECK(all.correct_pct == doctest::Approx(60.0));

    auto by_error = healer::report(results, Grouping::BY_ERROR_TYPE);
    CHECK(by_error.per_group.size() == 8);
    CHECK(by_error.per_group.at("NameError").n == 2);
    CHECK(by_error.per_group.at("TypeError").n == 2);
    CHECK(by_error.per_group.at("ZeroDivisionError").correct_count == 0);
    CHECK(by_error.per_group.at("IndexError").correct_count == 1);

    auto folded = healer::report(results, Grouping::BY_ERROR_TYPE, 2);
    REQUIRE(folded.per_group.size() == 3);
    CHECK(folded.per_group.at("NameError").n == 2);
    CHECK(folded.per_group.at("TypeError").n == 2);
    const auto& others = folded.per_group.at("Others");
    CHECK(others.n == 6);
    CHECK(others.proceed_count == 6);
    CHECK(others.correct_count == 4);

    auto by_bench = healer::report(results, Grouping::BY_BENCHMARK);
    REQUIRE(by_bench.per_group.size() == 1);
    CHECK(by_bench.per_group.at("mini").n == 10);
}

TEST_CASE("BY_ERROR_TYPE uses the first trace and NoError for clean runs") {
    std::vector<RunResult> results;
    results.push_back(synthetic("x/1", true, true));
    results.push_back(synthetic("x/2", true, true, "KeyError"));
    results.push_back(synthetic("y/1", false, false, "KeyError"));
    auto metrics = healer::report(results, Grouping::BY_ERROR_TYPE);
    CHECK(metrics.per_group.at("NoError").n == 1);
    CHECK(metrics.per_group.at("KeyError").n == 2);
    CHECK(metrics.per_group.at("KeyError").proceed_count == 1);

    auto by_bench = healer::report(results, Grouping::BY_BENCHMARK);
    CHECK(by_bench.per_group.at("x").n == 2);
    CHECK(by_bench.per_group.at("y").n == 1);
}

TEST_CASE("fold floor never folds at zero and folds everything below it") {
    std::vector<RunResult> results;
    results.push_back(synthetic("a/1", true, true, "AError"));
    results.push_back(synthetic("a/2", true, false, "BError"));
    auto unfolded = healer::report(results, Grouping::BY_ERROR_TYPE, 0);
    CHECK(unfolded.per_group.count("Others") == 0);
    auto folded = healer::report(results, Grouping::BY_ERROR_TYPE, 5);
    REQUIRE(folded.per_group.size() == 1);
    CHECK(folded.per_group.at("Others").n == 2);
    CHECK(folded.per_group.at("Others").correct_count == 1);
}

TEST_CASE("the report table renders rounded percentages") {
    std::vector<RunResult> results;
    results.push_back(synthetic("t/1", true, true));
    results.push_back(synthetic("t/2", true, false));
    results.push_back(synthetic("t/3", false, false));
    auto table = healer::render_report_table(
        healer::report(results, Grouping::OVERALL));
    CHECK(table.find("group") != std::string::npos);
    CHECK(table.find("proceed%") != std::string::npos);
    CHECK(table.find("OVERALL") != std::string::npos);
    CHECK(table.find("66.7") != std::string::npos);
    CHECK(table.find("33.3") != std::string::npos);
    // header plus one row
    CHECK(std::count(table.begin(), table.end(), '\n') == 2);
}

TEST_CASE("the tuning dataset holds one sample per correct healed run") {
    PythonRuntime rt;
    auto results = healer::evaluate(mini_corpus(), mini_config(), rt, 1);
    testsupport::TempDir tmp;
    auto path = tmp.path() / "tuning.jsonl";
    long written = healer::export_tuning_dataset(results, path);
    CHECK(written == 6);

    std::ifstream in(path);
    std::string line;
    long lines = 0;
    while (std::getline(in, line)) {
        REQUIRE(!line.empty());
        json sample = json::parse(line);
        ++lines;
        REQUIRE(sample.contains("messages"));
        REQUIRE(sample["messages"].size() == 3);
        CHECK(sample["messages"][0]["role"] == "system");
        CHECK(sample["messages"][1]["role"] == "user");
        CHECK(sample["messages"][2]["role"] == "assistant");
        std::string user = sample["messages"][1]["content"];
        CHECK(user.find("<error>") != std::string::npos);
        CHECK(user.find("</error>") != std::string::npos);
        std::string assistant = sample["messages"][2]["content"];
        CHECK(assistant.rfind("<code>\n", 0) == 0);
        CHECK(assistant.find("\n</code>") ==
              assistant.size() - std::string("\n</code>").size());
        CHECK(sample["instance_id"].get<std::string>().rfind("mini/", 0) == 0);
    }
    CHECK(lines == 6);
}

TEST_CASE("clean runs never reach the tuning dataset") {
    testsupport::TempDir tmp;
    std::vector<RunResult> results;
    results.push_back(synthetic("c/1", true, true));  // correct but no trace
    results.push_back(synthetic("c/2", false, false, "KeyError"));
    auto path = tmp.path() / "tuning.jsonl";
    CHECK(healer::export_tuning_dataset(results, path) == 0);
}

TEST_CASE("healing latency is aggregated per model, replays excluded") {
    std::vector<RunResult> results;
    auto with_latency = [](const std::string& model, double ms,
                           bool replayed) {
        RunResult result;
        result.program_id = model + std::to_string(ms);
        healer::HealingTrace trace;
        trace.model_name = model;
        trace.llm_latency_ms = ms;
        trace.replayed = replayed;
        result.traces.push_back(std::move(trace));
        return result;
    };
    results.push_back(with_latency("m-a", 100.0, false));
    results.push_back(with_latency("m-a", 300.0, false));
    results.push_back(with_latency("m-a", 200.0, false));
    results.push_back(with_latency("m-b", 50.0, false));
    results.push_back(with_latency("m-b", 999.0, true));  // replay: excluded

    auto latency = healer::measure_healing_latency(results);
    REQUIRE(latency.size() == 2);
    CHECK(latency.at("m-a").count == 3);
    CHECK(latency.at("m-a").mean_ms == doctest::Approx(200.0));
    CHECK(latency.at("m-a").median_ms == doctest::Approx(200.0));
    CHECK(latency.at("m-b").count == 1);
    CHECK(latency.at("m-b").median_ms == doctest::Approx(50.0));
}

TEST_CASE("wrapper overhead is measurable and small") {
    PythonRuntime rt;
    auto report = healer::measure_wrapper_overhead(rt, 20000, 3);
    CHECK(report.iterations == 20000);
    CHECK(report.reps == 3);
    CHECK(report.bare_ms > 0.0);
    CHECK(report.wrapped_ms > 0.0);
    CHECK(report.delta_ms == doctest::Approx(report.wrapped_ms -
                                             report.bare_ms));
    // The wrapped loop does strictly more work; allow jitter but not an
    // order of magnitude.
    CHECK(report.wrapped_ms < report.bare_ms * 50 + 50.0);
}
