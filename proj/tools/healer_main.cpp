#include <CLI11.hpp>
#include <pybind11/embed.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "healer/bench.hpp"
#include "healer/engine.hpp"
#include "healer/errors.hpp"
#include "healer/json_io.hpp"
#include "healer/log.hpp"

namespace {

using healer::HealerConfig;

std::optional<std::string> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Shared option surface for commands that execute programs. Values land in
// this struct; config-file values are applied first, then only flags the
// user actually passed.
struct CommonFlags {
    std::string backend;
    std::string model;
    std::string endpoint;
    double timeout_s = 60.0;
    std::string isolation;
    std::string record_dir;
    std::string replay_dir;
    std::string stub_rules;
    std::string config_path;
    std::string audit_path;
    std::string language;
    int max_attempts = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--backend", backend, "Backend: remote, replay, stub")
            ->check(CLI::IsMember({"remote", "replay", "stub"}));
        cmd->add_option("--model", model, "Model name for the backend");
        cmd->add_option("--endpoint", endpoint, "Chat-completion endpoint URL");
        cmd->add_option("--timeout", timeout_s,
                        "Handling-code timeout in seconds");
        cmd->add_option("--isolation", isolation,
                        "Sandbox isolation: inproc, subprocess")
            ->check(CLI::IsMember({"inproc", "subprocess"}));
        cmd->add_option("--record", record_dir,
                        "Directory to record completions into");
        cmd->add_option("--replay", replay_dir,
                        "Directory to replay completions from");
        cmd->add_option("--stub-rules", stub_rules, "Stub rules JSON file");
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--audit", audit_path, "Audit JSONL file");
        cmd->add_option("--language", language, "Subject language name");
        cmd->add_option("--max-attempts", max_attempts,
                        "Healing attempts per error");
    }

    HealerConfig build(CLI::App* cmd) const {
        HealerConfig cfg;
        if (cmd->count("--config"))
            cfg = healer::load_config_file(config_path, std::move(cfg));
        if (cmd->count("--backend")) {
            if (backend == "remote") {
                cfg.backend.backend = healer::BackendKind::REMOTE;
            } else if (backend == "replay") {
                cfg.backend.backend = healer::BackendKind::REPLAY;
            } else {
                cfg.backend.backend = healer::BackendKind::STUB;
            }
        }
        if (cmd->count("--model")) cfg.backend.model_name = model;
        if (cmd->count("--endpoint")) cfg.backend.endpoint_url = endpoint;
        if (cmd->count("--timeout")) cfg.handling_timeout_s = timeout_s;
        if (cmd->count("--isolation"))
            cfg.isolation = isolation == "subprocess"
                                ? healer::Isolation::SUBPROCESS
                                : healer::Isolation::IN_PROCESS_NAMESPACE;
        if (cmd->count("--record")) cfg.backend.record_dir = record_dir;
        if (cmd->count("--replay")) cfg.backend.replay_dir = replay_dir;
        if (cmd->count("--stub-rules"))
            cfg.backend.stub_rules_path = stub_rules;
        if (cmd->count("--audit")) cfg.audit_path = audit_path;
        if (cmd->count("--language")) cfg.language_name = language;
        if (cmd->count("--max-attempts")) cfg.max_attempts = max_attempts;
        if (cfg.handling_timeout_s <= 0)
            throw healer::ConfigError("--timeout must be > 0");
        if (cfg.max_attempts < 1)
            throw healer::ConfigError("--max-attempts must be >= 1");
        return cfg;
    }
};

int cmd_run(CLI::App* cmd, const CommonFlags& flags,
            const std::string& program_path, const std::string& stdin_path,
            const std::string& program_id, const std::string& out_path) {
    auto source = slurp(program_path);
    if (!source) {
        std::cerr << "healer: cannot read program " << program_path << "\n";
        return 2;
    }
    std::string stdin_payload;
    if (!stdin_path.empty()) {
        auto payload = slurp(stdin_path);
        if (!payload) {
            std::cerr << "healer: cannot read stdin file " << stdin_path
                      << "\n";
            return 2;
        }
        stdin_payload = *payload;
    }

    HealerConfig cfg = flags.build(cmd);
    healer::PythonRuntime rt;
    healer::Engine engine(rt, cfg);
    healer::RunResult result;
    try {
        result = engine.run_healed(
            *source, stdin_payload,
            program_id.empty() ? program_path : program_id);
    } catch (const healer::SourceSyntaxError& e) {
        std::cerr << "healer: program does not parse: " << e.what() << "\n";
        return 2;
    }

    std::cout << result.stdout_text;
    std::cout.flush();

    for (const auto& trace : result.traces) {
        std::cerr << "healer: unit " << trace.unit_id << " "
                  << trace.error_type << " -> "
                  << healer::verdict_name(trace.verdict) << "\n";
    }
    if (result.proceeded) {
        std::cerr << "healer: proceeded (" << result.traces.size()
                  << " healing(s), " << result.total_wall_ms << " ms)\n";
    } else {
        std::cerr << "healer: terminated: " << result.termination_error->type
                  << ": " << result.termination_error->message << "\n";
    }
    if (!out_path.empty())
        healer::write_results_file(out_path, {result});
    return result.proceeded ? 0 : 1;
}

int cmd_bench_run(CLI::App* cmd, const CommonFlags& flags,
                  const std::string& corpus_path, const std::string& out_path,
                  int workers) {
    auto corpus = healer::load_corpus(corpus_path);
    HealerConfig cfg = flags.build(cmd);
    healer::PythonRuntime rt;
    auto results = healer::evaluate(corpus, cfg, rt, workers);
    healer::write_results_file(out_path, results);
    auto overall = healer::report(results, healer::Grouping::OVERALL);
    std::cerr << healer::render_report_table(overall);
    std::cerr << "healer: wrote " << results.size() << " result(s) to "
              << out_path << "\n";
    return 0;
}

int cmd_bench_report(const std::string& results_path, bool by_error_type,
                     bool by_benchmark, int fold_floor,
                     const std::string& out_path) {
    auto results = healer::read_results_file(results_path);
    healer::Grouping grouping = healer::Grouping::OVERALL;
    if (by_error_type) grouping = healer::Grouping::BY_ERROR_TYPE;
    if (by_benchmark) grouping = healer::Grouping::BY_BENCHMARK;
    auto metrics = healer::report(results, grouping, fold_floor);
    std::string table = healer::render_report_table(metrics);
    std::cout << table;
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw healer::IoError("cannot write " + out_path);
        out << table;
    }
    return 0;
}

int cmd_dataset_export(const std::string& results_path,
                       const std::string& out_path) {
    auto results = healer::read_results_file(results_path);
    long written = healer::export_tuning_dataset(results, out_path);
    std::cerr << "healer: exported " << written << " tuning sample(s) to "
              << out_path << "\n";
    return 0;
}

int cmd_overhead(long iterations, int reps, const std::string& out_path) {
    healer::PythonRuntime rt;
    auto report = healer::measure_wrapper_overhead(rt, iterations, reps);
    std::cout << "iterations=" << report.iterations
              << " reps=" << report.reps << " bare_ms=" << report.bare_ms
              << " wrapped_ms=" << report.wrapped_ms
              << " delta_ms=" << report.delta_ms << "\n";
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw healer::IoError("cannot write " + out_path);
        out << nlohmann::json{{"iterations", report.iterations},
                              {"reps", report.reps},
                              {"bare_ms", report.bare_ms},
                              {"wrapped_ms", report.wrapped_ms},
                              {"delta_ms", report.delta_ms}}
                   .dump(2)
            << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    // Stable hash seeding keeps prompt renderings of sets and dicts
    // reproducible, which record/replay depends on.
    setenv("PYTHONHASHSEED", "0", 0);

    CLI::App app{"Self-healing execution of subject-language programs"};
    app.require_subcommand(1);

    CommonFlags run_flags;
    CommonFlags bench_flags;

    auto* run_cmd = app.add_subcommand("run", "Execute one program with healing");
    std::string program_path;
    std::string stdin_path;
    std::string program_id;
    std::string run_out;
    run_cmd->add_option("program", program_path, "Program file")->required();
    run_cmd->add_option("--stdin", stdin_path, "File fed to the program's stdin");
    run_cmd->add_option("--id", program_id, "Program id used in results");
    run_cmd->add_option("--out", run_out, "Write the run result JSONL here");
    run_flags.attach(run_cmd);

    auto* bench_cmd = app.add_subcommand("bench", "Benchmark harness");
    bench_cmd->require_subcommand(1);

    auto* bench_run_cmd =
        bench_cmd->add_subcommand("run", "Evaluate a corpus");
    std::string corpus_path;
    std::string bench_out = "results.jsonl";
    int workers = 1;
    bench_run_cmd->add_option("corpus", corpus_path, "Corpus JSONL file")
        ->required();
    bench_run_cmd->add_option("--out", bench_out, "Results JSONL path");
    bench_run_cmd->add_option("--workers", workers, "Worker processes")
        ->check(CLI::PositiveNumber);
    bench_flags.attach(bench_run_cmd);

    auto* bench_report_cmd =
        bench_cmd->add_subcommand("report", "Summarize a results file");
    std::string results_path;
    bool by_error_type = false;
    bool by_benchmark = false;
    int fold_floor = 0;
    std::string report_out;
    bench_report_cmd->add_option("results", results_path, "Results JSONL file")
        ->required();
    auto* by_error_flag = bench_report_cmd->add_flag(
        "--by-error-type", by_error_type, "Group by error type");
    auto* by_bench_flag = bench_report_cmd->add_flag(
        "--by-benchmark", by_benchmark, "Group by benchmark prefix");
    by_bench_flag->excludes(by_error_flag);
    bench_report_cmd
        ->add_option("--fold-floor", fold_floor,
                     "Fold error-type groups smaller than this into Others")
        ->needs(by_error_flag);
    bench_report_cmd->add_option("--out", report_out,
                                 "Also write the table to this file");

    auto* dataset_cmd = app.add_subcommand("dataset", "Dataset tools");
    dataset_cmd->require_subcommand(1);
    auto* dataset_export_cmd = dataset_cmd->add_subcommand(
        "export", "Export the instruction-tuning dataset");
    std::string export_results_path;
    std::string export_out;
    dataset_export_cmd
        ->add_option("results", export_results_path, "Results JSONL file")
        ->required();
    dataset_export_cmd->add_option("--out", export_out, "Dataset JSONL path")
        ->required();

    auto* overhead_cmd =
        app.add_subcommand("overhead", "Measure wrapper overhead");
    long iterations = 1000000;
    int reps = 5;
    std::string overhead_out;
    overhead_cmd->add_option("--iterations", iterations, "Loop iterations")
        ->check(CLI::PositiveNumber);
    overhead_cmd->add_option("--reps", reps, "Timing repetitions")
        ->check(CLI::PositiveNumber);
    overhead_cmd->add_option("--out", overhead_out, "Write the report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        pybind11::scoped_interpreter interpreter;
        if (run_cmd->parsed())
            return cmd_run(run_cmd, run_flags, program_path, stdin_path,
                           program_id, run_out);
        if (bench_run_cmd->parsed())
            return cmd_bench_run(bench_run_cmd, bench_flags, corpus_path,
                                 bench_out, workers);
        if (bench_report_cmd->parsed())
            return cmd_bench_report(results_path, by_error_type, by_benchmark,
                                    fold_floor, report_out);
        if (dataset_export_cmd->parsed())
            return cmd_dataset_export(export_results_path, export_out);
        if (overhead_cmd->parsed())
            return cmd_overhead(iterations, reps, overhead_out);
    } catch (const healer::ConfigError& e) {
        std::cerr << "healer: config error: " << e.what() << "\n";
        return 2;
    } catch (const healer::CorpusParseError& e) {
        std::cerr << "healer: " << e.what() << "\n";
        return 2;
    } catch (const healer::DuplicateIdError& e) {
        std::cerr << "healer: " << e.what() << "\n";
        return 2;
    } catch (const healer::IoError& e) {
        std::cerr << "healer: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "healer: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
