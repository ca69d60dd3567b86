#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "healer/engine.hpp"

namespace healer {

struct BenchmarkInstance {
    std::string id;
    std::string source;
    std::string stdin_payload;
    std::string expected_stdout;
    std::optional<std::string> error_type_hint;
};

enum class Grouping { OVERALL, BY_ERROR_TYPE, BY_BENCHMARK };

struct GroupMetrics {
    long n = 0;
    long proceed_count = 0;
    long correct_count = 0;
    double proceed_pct = 0.0;
    double correct_pct = 0.0;
};

struct MetricsReport {
    Grouping grouping = Grouping::OVERALL;
    std::map<std::string, GroupMetrics> per_group;
};

struct OverheadReport {
    double bare_ms = 0.0;
    double wrapped_ms = 0.0;
    double delta_ms = 0.0;
    long iterations = 0;
    int reps = 0;
};

struct LatencyStats {
    long count = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
};
using LatencyReport = std::map<std::string, LatencyStats>;  // by model name

// Comparison rule for CORRECT: trailing whitespace per line and trailing
// final newlines are insignificant.
std::string normalize_output(const std::string& text);

std::vector<BenchmarkInstance> load_corpus(const std::filesystem::path& path);

// workers > 1 fans instances out to forked worker processes, each owning its
// own engine; results come back sorted by instance id in both modes.
std::vector<RunResult> evaluate(const std::vector<BenchmarkInstance>& corpus,
                                const HealerConfig& cfg, PythonRuntime& rt,
                                int workers);

// Groups with fewer than fold_floor instances are folded into "Others".
MetricsReport report(const std::vector<RunResult>& results, Grouping grouping,
                     int fold_floor = 0);

std::string render_report_table(const MetricsReport& metrics);

long export_tuning_dataset(const std::vector<RunResult>& results,
                           const std::filesystem::path& out_path);

OverheadReport measure_wrapper_overhead(PythonRuntime& rt, long iterations,
                                        int reps = 5);

LatencyReport measure_healing_latency(const std::vector<RunResult>& results);

}  // namespace healer
