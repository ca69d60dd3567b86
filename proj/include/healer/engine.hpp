#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "healer/audit.hpp"
#include "healer/context.hpp"
#include "healer/instrument.hpp"
#include "healer/llm_client.hpp"
#include "healer/prompting.hpp"
#include "healer/sandbox.hpp"

namespace healer {

struct HealerConfig {
    BackendConfig backend;
    std::string language_name = "Python";
    std::vector<std::string> forbidden_keywords = default_forbidden_keywords();
    double handling_timeout_s = 60.0;
    int max_attempts = 1;
    Isolation isolation = Isolation::IN_PROCESS_NAMESPACE;
    StateBudgets state_budgets;
    RemovedPolicy removed_policy = RemovedPolicy::KEEP;
    int healing_cap = 10;  // healings per run; guards against livelock
    std::string audit_path;
    PromptTemplates templates = PromptTemplates::defaults();
};

enum class Verdict {
    HEALED,
    FAILED_EXTRACTION,
    FAILED_FORBIDDEN,
    FAILED_SANDBOX,
    FAILED_TIMEOUT,
    FAILED_LLM,
    FAILED_MERGE
};

const char* verdict_name(Verdict verdict);

struct HealingTrace {
    int unit_id = -1;
    std::string error_type;
    std::string error_message;
    std::string prompt_digest;
    std::optional<Extraction> extraction;  // absent when no completion
    std::optional<SandboxOutcome> sandbox_outcome;
    MergeReport merge_report;
    double llm_latency_ms = 0.0;
    std::optional<double> sandbox_elapsed_ms;
    Verdict verdict = Verdict::FAILED_LLM;
    std::string note;
    std::string model_name;
    bool replayed = false;
    // Full exchange retained inline so results files are self-contained for
    // replay-free reporting and dataset export.
    std::string system_text;
    std::string user_text;
    std::string response;
    std::string code;
};

struct TerminationError {
    std::string type;
    std::string message;
};

struct RunResult {
    std::string program_id;
    bool proceeded = false;
    std::optional<bool> correct;  // absent = no expected output to compare
    std::string stdout_text;
    std::optional<TerminationError> termination_error;
    std::vector<HealingTrace> traces;
    double total_wall_ms = 0.0;
};

// Drives one program through instrumented execution with healing. One engine
// instance runs one program at a time on one thread.
class Engine {
public:
    Engine(PythonRuntime& rt, HealerConfig cfg);

    RunResult run_healed(const std::string& source,
                         const std::string& stdin_payload,
                         const std::string& program_id = "");

    // One full pipeline pass set: prompt, complete, extract, screen,
    // sandbox, merge. Exposed for stage-level tests.
    HealingTrace heal(const ErrorContext& ctx, py::dict live);

    const HealerConfig& config() const { return cfg_; }

private:
    bool on_error(int unit_id, const py::object& exc, const py::dict& globals,
                  const py::dict& locals);

    PythonRuntime& rt_;
    HealerConfig cfg_;
    LlmClient client_;
    AuditSink audit_;

    // Per-run state, valid only while run_healed is on the stack.
    const InstrumentedProgram* program_ = nullptr;
    std::vector<HealingTrace>* traces_ = nullptr;
    std::map<int, UnitKind> unit_kinds_;
    int healings_this_run_ = 0;
    std::string run_id_;
};

}  // namespace healer
