#include "healer/json_io.hpp"

#include <fstream>

#include "healer/errors.hpp"

namespace healer {

namespace {

using nlohmann::json;

Extraction extraction_from_name(const std::string& name) {
    if (name == "OK") return Extraction::OK;
    if (name == "EMPTY") return Extraction::EMPTY;
    return Extraction::MISSING_TAGS;
}

SandboxOutcome sandbox_outcome_from_name(const std::string& name) {
    if (name == "SUCCESS") return SandboxOutcome::SUCCESS;
    if (name == "TIMEOUT") return SandboxOutcome::TIMEOUT;
    if (name == "FORBIDDEN") return SandboxOutcome::FORBIDDEN;
    return SandboxOutcome::RAISED;
}

Verdict verdict_from_name(const std::string& name) {
    if (name == "HEALED") return Verdict::HEALED;
    if (name == "FAILED_EXTRACTION") return Verdict::FAILED_EXTRACTION;
    if (name == "FAILED_FORBIDDEN") return Verdict::FAILED_FORBIDDEN;
    if (name == "FAILED_SANDBOX") return Verdict::FAILED_SANDBOX;
    if (name == "FAILED_TIMEOUT") return Verdict::FAILED_TIMEOUT;
    if (name == "FAILED_MERGE") return Verdict::FAILED_MERGE;
    return Verdict::FAILED_LLM;
}

}  // namespace

const char* extraction_name(Extraction extraction) {
    switch (extraction) {
        case Extraction::OK: return "OK";
        case Extraction::MISSING_TAGS: return "MISSING_TAGS";
        case Extraction::EMPTY: return "EMPTY";
    }
    return "MISSING_TAGS";
}

const char* sandbox_outcome_name(SandboxOutcome outcome) {
    switch (outcome) {
        case SandboxOutcome::SUCCESS: return "SUCCESS";
        case SandboxOutcome::RAISED: return "RAISED";
        case SandboxOutcome::TIMEOUT: return "TIMEOUT";
        case SandboxOutcome::FORBIDDEN: return "FORBIDDEN";
    }
    return "RAISED";
}

json trace_to_json(const HealingTrace& trace) {
    json j{{"unit_id", trace.unit_id},
           {"error_type", trace.error_type},
           {"error_message", trace.error_message},
           {"prompt_digest", trace.prompt_digest},
           {"extraction", trace.extraction
                              ? json(extraction_name(*trace.extraction))
                              : json(nullptr)},
           {"sandbox_outcome",
            trace.sandbox_outcome
                ? json(sandbox_outcome_name(*trace.sandbox_outcome))
                : json(nullptr)},
           {"merge_applied", trace.merge_report.applied},
           {"merge_failed", trace.merge_report.failed},
           {"llm_latency_ms", trace.llm_latency_ms},
           {"sandbox_elapsed_ms", trace.sandbox_elapsed_ms
                                      ? json(*trace.sandbox_elapsed_ms)
                                      : json(nullptr)},
           {"verdict", verdict_name(trace.verdict)},
           {"note", trace.note},
           {"model_name", trace.model_name},
           {"replayed", trace.replayed},
           {"system_text", trace.system_text},
           {"user_text", trace.user_text},
           {"response", trace.response},
           {"code", trace.code}};
    return j;
}

HealingTrace trace_from_json(const json& j) {
    HealingTrace trace;
    trace.unit_id = j.value("unit_id", -1);
    trace.error_type = j.value("error_type", "");
    trace.error_message = j.value("error_message", "");
    trace.prompt_digest = j.value("prompt_digest", "");
    if (j.contains("extraction") && !j["extraction"].is_null())
        trace.extraction =
            extraction_from_name(j["extraction"].get<std::string>());
    if (j.contains("sandbox_outcome") && !j["sandbox_outcome"].is_null())
        trace.sandbox_outcome =
            sandbox_outcome_from_name(j["sandbox_outcome"].get<std::string>());
    trace.merge_report.applied =
        j.value("merge_applied", std::vector<std::string>{});
    trace.merge_report.failed =
        j.value("merge_failed", std::vector<std::string>{});
    trace.llm_latency_ms = j.value("llm_latency_ms", 0.0);
    if (j.contains("sandbox_elapsed_ms") && !j["sandbox_elapsed_ms"].is_null())
        trace.sandbox_elapsed_ms = j["sandbox_elapsed_ms"].get<double>();
    trace.verdict = verdict_from_name(j.value("verdict", "FAILED_LLM"));
    trace.note = j.value("note", "");
    trace.model_name = j.value("model_name", "");
    trace.replayed = j.value("replayed", false);
    trace.system_text = j.value("system_text", "");
    trace.user_text = j.value("user_text", "");
    trace.response = j.value("response", "");
    trace.code = j.value("code", "");
    return trace;
}

json run_result_to_json(const RunResult& result) {
    json traces = json::array();
    for (const auto& trace : result.traces)
        traces.push_back(trace_to_json(trace));
    return json{{"program_id", result.program_id},
                {"proceeded", result.proceeded},
                {"correct",
                 result.correct ? json(*result.correct) : json(nullptr)},
                {"stdout", result.stdout_text},
                {"termination_error",
                 result.termination_error
                     ? json{{"type", result.termination_error->type},
                            {"message", result.termination_error->message}}
                     : json(nullptr)},
                {"traces", traces},
                {"total_wall_ms", result.total_wall_ms}};
}

RunResult run_result_from_json(const json& j) {
    RunResult result;
    result.program_id = j.value("program_id", "");
    result.proceeded = j.value("proceeded", false);
    if (j.contains("correct") && !j["correct"].is_null())
        result.correct = j["correct"].get<bool>();
    result.stdout_text = j.value("stdout", "");
    if (j.contains("termination_error") && !j["termination_error"].is_null()) {
        result.termination_error =
            TerminationError{j["termination_error"].value("type", ""),
                             j["termination_error"].value("message", "")};
    }
    for (const auto& t : j.value("traces", json::array()))
        result.traces.push_back(trace_from_json(t));
    result.total_wall_ms = j.value("total_wall_ms", 0.0);
    return result;
}

void write_results_file(const std::filesystem::path& path,
                        const std::vector<RunResult>& results) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write results file " + path.string());
    for (const auto& result : results)
        out << run_result_to_json(result).dump() << "\n";
}

std::vector<RunResult> read_results_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read results file " + path.string());
    std::vector<RunResult> results;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            results.push_back(run_result_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw CorpusParseError(
                std::string("bad result line: ") + e.what(), line_no);
        }
    }
    return results;
}

HealerConfig config_from_json(const json& j, HealerConfig base) {
    HealerConfig cfg = std::move(base);
    if (!j.is_object()) throw ConfigError("config root must be an object");

    auto backend_from_name = [](const std::string& name) {
        if (name == "remote") return BackendKind::REMOTE;
        if (name == "replay") return BackendKind::REPLAY;
        if (name == "stub") return BackendKind::STUB;
        throw ConfigError("unknown backend '" + name + "'");
    };

    auto apply_backend_key = [&](const std::string& key, const json& value) {
        if (key == "backend") {
            cfg.backend.backend = backend_from_name(value.get<std::string>());
        } else if (key == "model_name") {
            cfg.backend.model_name = value.get<std::string>();
        } else if (key == "endpoint_url") {
            cfg.backend.endpoint_url = value.get<std::string>();
        } else if (key == "api_key_env_var") {
            cfg.backend.api_key_env_var = value.get<std::string>();
        } else if (key == "temperature") {
            cfg.backend.temperature = value.get<double>();
        } else if (key == "request_timeout_s") {
            cfg.backend.request_timeout_s = value.get<double>();
        } else if (key == "max_retries") {
            cfg.backend.max_retries = value.get<int>();
        } else if (key == "record_dir") {
            cfg.backend.record_dir = value.get<std::string>();
        } else if (key == "replay_dir") {
            cfg.backend.replay_dir = value.get<std::string>();
        } else if (key == "stub_rules_path") {
            cfg.backend.stub_rules_path = value.get<std::string>();
        } else if (key == "rate_limit_per_min") {
            cfg.backend.rate_limit_per_min = value.get<double>();
        } else {
            throw ConfigError("unknown backend config key '" + key + "'");
        }
    };

    for (const auto& [key, value] : j.items()) {
        if (key == "backend") {
            if (value.is_string()) {
                cfg.backend.backend =
                    backend_from_name(value.get<std::string>());
            } else if (value.is_object()) {
                for (const auto& [bkey, bvalue] : value.items())
                    apply_backend_key(bkey, bvalue);
            } else {
                throw ConfigError("'backend' must be a string or object");
            }
        } else if (key == "model_name" || key == "endpoint_url" ||
                   key == "api_key_env_var" || key == "temperature" ||
                   key == "request_timeout_s" || key == "max_retries" ||
                   key == "record_dir" || key == "replay_dir" ||
                   key == "stub_rules_path" || key == "rate_limit_per_min") {
            apply_backend_key(key, value);
        } else if (key == "language_name") {
            cfg.language_name = value.get<std::string>();
        } else if (key == "forbidden_keywords") {
            cfg.forbidden_keywords = value.get<std::vector<std::string>>();
        } else if (key == "handling_timeout_s") {
            cfg.handling_timeout_s = value.get<double>();
        } else if (key == "max_attempts") {
            cfg.max_attempts = value.get<int>();
        } else if (key == "isolation") {
            std::string iso = value.get<std::string>();
            if (iso == "inproc") {
                cfg.isolation = Isolation::IN_PROCESS_NAMESPACE;
            } else if (iso == "subprocess") {
                cfg.isolation = Isolation::SUBPROCESS;
            } else {
                throw ConfigError("unknown isolation '" + iso + "'");
            }
        } else if (key == "state_budgets") {
            if (value.contains("per_value_chars"))
                cfg.state_budgets.per_value_chars =
                    value["per_value_chars"].get<long>();
            if (value.contains("total_chars"))
                cfg.state_budgets.total_chars =
                    value["total_chars"].get<long>();
        } else if (key == "removed_policy") {
            std::string policy = value.get<std::string>();
            if (policy == "keep") {
                cfg.removed_policy = RemovedPolicy::KEEP;
            } else if (policy == "delete") {
                cfg.removed_policy = RemovedPolicy::DELETE;
            } else {
                throw ConfigError("unknown removed_policy '" + policy + "'");
            }
        } else if (key == "healing_cap") {
            cfg.healing_cap = value.get<int>();
        } else if (key == "audit_path") {
            cfg.audit_path = value.get<std::string>();
        } else if (key == "template_path") {
            cfg.templates =
                PromptTemplates::from_file(value.get<std::string>());
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }

    if (cfg.handling_timeout_s <= 0)
        throw ConfigError("handling_timeout_s must be > 0");
    if (cfg.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    return cfg;
}

HealerConfig load_config_file(const std::filesystem::path& path,
                              HealerConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("bad config file " + path.string() + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
}

}  // namespace healer
