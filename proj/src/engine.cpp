#include "healer/engine.hpp"

#include <pybind11/eval.h>
#include <pybind11/functional.h>
#include <unistd.h>

#include <atomic>
#include <chrono>

#include "healer/digest.hpp"
#include "healer/errors.hpp"
#include "healer/log.hpp"

namespace healer {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start)
        .count();
}

// Swaps the interpreter's stdio for the duration of a run. The subject
// program reads its stdin payload and its output is captured.
class StdStreamGuard {
public:
    explicit StdStreamGuard(const std::string& stdin_payload) {
        py::module_ sys = py::module_::import("sys");
        py::module_ io = py::module_::import("io");
        saved_stdin_ = sys.attr("stdin");
        saved_stdout_ = sys.attr("stdout");
        capture_ = io.attr("StringIO")();
        sys.attr("stdin") = io.attr("StringIO")(stdin_payload);
        sys.attr("stdout") = capture_;
    }

    std::string captured() {
        return capture_.attr("getvalue")().cast<std::string>();
    }

    ~StdStreamGuard() {
        try {
            py::module_ sys = py::module_::import("sys");
            sys.attr("stdin") = saved_stdin_;
            sys.attr("stdout") = saved_stdout_;
        } catch (...) {
        }
    }

private:
    py::object saved_stdin_;
    py::object saved_stdout_;
    py::object capture_;
};

std::string make_run_id(const std::string& program_id) {
    static std::atomic<long> counter{0};
    std::string base = program_id.empty() ? "run" : program_id;
    return base + "#" + std::to_string(::getpid()) + "." +
           std::to_string(counter.fetch_add(1));
}

}  // namespace

const char* verdict_name(Verdict verdict) {
    switch (verdict) {
        case Verdict::HEALED: return "HEALED";
        case Verdict::FAILED_EXTRACTION: return "FAILED_EXTRACTION";
        case Verdict::FAILED_FORBIDDEN: return "FAILED_FORBIDDEN";
        case Verdict::FAILED_SANDBOX: return "FAILED_SANDBOX";
        case Verdict::FAILED_TIMEOUT: return "FAILED_TIMEOUT";
        case Verdict::FAILED_LLM: return "FAILED_LLM";
        case Verdict::FAILED_MERGE: return "FAILED_MERGE";
    }
    return "UNKNOWN";
}

Engine::Engine(PythonRuntime& rt, HealerConfig cfg)
    : rt_(rt),
      cfg_(std::move(cfg)),
      client_(cfg_.backend),
      audit_(cfg_.audit_path.empty() ? AuditSink::discard()
                                     : AuditSink::to_file(cfg_.audit_path)) {}

RunResult Engine::run_healed(const std::string& source,
                             const std::string& stdin_payload,
                             const std::string& program_id) {
    RunResult result;
    result.program_id = program_id;

    InstrumentedProgram program = instrument(rt_, source);
    unit_kinds_.clear();
    for (const auto& unit : rt_.parse_units(source))
        unit_kinds_[unit.unit_id] = unit.kind;

    program_ = &program;
    traces_ = &result.traces;
    healings_this_run_ = 0;
    run_id_ = make_run_id(program_id);

    py::dict ns;
    ns["__name__"] = "__main__";
    ns["__builtins__"] = py::module_::import("builtins");
    ns[kHandlerName] = py::cpp_function(
        [this](int unit_id, py::object exc, py::dict globals, py::dict locals) {
            return on_error(unit_id, exc, globals, locals);
        });

    auto start = Clock::now();
    {
        StdStreamGuard streams(stdin_payload);
        try {
            py::exec(program.source, ns);
            result.proceeded = true;
        } catch (py::error_already_set& err) {
            if (err.matches(PyExc_SystemExit)) {
                py::object code = py::none();
                try {
                    py::object value = err.value();
                    if (value && py::hasattr(value, "code"))
                        code = value.attr("code");
                } catch (...) {
                }
                bool clean = code.is_none() ||
                             (py::isinstance<py::int_>(code) &&
                              code.cast<long>() == 0);
                if (clean) {
                    result.proceeded = true;
                } else {
                    result.proceeded = false;
                    result.termination_error = TerminationError{
                        "SystemExit", py::str(code).cast<std::string>()};
                }
            } else {
                ErrorDescriptor desc = describe_error(err);
                result.proceeded = false;
                result.termination_error =
                    TerminationError{desc.type, desc.message};
            }
        } catch (const std::exception& e) {
            result.proceeded = false;
            result.termination_error =
                TerminationError{"InternalError", e.what()};
            log::error(std::string("internal failure during run: ") + e.what());
        }
        result.stdout_text = streams.captured();
    }
    result.total_wall_ms = ms_since(start);

    if (!result.proceeded && result.termination_error) {
        audit_.emit(AuditStage::TERMINATE, run_id_,
                    {{"error_type", result.termination_error->type},
                     {"error_message", result.termination_error->message}});
    }

    program_ = nullptr;
    traces_ = nullptr;
    return result;
}

bool Engine::on_error(int unit_id, const py::object& exc,
                      const py::dict& globals, const py::dict& locals) {
    // Total: a failure anywhere in the healing machinery must fall back to
    // the original error, never replace it.
    try {
        audit_.emit(AuditStage::INTERCEPT, run_id_, {{"unit_id", unit_id}});
        if (healings_this_run_ >= cfg_.healing_cap) {
            log::warn("healing cap reached (" +
                      std::to_string(cfg_.healing_cap) + "); terminating");
            return false;
        }
        ++healings_this_run_;

        ErrorDescriptor desc = rt_.describe_exception(exc);
        StateSnapshot snapshot =
            capture_state(rt_, globals, locals, unit_id, cfg_.state_budgets);
        audit_.emit(AuditStage::CAPTURE, run_id_,
                    {{"unit_id", unit_id},
                     {"entries", snapshot.entries.size()},
                     {"error_type", desc.type}});

        ErrorContext ctx =
            build_error_context(desc, std::move(snapshot), *program_, unit_id);
        HealingTrace trace = heal(ctx, globals);

        auto kind = unit_kinds_.find(unit_id);
        if (kind != unit_kinds_.end() &&
            kind->second == UnitKind::COMPOUND_LOOP &&
            trace.verdict == Verdict::HEALED) {
            // Loop-granularity wrapping: execution continues after the loop,
            // not inside it.
            trace.note = trace.note.empty()
                             ? "resume-after-loop"
                             : trace.note + "; resume-after-loop";
        }
        bool healed = trace.verdict == Verdict::HEALED;
        traces_->push_back(std::move(trace));
        return healed;
    } catch (const std::exception& e) {
        log::error(std::string("healing pipeline failure: ") + e.what());
        return false;
    } catch (...) {
        log::error("healing pipeline failure (unknown)");
        return false;
    }
}

HealingTrace Engine::heal(const ErrorContext& ctx, py::dict live) {
    HealingTrace trace;
    trace.unit_id = ctx.unit_id;
    trace.error_type = ctx.error_type;
    trace.error_message = ctx.error_message;
    trace.model_name = cfg_.backend.model_name;
    trace.replayed = cfg_.backend.backend == BackendKind::REPLAY;

    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
        // Fresh completion per attempt; stage fields reflect this attempt.
        trace.extraction.reset();
        trace.sandbox_outcome.reset();
        trace.sandbox_elapsed_ms.reset();
        trace.merge_report = MergeReport{};
        trace.note.clear();

        PromptPair pair =
            build_prompt_pair(ctx, cfg_.templates, cfg_.language_name,
                              cfg_.forbidden_keywords, cfg_.state_budgets, rt_);
        trace.system_text = pair.system_text;
        trace.user_text = pair.user_text;
        trace.prompt_digest =
            prompt_digest(cfg_.backend.model_name, cfg_.backend.temperature,
                          pair.system_text, pair.user_text);
        audit_.emit(AuditStage::PROMPT, run_id_,
                    {{"unit_id", ctx.unit_id},
                     {"prompt_digest", trace.prompt_digest}});

        CompletionOutcome completion;
        {
            py::gil_scoped_release release;
            completion = client_.complete(pair);
        }
        trace.llm_latency_ms = completion.record.latency_ms;
        audit_.emit(AuditStage::COMPLETE, run_id_,
                    {{"prompt_digest", completion.record.prompt_digest},
                     {"status", static_cast<int>(completion.status)},
                     {"latency_ms", completion.record.latency_ms}});
        if (completion.status != LlmStatus::OK) {
            trace.verdict = Verdict::FAILED_LLM;
            trace.note = completion.detail;
            continue;
        }
        trace.response = completion.record.response;

        HandlingCode handling = extract_handling_code(trace.response);
        trace.extraction = handling.extraction;
        audit_.emit(AuditStage::EXTRACT, run_id_,
                    {{"status", static_cast<int>(handling.extraction)}});
        if (handling.extraction != Extraction::OK) {
            trace.verdict = Verdict::FAILED_EXTRACTION;
            continue;
        }
        trace.code = handling.code;

        if (auto violation =
                check_forbidden(rt_, handling.code, cfg_.forbidden_keywords)) {
            trace.verdict = Verdict::FAILED_FORBIDDEN;
            trace.note = "forbidden keyword: " + *violation;
            continue;
        }

        SandboxResult sandbox = execute_handling(
            rt_, handling.code, ctx.snapshot, cfg_.handling_timeout_s,
            cfg_.isolation, cfg_.forbidden_keywords, cfg_.state_budgets);
        trace.sandbox_outcome = sandbox.outcome;
        audit_.emit(AuditStage::SANDBOX, run_id_,
                    {{"outcome", static_cast<int>(sandbox.outcome)},
                     {"elapsed_ms", sandbox.elapsed_ms}});
        if (sandbox.outcome == SandboxOutcome::FORBIDDEN) {
            // Defensive re-check fired; elapsed stays absent like the
            // screening path above.
            trace.verdict = Verdict::FAILED_FORBIDDEN;
            trace.note = "forbidden keyword: " + sandbox.error_message;
            continue;
        }
        trace.sandbox_elapsed_ms = sandbox.elapsed_ms;
        if (sandbox.outcome == SandboxOutcome::TIMEOUT) {
            trace.verdict = Verdict::FAILED_TIMEOUT;
            continue;
        }
        if (sandbox.outcome == SandboxOutcome::RAISED) {
            trace.verdict = Verdict::FAILED_SANDBOX;
            trace.note = sandbox.error_type + ": " + sandbox.error_message;
            continue;
        }

        StateDiff diff = diff_states(rt_, ctx.snapshot, sandbox.new_snapshot);
        MergeReport merge = merge_diff(rt_, live, diff, cfg_.removed_policy);
        trace.merge_report = merge;
        audit_.emit(AuditStage::MERGE, run_id_,
                    {{"applied", merge.applied.size()},
                     {"failed", merge.failed.size()}});
        if (!merge.ok()) {
            trace.verdict = Verdict::FAILED_MERGE;
            continue;
        }
        trace.verdict = Verdict::HEALED;
        audit_.emit(AuditStage::RESUME, run_id_, {{"unit_id", ctx.unit_id}});
        return trace;
    }
    return trace;
}

}  // namespace healer
