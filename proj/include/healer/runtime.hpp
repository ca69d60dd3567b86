#pragma once

#include <pybind11/pybind11.h>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace healer {

namespace py = pybind11;

struct LineSpan {
    int start_line = 0;  // 1-based inclusive
    int end_line = 0;
    bool operator==(const LineSpan&) const = default;
};

enum class UnitKind { SIMPLE, COMPOUND_LOOP, COMPOUND_OTHER };

struct StatementUnit {
    int unit_id = 0;
    LineSpan span;
    UnitKind kind = UnitKind::SIMPLE;
    int nesting = 0;  // enclosing-loop depth
};

enum class ScopeOrigin { LIVE, ISOLATED };

struct EvaluationScope {
    py::dict bindings;
    ScopeOrigin origin = ScopeOrigin::ISOLATED;
};

struct EvaluationOutcome {
    bool ok = false;
    py::dict bindings;          // post-evaluation map, ok only
    std::string error_type;     // failure only
    std::string error_message;
};

struct ErrorDescriptor {
    std::string type;
    std::string message;
};

// Bridge to the embedded subject-language interpreter. One instance per
// thread; construction requires the interpreter to be initialized already.
// All methods expect the GIL to be held by the caller.
class PythonRuntime {
public:
    PythonRuntime();

    std::vector<StatementUnit> parse_units(const std::string& source);
    EvaluationOutcome evaluate(const std::string& code, EvaluationScope& scope);

    struct RenderedStmt {
        int start_line = 0;
        int end_line = 0;
        std::string text;  // parser's canonical re-rendering
        bool is_future_import = false;
    };
    std::vector<RenderedStmt> render_top_level(const std::string& source);

    std::string type_name(const py::handle& value);
    // Scrubbed textual representation (heap addresses normalized); nullopt
    // when the representation itself raises.
    std::optional<std::string> try_repr(const py::handle& value);
    bool literal_roundtrip(const py::handle& value, const std::string& rendering);
    std::optional<py::object> try_deepcopy(const py::handle& value);
    py::object literal_parse(const std::string& rendering);  // throws on failure

    // Character-correct truncation; returns (text, truncated).
    std::pair<std::string, bool> truncate_chars(const std::string& text,
                                                long limit);
    long char_len(const std::string& text);

    // Identifier and keyword tokens in lexical order; nullopt if the code
    // does not tokenize.
    std::optional<std::vector<std::string>> name_tokens(const std::string& code);

    py::object compile_source(const std::string& source,
                              const std::string& filename,
                              const std::string& mode);

    ErrorDescriptor describe_exception(const py::handle& exc_instance);

    py::dict helpers() { return ns_; }

private:
    py::dict ns_;  // private helper namespace, never visible to subject code
};

// Extracts type/message from a pybind-caught subject-language error and
// restores the caller to a clean error state.
ErrorDescriptor describe_error(py::error_already_set& err);

}  // namespace healer
