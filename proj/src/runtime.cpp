#include "healer/runtime.hpp"

#include <pybind11/eval.h>
#include <pybind11/stl.h>

#include "healer/errors.hpp"

namespace healer {

namespace {

// Helper functions executed inside the interpreter. Parsing and token scans
// delegate to the subject language's own machinery so unit decomposition can
// never drift from what the interpreter actually executes.
constexpr const char* kHelperScript = R"PY(
import ast as _ast
import contextlib as _contextlib
import copy as _copy
import io as _io
import re as _re
import sys as _sys
import threading as _threading
import tokenize as _tokenize

_LOOPS = (_ast.For, _ast.AsyncFor, _ast.While)
_COMPOUNDS = (_ast.If, _ast.With, _ast.AsyncWith, _ast.Try,
              _ast.FunctionDef, _ast.AsyncFunctionDef, _ast.ClassDef,
              _ast.Match)


def _scan_units(source):
    out = []

    def visit(stmts, nesting):
        for node in stmts:
            if isinstance(node, _LOOPS):
                kind = 'loop'
            elif isinstance(node, _COMPOUNDS):
                kind = 'other'
            else:
                kind = 'simple'
            out.append((node.lineno, node.end_lineno, kind, nesting))
            if kind == 'loop':
                visit(node.body, nesting + 1)
                visit(node.orelse, nesting + 1)

    visit(_ast.parse(source).body, 0)
    return out


def _render_top_level(source):
    out = []
    for node in _ast.parse(source).body:
        is_future = isinstance(node, _ast.ImportFrom) and node.module == '__future__'
        out.append((node.lineno, node.end_lineno, _ast.unparse(node), is_future))
    return out


_ADDR = _re.compile(r'0x[0-9a-fA-F]{4,}')


def _scrubbed_repr(value):
    return _ADDR.sub('0x0', repr(value))


def _literal_roundtrip(value, rendering):
    try:
        parsed = _ast.literal_eval(rendering)
    except Exception:
        return False
    try:
        return type(parsed) is type(value) and parsed == value
    except Exception:
        return False


def _literal_parse(rendering):
    return _ast.literal_eval(rendering)


def _deepcopy(value):
    return _copy.deepcopy(value)


def _truncate(text, limit):
    if len(text) <= limit:
        return text, False
    return text[:limit - 1] + '…', True


def _char_len(text):
    return len(text)


def _name_tokens(code):
    out = []
    for tok in _tokenize.generate_tokens(_io.StringIO(code).readline):
        if tok.type == _tokenize.NAME:
            out.append(tok.string)
    return out


def _sandbox_driver(code_obj, ns, box):
    sink = _io.StringIO()
    saved_stdin = _sys.stdin
    _sys.stdin = _io.StringIO()
    try:
        with _contextlib.redirect_stdout(sink), _contextlib.redirect_stderr(sink):
            exec(code_obj, ns)
        box['outcome'] = 'ok'
    except BaseException as e:
        box['outcome'] = 'raised'
        box['etype'] = type(e).__name__
        box['emsg'] = str(e)
    finally:
        _sys.stdin = saved_stdin
        box['stdout'] = sink.getvalue()


def _spawn_sandbox(code_obj, ns, box):
    t = _threading.Thread(target=_sandbox_driver, args=(code_obj, ns, box),
                          daemon=True)
    t.start()
    return t
)PY";

UnitKind kind_from_tag(const std::string& tag) {
    if (tag == "loop") return UnitKind::COMPOUND_LOOP;
    if (tag == "other") return UnitKind::COMPOUND_OTHER;
    return UnitKind::SIMPLE;
}

[[noreturn]] void rethrow_syntax_error(py::error_already_set& err) {
    int line = 0;
    int column = 0;
    std::string msg = "syntax error";
    try {
        py::object value = err.value();
        if (value) {
            msg = py::str(value).cast<std::string>();
            if (py::hasattr(value, "lineno") && !value.attr("lineno").is_none())
                line = value.attr("lineno").cast<int>();
            if (py::hasattr(value, "offset") && !value.attr("offset").is_none())
                column = value.attr("offset").cast<int>();
        }
    } catch (...) {
    }
    throw SourceSyntaxError(msg, line, column);
}

}  // namespace

PythonRuntime::PythonRuntime() {
    if (!Py_IsInitialized())
        throw std::runtime_error("PythonRuntime requires a live interpreter");
    ns_ = py::dict();
    ns_["__builtins__"] = py::module_::import("builtins");
    py::exec(kHelperScript, ns_);
}

std::vector<StatementUnit> PythonRuntime::parse_units(const std::string& source) {
    py::list raw;
    try {
        raw = ns_["_scan_units"](source);
    } catch (py::error_already_set& err) {
        if (err.matches(PyExc_SyntaxError)) rethrow_syntax_error(err);
        throw;
    }
    std::vector<StatementUnit> units;
    units.reserve(raw.size());
    int next_id = 0;
    for (const auto& item : raw) {
        py::tuple t = item.cast<py::tuple>();
        StatementUnit unit;
        unit.unit_id = next_id++;
        unit.span = {t[0].cast<int>(), t[1].cast<int>()};
        unit.kind = kind_from_tag(t[2].cast<std::string>());
        unit.nesting = t[3].cast<int>();
        units.push_back(std::move(unit));
    }
    return units;
}

EvaluationOutcome PythonRuntime::evaluate(const std::string& code,
                                          EvaluationScope& scope) {
    EvaluationOutcome out;
    if (!scope.bindings.contains("__builtins__"))
        scope.bindings["__builtins__"] = py::module_::import("builtins");
    try {
        py::exec(code, scope.bindings);
        out.ok = true;
        out.bindings = scope.bindings;
    } catch (py::error_already_set& err) {
        ErrorDescriptor desc = describe_error(err);
        out.ok = false;
        out.error_type = desc.type;
        out.error_message = desc.message;
    }
    return out;
}

std::vector<PythonRuntime::RenderedStmt> PythonRuntime::render_top_level(
    const std::string& source) {
    py::list raw;
    try {
        raw = ns_["_render_top_level"](source);
    } catch (py::error_already_set& err) {
        if (err.matches(PyExc_SyntaxError)) rethrow_syntax_error(err);
        throw;
    }
    std::vector<RenderedStmt> stmts;
    stmts.reserve(raw.size());
    for (const auto& item : raw) {
        py::tuple t = item.cast<py::tuple>();
        stmts.push_back({t[0].cast<int>(), t[1].cast<int>(),
                         t[2].cast<std::string>(), t[3].cast<bool>()});
    }
    return stmts;
}

std::string PythonRuntime::type_name(const py::handle& value) {
    return py::str(py::type::of(value).attr("__name__")).cast<std::string>();
}

std::optional<std::string> PythonRuntime::try_repr(const py::handle& value) {
    try {
        return ns_["_scrubbed_repr"](value).cast<std::string>();
    } catch (py::error_already_set& err) {
        err.discard_as_unraisable("healer repr");
        return std::nullopt;
    }
}

bool PythonRuntime::literal_roundtrip(const py::handle& value,
                                      const std::string& rendering) {
    try {
        return ns_["_literal_roundtrip"](value, rendering).cast<bool>();
    } catch (py::error_already_set& err) {
        err.discard_as_unraisable("healer literal_roundtrip");
        return false;
    }
}

std::optional<py::object> PythonRuntime::try_deepcopy(const py::handle& value) {
    try {
        return ns_["_deepcopy"](value);
    } catch (py::error_already_set& err) {
        err.discard_as_unraisable("healer deepcopy");
        return std::nullopt;
    }
}

py::object PythonRuntime::literal_parse(const std::string& rendering) {
    return ns_["_literal_parse"](rendering);
}

std::pair<std::string, bool> PythonRuntime::truncate_chars(
    const std::string& text, long limit) {
    py::tuple t = ns_["_truncate"](text, limit);
    return {t[0].cast<std::string>(), t[1].cast<bool>()};
}

long PythonRuntime::char_len(const std::string& text) {
    return ns_["_char_len"](text).cast<long>();
}

std::optional<std::vector<std::string>> PythonRuntime::name_tokens(
    const std::string& code) {
    try {
        return ns_["_name_tokens"](code).cast<std::vector<std::string>>();
    } catch (py::error_already_set& err) {
        err.discard_as_unraisable("healer tokenize");
        return std::nullopt;
    }
}

py::object PythonRuntime::compile_source(const std::string& source,
                                         const std::string& filename,
                                         const std::string& mode) {
    py::object builtins = py::module_::import("builtins");
    return builtins.attr("compile")(source, filename, mode);
}

ErrorDescriptor PythonRuntime::describe_exception(const py::handle& exc_instance) {
    ErrorDescriptor desc;
    desc.type = type_name(exc_instance);
    try {
        desc.message = py::str(exc_instance).cast<std::string>();
    } catch (py::error_already_set& err) {
        err.discard_as_unraisable("healer exception message");
    }
    return desc;
}

ErrorDescriptor describe_error(py::error_already_set& err) {
    ErrorDescriptor desc;
    try {
        py::object type = err.type();
        if (type)
            desc.type = py::str(type.attr("__name__")).cast<std::string>();
        py::object value = err.value();
        if (value) desc.message = py::str(value).cast<std::string>();
    } catch (...) {
        if (desc.type.empty()) desc.type = "Exception";
    }
    if (desc.type.empty()) desc.type = "Exception";
    return desc;
}

}  // namespace healer
