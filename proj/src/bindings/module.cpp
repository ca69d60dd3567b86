#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "healer/bench.hpp"
#include "healer/engine.hpp"
#include "healer/errors.hpp"
#include "healer/instrument.hpp"
#include "healer/json_io.hpp"
#include "healer/prompting.hpp"
#include "healer/runtime.hpp"

namespace py = pybind11;

namespace {

const char* unit_kind_name(healer::UnitKind kind) {
    switch (kind) {
        case healer::UnitKind::SIMPLE: return "SIMPLE";
        case healer::UnitKind::COMPOUND_LOOP: return "COMPOUND_LOOP";
        case healer::UnitKind::COMPOUND_OTHER: return "COMPOUND_OTHER";
    }
    return "SIMPLE";
}

// Dict round-trip through the host interpreter's json module keeps the
// binding surface plain Python objects without mirroring every struct.
py::object json_to_py(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json py_to_json(const py::object& obj) {
    std::string dumped =
        py::module_::import("json").attr("dumps")(obj).cast<std::string>();
    return nlohmann::json::parse(dumped);
}

py::list parse_units_py(const std::string& source) {
    healer::PythonRuntime rt;
    py::list out;
    for (const auto& unit : rt.parse_units(source)) {
        py::dict d;
        d["unit_id"] = unit.unit_id;
        d["start_line"] = unit.span.start_line;
        d["end_line"] = unit.span.end_line;
        d["kind"] = unit_kind_name(unit.kind);
        d["nesting"] = unit.nesting;
        out.append(d);
    }
    return out;
}

py::dict instrument_py(const std::string& source) {
    healer::PythonRuntime rt;
    auto program = healer::instrument(rt, source);
    py::dict units;
    for (const auto& [unit_id, span] : program.unit_map)
        units[py::int_(unit_id)] =
            py::make_tuple(span.start_line, span.end_line);
    py::dict d;
    d["source"] = program.source;
    d["unit_map"] = units;
    d["wrapped_ids"] = program.wrapped_ids;
    d["original_source"] = program.original_source;
    return d;
}

py::object run_healed_py(const std::string& source,
                         const std::string& stdin_payload,
                         const std::string& program_id,
                         const py::object& config) {
    healer::HealerConfig cfg;
    if (!config.is_none())
        cfg = healer::config_from_json(py_to_json(config), std::move(cfg));
    healer::PythonRuntime rt;
    healer::Engine engine(rt, cfg);
    auto result = engine.run_healed(source, stdin_payload, program_id);
    return json_to_py(healer::run_result_to_json(result));
}

std::string render_system_prompt_py(
    const std::string& language, const std::vector<std::string>& keywords,
    const std::optional<std::string>& template_path) {
    healer::PromptTemplates templates =
        template_path ? healer::PromptTemplates::from_file(*template_path)
                      : healer::PromptTemplates::defaults();
    return healer::render_system_prompt(templates, language, keywords);
}

py::dict extract_handling_code_py(const std::string& response) {
    auto handling = healer::extract_handling_code(response);
    py::dict d;
    d["code"] = handling.code;
    d["extraction"] = healer::extraction_name(handling.extraction);
    return d;
}

py::object check_forbidden_py(const std::string& code,
                              const std::vector<std::string>& keywords) {
    healer::PythonRuntime rt;
    auto hit = healer::check_forbidden(rt, code, keywords);
    if (!hit) return py::none();
    return py::str(*hit);
}

py::dict measure_wrapper_overhead_py(long iterations, int reps) {
    healer::PythonRuntime rt;
    auto report = healer::measure_wrapper_overhead(rt, iterations, reps);
    py::dict d;
    d["iterations"] = report.iterations;
    d["reps"] = report.reps;
    d["bare_ms"] = report.bare_ms;
    d["wrapped_ms"] = report.wrapped_ms;
    d["delta_ms"] = report.delta_ms;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Self-healing execution core";
    m.attr("__version__") = "0.1.0";

    py::register_exception<healer::SourceSyntaxError>(m, "SourceSyntaxError",
                                                      PyExc_ValueError);
    py::register_exception<healer::ConfigError>(m, "ConfigError",
                                                PyExc_ValueError);

    m.def("parse_units", &parse_units_py, py::arg("source"),
          "Decompose a program into statement units");
    m.def("instrument", &instrument_py, py::arg("source"),
          "Rewrite a program with per-unit error handlers");
    m.def("run_healed", &run_healed_py, py::arg("source"),
          py::arg("stdin_payload") = "", py::arg("program_id") = "program",
          py::arg("config") = py::none(),
          "Execute a program with healing and return the run result");
    m.def("render_system_prompt", &render_system_prompt_py,
          py::arg("language") = "Python",
          py::arg("keywords") =
              std::vector<std::string>(healer::default_forbidden_keywords()),
          py::arg("template_path") = std::nullopt,
          "Render the system prompt for a language and keyword list");
    m.def("extract_handling_code", &extract_handling_code_py,
          py::arg("response"), "Extract tagged handling code from a response");
    m.def("check_forbidden", &check_forbidden_py, py::arg("code"),
          py::arg("keywords") =
              std::vector<std::string>(healer::default_forbidden_keywords()),
          "Return the first forbidden keyword used by the code, if any");
    m.def("measure_wrapper_overhead", &measure_wrapper_overhead_py,
          py::arg("iterations") = 1000000, py::arg("reps") = 5,
          "Time a loop body bare and inside the handler wrapper");
}
