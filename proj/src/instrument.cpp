#include "healer/instrument.hpp"

#include <sstream>

#include "healer/errors.hpp"

namespace healer {

namespace {

bool contains_sentinel(const std::string& source) {
    std::istringstream lines(source);
    std::string line;
    while (std::getline(lines, line)) {
        if (line == kInstrumentSentinel) return true;
    }
    return false;
}

void append_indented(std::string& out, const std::string& block,
                     const char* prefix) {
    size_t pos = 0;
    while (pos <= block.size()) {
        size_t nl = block.find('\n', pos);
        size_t end = (nl == std::string::npos) ? block.size() : nl;
        out.append(prefix);
        out.append(block, pos, end - pos);
        out.push_back('\n');
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
}

}  // namespace

InstrumentedProgram instrument(PythonRuntime& rt, const std::string& source) {
    if (contains_sentinel(source)) throw AlreadyInstrumentedError();

    InstrumentedProgram out;
    out.original_source = source;

    auto units = rt.parse_units(source);
    for (const auto& unit : units) out.unit_map[unit.unit_id] = unit.span;
    if (units.empty()) return out;  // source stays ""

    // Top-level statements are the k-th nesting-0 units, in order; their ids
    // are what the wrapper reports to the handler.
    std::vector<int> top_level_ids;
    for (const auto& unit : units) {
        if (unit.nesting == 0) top_level_ids.push_back(unit.unit_id);
    }
    auto rendered = rt.render_top_level(source);
    if (rendered.size() != top_level_ids.size())
        throw std::logic_error("unit scan and top-level render disagree");

    std::string text;
    text.append(kInstrumentSentinel);
    text.push_back('\n');
    for (size_t k = 0; k < rendered.size(); ++k) {
        const auto& stmt = rendered[k];
        int unit_id = top_level_ids[k];
        if (stmt.is_future_import) {
            // The grammar pins these to the top of the module; they cannot
            // live inside a try block.
            text.append(stmt.text);
            text.push_back('\n');
            continue;
        }
        text.append("try:\n");
        append_indented(text, stmt.text, "    ");
        text.append("except Exception as __healer_e:\n");
        text.append("    if not ");
        text.append(kHandlerName);
        text.append("(");
        text.append(std::to_string(unit_id));
        text.append(", __healer_e, globals(), locals()):\n");
        text.append("        raise\n");
        out.wrapped_ids.insert(unit_id);
    }
    out.source = std::move(text);
    return out;
}

LineSpan resolve_unit(const std::map<int, LineSpan>& unit_map, int unit_id) {
    auto it = unit_map.find(unit_id);
    if (it == unit_map.end()) throw UnknownUnitError(unit_id);
    return it->second;
}

}  // namespace healer
