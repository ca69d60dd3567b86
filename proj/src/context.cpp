#include "healer/context.hpp"

#include <array>

#include "healer/errors.hpp"

namespace healer {

namespace {

// Interpreter-managed module attributes; never part of program state.
constexpr std::array<const char*, 9> kModuleDunders = {
    "__builtins__", "__name__", "__doc__",        "__package__", "__loader__",
    "__spec__",     "__file__", "__annotations__", "__cached__"};

bool is_module_dunder(const std::string& name) {
    for (const char* dunder : kModuleDunders) {
        if (name == dunder) return true;
    }
    return false;
}

void capture_scope(PythonRuntime& rt, const py::dict& scope,
                   const StateBudgets& budgets, StateSnapshot& snap,
                   std::map<std::string, size_t>& index) {
    for (const auto& item : scope) {
        // A non-string key cannot be a variable name.
        if (!PyUnicode_Check(item.first.ptr())) continue;
        std::string name = py::str(item.first).cast<std::string>();
        if (is_reserved_name(name) || is_module_dunder(name)) continue;
        py::object value = py::reinterpret_borrow<py::object>(item.second);
        SerializedValue sv = serialize_value(rt, value, budgets);

        auto it = index.find(name);
        if (it == index.end()) {
            index[name] = snap.entries.size();
            snap.entries.push_back({name, sv});
        } else {
            // Shadowing keeps the first position, updates the value.
            snap.entries[it->second].value = sv;
            snap.full_copies.erase(name);
            snap.origin_handles.erase(name);
        }
        if (sv.status == SerializationStatus::FULL) {
            auto copy = rt.try_deepcopy(value);
            if (copy) {
                snap.full_copies[name] = *copy;
            } else {
                // Literal-roundtrippable values deep-copy; treat a failure
                // as degradation rather than dropping the entry.
                snap.entries[index[name]].value.status =
                    SerializationStatus::REPR_ONLY;
                snap.origin_handles[name] = value;
            }
        } else {
            snap.origin_handles[name] = value;
        }
    }
}

}  // namespace

bool is_reserved_name(const std::string& name) {
    return name.rfind(kReservedPrefix, 0) == 0;
}

const SerializedValue* StateSnapshot::find(const std::string& name) const {
    for (const auto& entry : entries) {
        if (entry.name == name) return &entry.value;
    }
    return nullptr;
}

std::map<std::string, py::object> StateSnapshot::live_refs() const {
    std::map<std::string, py::object> refs;
    for (const auto& entry : entries) {
        if (entry.value.status != SerializationStatus::REPR_ONLY) continue;
        auto it = origin_handles.find(entry.name);
        if (it != origin_handles.end()) refs.emplace(entry.name, it->second);
    }
    return refs;
}

bool StateSnapshot::same_entries(const StateSnapshot& other) const {
    return entries == other.entries;
}

SerializedValue serialize_value(PythonRuntime& rt, const py::handle& value,
                                const StateBudgets& budgets) {
    SerializedValue sv;
    sv.type_name = rt.type_name(value);
    auto rendering = rt.try_repr(value);
    if (!rendering) {
        sv.status = SerializationStatus::OMITTED;
        sv.rendering = kOmittedRendering;
        return sv;
    }
    sv.status = rt.literal_roundtrip(value, *rendering)
                    ? SerializationStatus::FULL
                    : SerializationStatus::REPR_ONLY;
    auto [text, truncated] = rt.truncate_chars(*rendering, budgets.per_value_chars);
    sv.rendering = std::move(text);
    sv.truncated = truncated;
    return sv;
}

StateSnapshot capture_state(PythonRuntime& rt, const py::dict& globals,
                            const py::dict& locals, int unit_id,
                            const StateBudgets& budgets) {
    StateSnapshot snap;
    snap.captured_at_unit = unit_id;
    std::map<std::string, size_t> index;
    capture_scope(rt, globals, budgets, snap, index);
    if (!locals.is(globals)) capture_scope(rt, locals, budgets, snap, index);
    return snap;
}

StateSnapshot capture_namespace(PythonRuntime& rt, const py::dict& ns,
                                int unit_id, const StateBudgets& budgets) {
    StateSnapshot snap;
    snap.captured_at_unit = unit_id;
    std::map<std::string, size_t> index;
    capture_scope(rt, ns, budgets, snap, index);
    return snap;
}

ErrorContext build_error_context(const ErrorDescriptor& error,
                                 StateSnapshot snapshot,
                                 const InstrumentedProgram& program,
                                 int unit_id) {
    ErrorContext ctx;
    ctx.error_type = error.type;
    ctx.error_message = error.message.empty() ? error.type : error.message;
    ctx.span = resolve_unit(program.unit_map, unit_id);
    ctx.unit_id = unit_id;
    ctx.source = program.original_source;
    ctx.snapshot = std::move(snapshot);
    return ctx;
}

}  // namespace healer
