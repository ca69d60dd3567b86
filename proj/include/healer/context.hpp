#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "healer/instrument.hpp"
#include "healer/runtime.hpp"

namespace healer {

inline constexpr const char* kReservedPrefix = "__healer_";
inline constexpr const char* kOmittedRendering = "<omitted>";

struct StateBudgets {
    long per_value_chars = 200;
    long total_chars = 4000;
};

enum class SerializationStatus { FULL, REPR_ONLY, OMITTED };

struct SerializedValue {
    std::string type_name;
    std::string rendering;
    SerializationStatus status = SerializationStatus::REPR_ONLY;
    bool truncated = false;
    bool operator==(const SerializedValue&) const = default;
};

// Immutable once captured. FULL entries are value-isolated through deep
// copies; REPR_ONLY and OMITTED entries keep a handle to the originating
// object so in-process sandboxing can share them.
struct StateSnapshot {
    struct Entry {
        std::string name;
        SerializedValue value;
        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> entries;  // insertion order: globals, then locals
    std::map<std::string, py::object> full_copies;
    std::map<std::string, py::object> origin_handles;  // non-FULL entries
    int captured_at_unit = -1;

    const SerializedValue* find(const std::string& name) const;
    // Spec-visible view: handles for REPR_ONLY entries only.
    std::map<std::string, py::object> live_refs() const;
    bool same_entries(const StateSnapshot& other) const;
};

struct ErrorContext {
    std::string error_type;
    std::string error_message;  // never empty; falls back to error_type
    LineSpan span;
    int unit_id = -1;
    std::string source;  // original program text
    StateSnapshot snapshot;
};

SerializedValue serialize_value(PythonRuntime& rt, const py::handle& value,
                                const StateBudgets& budgets);

StateSnapshot capture_state(PythonRuntime& rt, const py::dict& globals,
                            const py::dict& locals, int unit_id,
                            const StateBudgets& budgets);

// Captures a single namespace (the sandbox's result scope).
StateSnapshot capture_namespace(PythonRuntime& rt, const py::dict& ns,
                                int unit_id, const StateBudgets& budgets);

ErrorContext build_error_context(const ErrorDescriptor& error,
                                 StateSnapshot snapshot,
                                 const InstrumentedProgram& program,
                                 int unit_id);

bool is_reserved_name(const std::string& name);

}  // namespace healer
