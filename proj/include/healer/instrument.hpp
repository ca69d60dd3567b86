#pragma once

#include <map>
#include <set>
#include <string>

#include "healer/runtime.hpp"

namespace healer {

// Marker that rejects double instrumentation.
inline constexpr const char* kInstrumentSentinel = "# __healer_instrumented__";
// Name the rewritten source calls into; the engine binds it before execution.
inline constexpr const char* kHandlerName = "__healer_handle__";

struct InstrumentedProgram {
    std::string source;
    std::map<int, LineSpan> unit_map;  // unit_id -> span in original source
    std::set<int> wrapped_ids;
    std::string original_source;
};

InstrumentedProgram instrument(PythonRuntime& rt, const std::string& source);

LineSpan resolve_unit(const std::map<int, LineSpan>& unit_map, int unit_id);

}  // namespace healer
