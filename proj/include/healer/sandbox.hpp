#pragma once

#include <optional>
#include <string>
#include <vector>

#include "healer/context.hpp"

namespace healer {

enum class Isolation { IN_PROCESS_NAMESPACE, SUBPROCESS };
enum class SandboxOutcome { SUCCESS, RAISED, TIMEOUT, FORBIDDEN };
enum class RemovedPolicy { KEEP, DELETE };

struct SandboxResult {
    SandboxOutcome outcome = SandboxOutcome::RAISED;
    StateSnapshot new_snapshot;  // SUCCESS only
    std::string error_type;      // RAISED only
    std::string error_message;
    double elapsed_ms = 0.0;
};

struct StateDiff {
    struct Item {
        std::string name;
        SerializedValue value;
        std::optional<py::object> handle;  // object to bind at merge time
    };
    std::vector<Item> changed;
    std::vector<Item> added;
    std::vector<std::string> removed;
    bool empty() const {
        return changed.empty() && added.empty() && removed.empty();
    }
};

struct MergeReport {
    std::vector<std::string> applied;
    std::vector<std::string> failed;
    bool ok() const { return failed.empty(); }
};

// Runs handling code against a scope seeded from the snapshot. The live
// program and the seed snapshot are never mutated; all failure modes are
// encoded in the outcome.
SandboxResult execute_handling(PythonRuntime& rt, const std::string& code,
                               const StateSnapshot& seed, double timeout_s,
                               Isolation isolation,
                               const std::vector<std::string>& forbidden,
                               const StateBudgets& budgets);

StateDiff diff_states(PythonRuntime& rt, const StateSnapshot& before,
                      const StateSnapshot& after);

MergeReport merge_diff(PythonRuntime& rt, py::dict live, const StateDiff& diff,
                       RemovedPolicy policy);

}  // namespace healer
