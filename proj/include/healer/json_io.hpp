#pragma once

#include <json.hpp>

#include <filesystem>
#include <vector>

#include "healer/engine.hpp"

namespace healer {

nlohmann::json trace_to_json(const HealingTrace& trace);
HealingTrace trace_from_json(const nlohmann::json& j);

nlohmann::json run_result_to_json(const RunResult& result);
RunResult run_result_from_json(const nlohmann::json& j);

void write_results_file(const std::filesystem::path& path,
                        const std::vector<RunResult>& results);
std::vector<RunResult> read_results_file(const std::filesystem::path& path);

// Flat JSON mirroring HealerConfig field names; unknown keys rejected.
HealerConfig config_from_json(const nlohmann::json& j, HealerConfig base);
HealerConfig load_config_file(const std::filesystem::path& path,
                              HealerConfig base);

const char* extraction_name(Extraction extraction);
const char* sandbox_outcome_name(SandboxOutcome outcome);

}  // namespace healer
