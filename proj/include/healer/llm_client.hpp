#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "healer/prompting.hpp"

namespace healer {

enum class BackendKind { REMOTE, REPLAY, STUB };

struct BackendConfig {
    BackendKind backend = BackendKind::STUB;
    std::string model_name = "stub-model";
    std::string endpoint_url;
    std::string api_key_env_var = "HEALER_API_KEY";
    double temperature = 0.0;
    double request_timeout_s = 30.0;
    int max_retries = 2;
    std::string record_dir;   // non-empty: persist completions
    std::string replay_dir;   // REPLAY lookup directory
    std::string stub_rules_path;
    std::string instance_tag;  // keys per-instance stub overrides
    double rate_limit_per_min = 0.0;  // 0 = unlimited
};

struct TokenUsage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

struct CompletionRecord {
    std::string prompt_digest;
    std::string response;
    double latency_ms = 0.0;
    std::optional<TokenUsage> token_usage;
    std::optional<double> cost_estimate;
};

enum class LlmStatus { OK, MISSING_CREDENTIALS, LLM_UNAVAILABLE, LLM_REFUSED };

struct CompletionOutcome {
    LlmStatus status = LlmStatus::LLM_UNAVAILABLE;
    CompletionRecord record;
    std::string detail;
};

// Directory of <digest>.json files; writes are atomic (temp then rename).
class RecordStore {
public:
    explicit RecordStore(std::filesystem::path dir);
    void put(const CompletionRecord& record);
    std::optional<CompletionRecord> get(const std::string& digest) const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
};

void record_completion(RecordStore& store, const CompletionRecord& record);
std::optional<CompletionRecord> lookup_completion(const RecordStore& store,
                                                  const std::string& digest);

struct StubRule {
    std::string pattern;   // regex matched against the user prompt
    std::string response;  // may reference captures as {0}..{9}
};

struct StubRules {
    std::vector<StubRule> rules;
    std::map<std::string, std::string> overrides;  // instance tag -> response
    static StubRules defaults();
    static StubRules from_file(const std::filesystem::path& path);
};

class LlmClient {
public:
    explicit LlmClient(BackendConfig cfg);
    ~LlmClient();

    // Total: every failure mode is reported in the outcome status.
    CompletionOutcome complete(const PromptPair& pair);

    const BackendConfig& config() const { return cfg_; }

private:
    CompletionOutcome complete_remote(const PromptPair& pair,
                                      const std::string& digest);
    CompletionOutcome complete_replay(const std::string& digest);
    CompletionOutcome complete_stub(const PromptPair& pair,
                                    const std::string& digest);

    BackendConfig cfg_;
    StubRules stub_rules_;
    std::unique_ptr<RecordStore> record_store_;
    std::unique_ptr<RecordStore> replay_store_;
};

}  // namespace healer
