#pragma once

#include <json.hpp>

#include <string>

namespace healer {

enum class AuditStage {
    INTERCEPT,
    CAPTURE,
    PROMPT,
    COMPLETE,
    EXTRACT,
    SANDBOX,
    MERGE,
    RESUME,
    TERMINATE
};

const char* audit_stage_name(AuditStage stage);

// Append-only JSON-lines sink. One write(2) per event keeps lines atomic
// across forked bench workers; emit never raises into the healing path.
class AuditSink {
public:
    AuditSink() = default;  // discard
    ~AuditSink();
    AuditSink(AuditSink&& other) noexcept;
    AuditSink& operator=(AuditSink&& other) noexcept;
    AuditSink(const AuditSink&) = delete;
    AuditSink& operator=(const AuditSink&) = delete;

    static AuditSink discard();
    static AuditSink to_file(const std::string& path);

    bool enabled() const { return fd_ >= 0; }
    void emit(AuditStage stage, const std::string& run_id,
              nlohmann::json payload) noexcept;

private:
    int fd_ = -1;
};

}  // namespace healer
