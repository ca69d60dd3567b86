#include "healer/audit.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>

#include "healer/log.hpp"

namespace healer {

const char* audit_stage_name(AuditStage stage) {
    switch (stage) {
        case AuditStage::INTERCEPT: return "INTERCEPT";
        case AuditStage::CAPTURE: return "CAPTURE";
        case AuditStage::PROMPT: return "PROMPT";
        case AuditStage::COMPLETE: return "COMPLETE";
        case AuditStage::EXTRACT: return "EXTRACT";
        case AuditStage::SANDBOX: return "SANDBOX";
        case AuditStage::MERGE: return "MERGE";
        case AuditStage::RESUME: return "RESUME";
        case AuditStage::TERMINATE: return "TERMINATE";
    }
    return "UNKNOWN";
}

AuditSink::~AuditSink() {
    if (fd_ >= 0) ::close(fd_);
}

AuditSink::AuditSink(AuditSink&& other) noexcept : fd_(other.fd_) {
    other.fd_ = -1;
}

AuditSink& AuditSink::operator=(AuditSink&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

AuditSink AuditSink::discard() { return AuditSink(); }

AuditSink AuditSink::to_file(const std::string& path) {
    AuditSink sink;
    sink.fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (sink.fd_ < 0)
        log::warn_once("audit-open",
                       "cannot open audit file " + path + "; auditing disabled");
    return sink;
}

void AuditSink::emit(AuditStage stage, const std::string& run_id,
                     nlohmann::json payload) noexcept {
    if (fd_ < 0) return;
    try {
        double ts =
            std::chrono::duration<double>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
        nlohmann::json event{{"ts", ts},
                             {"run_id", run_id},
                             {"stage", audit_stage_name(stage)},
                             {"payload", std::move(payload)}};
        std::string line = event.dump();
        line.push_back('\n');
        if (::write(fd_, line.data(), line.size()) < 0) {
            log::warn_once("audit-write",
                           "audit write failed; further events discarded");
            ::close(fd_);
            fd_ = -1;
        }
    } catch (...) {
        log::warn_once("audit-emit", "audit serialization failed; discarding");
    }
}

}  // namespace healer
