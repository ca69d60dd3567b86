#pragma once

#include <stdexcept>
#include <string>

namespace healer {

// Subject-language parse failure, with 1-based position when known.
struct SourceSyntaxError : std::runtime_error {
    SourceSyntaxError(std::string msg, int line, int column)
        : std::runtime_error(std::move(msg)), line(line), column(column) {}
    int line = 0;
    int column = 0;
};

struct UnknownUnitError : std::runtime_error {
    explicit UnknownUnitError(int unit_id)
        : std::runtime_error("unknown unit id " + std::to_string(unit_id)),
          unit_id(unit_id) {}
    int unit_id;
};

struct AlreadyInstrumentedError : std::runtime_error {
    AlreadyInstrumentedError()
        : std::runtime_error("source is already instrumented") {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CorpusParseError : std::runtime_error {
    CorpusParseError(const std::string& msg, int line_no)
        : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"),
          line_no(line_no) {}
    int line_no;
};

struct DuplicateIdError : std::runtime_error {
    explicit DuplicateIdError(const std::string& id)
        : std::runtime_error("duplicate instance id '" + id + "'"), id(id) {}
    std::string id;
};

}  // namespace healer
