#pragma once

#include <stdexcept>
#include <string>

namespace udsc {

enum class ErrorCode {
    dimension_mismatch,
    unknown_task,
    invalid_argument,
    index_out_of_range,
    insufficient_classes,
    missing_file,
    corrupted_stream,
    non_finite_loss,
    config_invalid,
    schema_mismatch,
    io,
    output_exists,
};

const char* to_string(ErrorCode code);

// All library failures surface as udsc::Error; the CLI maps the code to its
// machine-readable error JSON.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace udsc
