#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pvscan {

enum class Errc {
    precondition,
    no_such_label,
    invalid_region,
    malformed_response,
    insufficient_sites,
    auth_error,
    rate_limited,
    decode_error,
    encode_error,
    invalid_spec,
    out_of_range,
    not_enough_examples,
    backend_unavailable,
    replay_miss,
    alignment_error,
    empty_evaluation,
    empty_subset,
    length_mismatch,
    empty_class,
    not_found,
    already_resolved,
    too_few_labels,
    missing_tile,
    missing_label,
    io_error,
    invalid_argument,
    locked,
};

std::string_view to_string(Errc code);

// Every failure raised by the library carries a category so the CLI and the
// HTTP service can map it to exit codes / status codes.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace pvscan
