#pragma once

#include <stdexcept>

namespace dadb {

/// Caller passed a value outside an operation's domain.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Persistence failure; the store is left at its last committed state.
struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or oversized data on a connection. The connection is dropped.
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NetworkError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace dadb
