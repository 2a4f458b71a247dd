#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace erft {

// Error taxonomy shared by the whole toolkit. The CLI maps kinds to exit
// codes (config-like -> 2, geometry -> 3, I/O and format -> 4).
enum class ErrorKind {
    Config,          // bad parameter / option value
    Geometry,        // shape or ratio mismatch
    Io,              // filesystem failures, truncated files
    Format,          // bad magic / unsupported version
    Validation,      // content violates an invariant (non-finite, duplicate)
    Contract,        // API misuse (frozen/unfrozen state, missing patch)
    MetricUndefined, // every window of a metric was degenerate
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) raise(kind, msg);
}

} // namespace erft
