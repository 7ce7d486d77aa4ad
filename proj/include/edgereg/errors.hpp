#pragma once

#include <stdexcept>
#include <string>

namespace edgereg {

// Error taxonomy. The CLI maps these onto process exit codes:
//   argument/shape -> 2, format/data/io -> 3, numeric -> 4.
struct argument_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw argument_error(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw shape_error(msg);
}

} // namespace edgereg
