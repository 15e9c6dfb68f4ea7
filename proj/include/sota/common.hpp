#pragma once

#include <stdexcept>
#include <string>

namespace sota {

// Thrown when inputs violate a documented precondition or file schema.
// The CLI maps this to exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a file cannot be read or is not syntactically well formed.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sota
