#pragma once

#include <stdexcept>
#include <string>

namespace featret {

// Base for every failure the library reports.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// A command was invoked without something it needs (a path, an option).
class UsageError : public Error {
public:
    using Error::Error;
};

} // namespace featret
