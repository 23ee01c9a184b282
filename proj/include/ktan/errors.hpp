#pragma once

#include <stdexcept>
#include <string>

namespace ktan {

// Incompatible tensor extents (operand shapes, label ranges, batch layout).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Convolution/pool output-extent equations with no integral positive solution.
class GeometryError : public std::runtime_error {
public:
    explicit GeometryError(const std::string& what) : std::runtime_error(what) {}
};

// On-disk format violations: bad magic, version, truncation, range.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Config file problems (unknown key, bad value, missing prerequisite).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value detected in a loss or parameter; carries the component name.
class NanError : public std::runtime_error {
public:
    explicit NanError(const std::string& component)
        : std::runtime_error("non-finite value in " + component), component_(component) {}
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

}  // namespace ktan
