#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ccb {

/// Invalid user input or a violated precondition. Maps to exit code 2 in the CLI.
class validation_error : public std::runtime_error {
 public:
  explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed file content. `line` is 1-based; 0 means "whole file".
class parse_error : public std::runtime_error {
 public:
  parse_error(const std::string& what, std::size_t line)
      : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// File declares a schema_version this build does not read.
class version_error : public std::runtime_error {
 public:
  version_error(const std::string& file_kind, int found, int expected)
      : std::runtime_error(file_kind + ": schema_version " + std::to_string(found) +
                           " not supported (expected " + std::to_string(expected) + ")") {}
};

/// Filesystem or OS-level failure. Maps to exit code 3 in the CLI.
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ccb
