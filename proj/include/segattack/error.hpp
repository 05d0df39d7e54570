#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segattack {

enum class ErrorKind {
  invalid_input,
  shape,
  config,
  adapter,
  io,
  load,
  numeric,
  manifest,
  format,
  generation,
  training,
  index,
  undefined_metric,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace segattack
