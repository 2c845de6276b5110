#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmodal {

// Categories surfaced by the CLI as "error[<category>]: ...".
enum class ErrorKind {
  dimension,
  index,
  config,
  empty_sequence,
  degenerate_mask,
  unsupported_ablation,
  validation,
  degenerate_class,
  incompatible,
  load,
  spec,
  domain,
  divergence,
  probe,
  undefined_metric,
  io,
  usage,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace xmodal
