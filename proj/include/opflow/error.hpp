#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace opflow {

enum class Errc {
  invalid_argument,
  isolated_node,
  disconnected_after_retries,
  parse_error,
  negative_weight,
  asymmetric_input,
  nonpositive_state,
  division_by_zero_lambda,
  step_size_underflow,
  insufficient_decay,
  max_iter_exceeded,
  singular_jacobian,
  line_search_failed,
  singular_system,
  nash_violation,
  distinct_roots,
  missing_dataset,
  config_error,
  io_error,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::isolated_node: return "IsolatedNode";
    case Errc::disconnected_after_retries: return "DisconnectedAfterRetries";
    case Errc::parse_error: return "ParseError";
    case Errc::negative_weight: return "NegativeWeight";
    case Errc::asymmetric_input: return "AsymmetricInput";
    case Errc::nonpositive_state: return "NonpositiveState";
    case Errc::division_by_zero_lambda: return "DivisionByZeroLambda";
    case Errc::step_size_underflow: return "StepSizeUnderflow";
    case Errc::insufficient_decay: return "InsufficientDecay";
    case Errc::max_iter_exceeded: return "MaxIterExceeded";
    case Errc::singular_jacobian: return "SingularJacobian";
    case Errc::line_search_failed: return "LineSearchFailed";
    case Errc::singular_system: return "SingularSystem";
    case Errc::nash_violation: return "NashViolation";
    case Errc::distinct_roots: return "DistinctRoots";
    case Errc::missing_dataset: return "MissingDataset";
    case Errc::config_error: return "ConfigError";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. `index` carries the offending node, line, step or
/// agent when the error has one; `value` carries an associated scalar (a
/// candidate opinion, a residual, ...).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what,
        std::optional<std::size_t> index = std::nullopt,
        std::optional<double> value = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code), index_(index), value_(value) {}

  Errc code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }
  std::optional<double> value() const noexcept { return value_; }

 private:
  Errc code_;
  std::optional<std::size_t> index_;
  std::optional<double> value_;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::invalid_argument, what);
}

}  // namespace detail
}  // namespace opflow
