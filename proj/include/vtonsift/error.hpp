#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vtonsift {

enum class ErrorCode {
  MalformedImage,
  InvalidSigma,
  TooSmall,
  ImageTooSmall,
  EmptyKeypoints,
  InvalidArgument,
  DegenerateConfiguration,
  OutOfBounds,
  LengthMismatch,
  ResolutionMismatch,
  NoSupervisedQueries,
  DimMismatch,
  IndexOutOfRange,
  MissingDirectory,
  ParseError,
  IoError,
};

std::string_view to_string(ErrorCode code);

// All library failures are reported through this type; `code()` identifies
// the contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace vtonsift
