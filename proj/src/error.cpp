#include "vtonsift/error.hpp"

namespace vtonsift {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedImage: return "MalformedImage";
    case ErrorCode::InvalidSigma: return "InvalidSigma";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::EmptyKeypoints: return "EmptyKeypoints";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ResolutionMismatch: return "ResolutionMismatch";
    case ErrorCode::NoSupervisedQueries: return "NoSupervisedQueries";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::MissingDirectory: return "MissingDirectory";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace vtonsift
