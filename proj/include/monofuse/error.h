#pragma once

#include <stdexcept>
#include <string>

namespace monofuse {

enum class ErrorKind {
    BehindCamera,
    Domain,
    Dimension,
    NoSparseAnchor,
    DegenerateInput,
    NoSparsePoints,
    NoOverlap,
    NoMatches,
    NoSimulatedCoverage,
    EmptyReconstruction,
    NoSurface,
    EmptyMesh,
    UnconstrainedProblem,
    InvalidTrajectory,
    UnknownCorruption,
    Io,
    Validation,
    Refused,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message),
          kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace monofuse
