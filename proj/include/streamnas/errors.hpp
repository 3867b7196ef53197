#pragma once

#include <stdexcept>
#include <string>

namespace streamnas {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes incompatible for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Axis index out of range for the operand rank.
class AxisError : public Error {
public:
    using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Architecture token does not index a valid choice of its slot.
class TokenError : public Error {
public:
    using Error::Error;
};

/// Requested spectral resolution exceeds what the series can provide.
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Landmark layout inconsistent with the channel count of the series.
class LayoutError : public Error {
public:
    using Error::Error;
};

/// Clip does not survive preprocessing minimums.
class ClipRejected : public Error {
public:
    using Error::Error;
};

/// Fusion sampling invoked without the stream traces it conditions on.
class ConditioningError : public Error {
public:
    using Error::Error;
};

/// Joint probability requested for mismatched stream/fusion traces.
class FactorizationError : public Error {
public:
    using Error::Error;
};

/// Enumeration or search size exceeds the stated budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

/// Child training produced a non-finite loss.
class DivergedError : public Error {
public:
    DivergedError(const std::string& msg, int epoch) : Error(msg), epoch(epoch) {}
    int epoch;
};

/// Malformed or inconsistent input files during ingestion.
class IngestError : public Error {
public:
    using Error::Error;
};

/// A whole orchestration stage failed (e.g. every trial diverged).
class StageFailure : public Error {
public:
    using Error::Error;
};

/// File could not be read, written, or parsed.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace streamnas
