#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stcn {

enum class ErrorKind {
    InvalidArgument,
    DuplicateKey,
    NonUniformWeeks,
    CoordinateOutOfBounds,
    UnknownColumn,
    InconsistentLocation,
    NonStaticValue,
    ParseError,
    ExhaustedDataset,
    InvalidSplit,
    InvalidFolds,
    SingularKernel,
    DimensionMismatch,
    DegenerateVariogram,
    RankDeficient,
    TooFewRows,
    SchemaMismatch,
    ZeroRows,
    UnfittedNode,
    MismatchedDatasets,
    Unsatisfiable,
    NotApplicable,
    InvalidPValues,
    EmptyValidation,
    MissingInitialValues,
    ScopeDisjoint,
    NoParents,
    AnchorMissing,
    UnstableSpec,
    InvalidRate,
    Io,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DuplicateKey: return "DuplicateKey";
    case ErrorKind::NonUniformWeeks: return "NonUniformWeeks";
    case ErrorKind::CoordinateOutOfBounds: return "CoordinateOutOfBounds";
    case ErrorKind::UnknownColumn: return "UnknownColumn";
    case ErrorKind::InconsistentLocation: return "InconsistentLocation";
    case ErrorKind::NonStaticValue: return "NonStaticValue";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ExhaustedDataset: return "ExhaustedDataset";
    case ErrorKind::InvalidSplit: return "InvalidSplit";
    case ErrorKind::InvalidFolds: return "InvalidFolds";
    case ErrorKind::SingularKernel: return "SingularKernel";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DegenerateVariogram: return "DegenerateVariogram";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::ZeroRows: return "ZeroRows";
    case ErrorKind::UnfittedNode: return "UnfittedNode";
    case ErrorKind::MismatchedDatasets: return "MismatchedDatasets";
    case ErrorKind::Unsatisfiable: return "Unsatisfiable";
    case ErrorKind::NotApplicable: return "NotApplicable";
    case ErrorKind::InvalidPValues: return "InvalidPValues";
    case ErrorKind::EmptyValidation: return "EmptyValidation";
    case ErrorKind::MissingInitialValues: return "MissingInitialValues";
    case ErrorKind::ScopeDisjoint: return "ScopeDisjoint";
    case ErrorKind::NoParents: return "NoParents";
    case ErrorKind::AnchorMissing: return "AnchorMissing";
    case ErrorKind::UnstableSpec: return "UnstableSpec";
    case ErrorKind::InvalidRate: return "InvalidRate";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

// Numerical failures map to exit code 3 in the CLI, everything else to 2.
inline bool is_numerical(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::SingularKernel:
    case ErrorKind::DegenerateVariogram:
    case ErrorKind::RankDeficient:
    case ErrorKind::UnstableSpec:
    case ErrorKind::Unsatisfiable:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace stcn
