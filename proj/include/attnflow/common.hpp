// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace attnflow {

// Precondition / dimension-mismatch failures. Maps to CLI exit code 1.
class ContractViolation : public std::invalid_argument {
public:
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Iterative routine did not converge, or a value left its admissible range.
// Maps to CLI exit code 2.
class NumericalFailure : public std::runtime_error {
public:
    explicit NumericalFailure(const std::string& what) : std::runtime_error(what) {}
};

// A state collapsed below the renormalizable threshold (integration step too
// large). Subtype of numerical failure.
class DegenerateState : public NumericalFailure {
public:
    explicit DegenerateState(const std::string& what) : NumericalFailure(what) {}
};

// Filesystem problems while emitting outputs. Maps to CLI exit code 3.
class IoFailure : public std::runtime_error {
public:
    explicit IoFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace attnflow
