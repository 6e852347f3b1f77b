#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fmps {

// Violated precondition or shape contract. The message names the offending
// values (both shapes for shape mismatches).
struct ContractViolation : std::invalid_argument {
    explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

// Sampler or optimizer state went non-finite.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " at step " + std::to_string(step)), step_index(step) {}
    std::size_t step_index;
};

// Checkpoint parsing failures, one kind per failure mode.
struct CheckpointError : std::runtime_error {
    enum class Kind { BadMagic, BadVersion, Truncated, Corrupt, Io };
    CheckpointError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
    Kind kind;
};

// Config file problem; carries the 1-based line number when known (0 otherwise).
struct ConfigError : std::runtime_error {
    ConfigError(const std::string& what, std::size_t line_no)
        : std::runtime_error(line_no ? ("line " + std::to_string(line_no) + ": " + what) : what),
          line(line_no) {}
    std::size_t line;
};

// File format problems outside checkpoints (images, IDX, CSV).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fmps
