#pragma once

#include <dadb/chain.hpp>

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace dadb {

/**
 * Retarget state. Difficulty is kept real-valued across retargets and only
 * rounded to whole bits when a block is created or checked; integer bits
 * would quantize the multiplicative update too coarsely.
 */
struct DifficultyState {
    double d_current = 0.0;
    std::int64_t t_target_ms = 0;
    std::int64_t t_actual_last_ms = 0;

    bool operator==(const DifficultyState&) const = default;
};

enum class VerifyError {
    WrongIndex,
    PrevHashMismatch,
    HashMismatch,
    InsufficientWork,
    MalformedBlock,
};

std::string_view to_string(VerifyError e);

/// Difficulty bits a real-valued difficulty maps to: round half up, then clamp to the params' bounds.
int effective_bits(double difficulty, const ChainParams& params);

/// Unmined successor of `head`: nonce 0, hash empty. Throws InputError if data contains 0x1F.
Block create_new_block(std::string data, const Block& head, int difficulty, std::uint64_t timestamp);

/**
 * Searches nonces upward from block.nonce until the hash meets block.difficulty.
 * The cancel flag is polled every 2^16 attempts (including before the first);
 * returns nullopt if it was observed set. Throws std::runtime_error if the
 * nonce space is exhausted.
 */
std::optional<Block> mine_block(Block block, const std::atomic<bool>* cancel = nullptr);

/**
 * Checks `block` as the successor of `head`: structure, then index, prev hash,
 * hash recomputation and proof of work, in that order. Returns the first failure.
 */
std::optional<VerifyError> verify_block(const Block& block, const Block& head, const ChainParams& params);

/// D_current * T_target / T_actual with no clamping or rounding.
double proportional_retarget(double d_current, double t_target_ms, double t_actual_ms);

/// One retarget step: factor clamped to the params' clamp range, result clamped to [min, max] difficulty.
DifficultyState adjust_difficulty(DifficultyState state, const ChainParams& params);

/// Replays the per-block retarget over a chain's timestamps, starting from the initial difficulty.
DifficultyState difficulty_after(std::span<const Block> chain, const ChainParams& params);

struct ChainFault {
    std::uint64_t index = 0;
    VerifyError error = VerifyError::MalformedBlock;
};

/// Full verification from an identical genesis. Returns the first failing block, if any.
std::optional<ChainFault> verify_chain(std::span<const Block> chain, const ChainParams& params);

struct ChainChoice {
    enum class Outcome { KeepLocal, AdoptCandidate, Rejected };
    Outcome outcome = Outcome::KeepLocal;
    std::optional<ChainFault> fault;
};

/// Greatest cumulative work wins; ties keep the local chain.
ChainChoice choose_chain(std::span<const Block> local, std::span<const Block> candidate, const ChainParams& params);

} // namespace dadb
