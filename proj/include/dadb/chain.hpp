#pragma once

#include <dadb/crypto.hpp>

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dadb {

inline constexpr char kFieldSeparator = '\x1f';
inline constexpr int kMaxDifficultyBits = 32;
inline const std::string kZeroHash(64, '0');

struct Block {
    std::uint64_t index = 0;
    std::uint64_t timestamp = 0; // Unix seconds, set by the creator
    std::string data;
    std::string prev_hash;
    std::string hash;
    int difficulty = 0;
    std::uint64_t nonce = 0;

    bool operator==(const Block&) const = default;
};

using Chain = std::vector<Block>;

struct ChainParams {
    std::int64_t target_block_interval_ms = 10000;
    int initial_difficulty = 8;
    int min_difficulty = 1;
    int max_difficulty = 32;
    double retarget_clamp_lo = 0.5;
    double retarget_clamp_hi = 2.0;

    /// Throws InputError unless 1 <= min <= initial <= max <= 32 and 0 < lo <= 1 <= hi.
    void validate() const;
};

/// index, timestamp, data, prev_hash, difficulty, nonce joined by 0x1F; the hash field is not part of it.
std::string canonical_block_bytes(const Block& block);

std::string block_hash(const Block& block);

/// True iff the first `bits` bits of the digest are zero, most significant bit of byte 0 first.
bool meets_difficulty(std::string_view hash_hex, int bits);

Block genesis_block();

/// Throws InputError if the chain does not start at genesis-shaped index 0 or a link is broken.
void check_linkage(std::span<const Block> chain);

/// Sum of 2^difficulty over every block except genesis.
std::uint64_t cumulative_work(std::span<const Block> chain);

bool contains_separator(std::string_view s);

void to_json(nlohmann::json& j, const Block& b);
void from_json(const nlohmann::json& j, Block& b);

} // namespace dadb
