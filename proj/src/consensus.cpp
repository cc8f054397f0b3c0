#include <dadb/consensus.hpp>
#include <dadb/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dadb {

std::string_view to_string(VerifyError e)
{
    switch (e) {
    case VerifyError::WrongIndex: return "WrongIndex";
    case VerifyError::PrevHashMismatch: return "PrevHashMismatch";
    case VerifyError::HashMismatch: return "HashMismatch";
    case VerifyError::InsufficientWork: return "InsufficientWork";
    case VerifyError::MalformedBlock: return "MalformedBlock";
    }
    return "Unknown";
}

int effective_bits(double difficulty, const ChainParams& params)
{
    auto bits = static_cast<int>(std::floor(difficulty + 0.5));
    return std::clamp(bits, params.min_difficulty, params.max_difficulty);
}

Block create_new_block(std::string data, const Block& head, int difficulty, std::uint64_t timestamp)
{
    if (contains_separator(data)) throw InputError("block data must not contain the 0x1F separator");
    if (difficulty < 0 || difficulty > kMaxDifficultyBits) throw InputError("difficulty out of range");
    Block b;
    b.index = head.index + 1;
    b.timestamp = timestamp;
    b.data = std::move(data);
    b.prev_hash = head.hash;
    b.difficulty = difficulty;
    b.nonce = 0;
    return b;
}

namespace {

bool leading_bits_zero(const Digest& d, int bits)
{
    int full = bits / 8;
    for (int i = 0; i < full; ++i)
        if (d[static_cast<std::size_t>(i)] != 0) return false;
    int rest = bits % 8;
    return rest == 0 || (d[static_cast<std::size_t>(full)] & static_cast<std::uint8_t>(0xff << (8 - rest))) == 0;
}

} // namespace

std::optional<Block> mine_block(Block block, const std::atomic<bool>* cancel)
{
    if (block.difficulty < 0 || block.difficulty > kMaxDifficultyBits) throw InputError("difficulty out of range");
    constexpr std::uint64_t poll_mask = (std::uint64_t{1} << 16) - 1;
    // The nonce is the last preimage field, so the prefix is reused across attempts.
    auto preimage = canonical_block_bytes(block);
    const auto prefix_len = preimage.size() - std::to_string(block.nonce).size();
    const std::uint64_t start = block.nonce;
    for (std::uint64_t nonce = start;; ++nonce) {
        if (((nonce - start) & poll_mask) == 0 && cancel && cancel->load(std::memory_order_relaxed))
            return std::nullopt;
        preimage.resize(prefix_len);
        preimage += std::to_string(nonce);
        auto digest = sha256(as_bytes(preimage));
        if (leading_bits_zero(digest, block.difficulty)) {
            block.nonce = nonce;
            block.hash = to_hex(digest);
            return block;
        }
        if (nonce == std::numeric_limits<std::uint64_t>::max()) break;
    }
    throw std::runtime_error("mine_block: nonce space exhausted");
}

std::optional<VerifyError> verify_block(const Block& block, const Block& head, const ChainParams& params)
{
    if (block.difficulty < 0 || block.difficulty > kMaxDifficultyBits || contains_separator(block.data) ||
        !is_lower_hex(block.hash, 64) || !is_lower_hex(block.prev_hash, 64))
        return VerifyError::MalformedBlock;
    if (block.index != head.index + 1) return VerifyError::WrongIndex;
    if (block.prev_hash != head.hash) return VerifyError::PrevHashMismatch;
    if (block.hash != block_hash(block)) return VerifyError::HashMismatch;
    if (!meets_difficulty(block.hash, block.difficulty) || block.difficulty < params.min_difficulty)
        return VerifyError::InsufficientWork;
    return std::nullopt;
}

double proportional_retarget(double d_current, double t_target_ms, double t_actual_ms)
{
    return d_current * (t_target_ms / t_actual_ms);
}

DifficultyState adjust_difficulty(DifficultyState state, const ChainParams& params)
{
    auto actual = std::max<std::int64_t>(state.t_actual_last_ms, 1);
    auto target = state.t_target_ms > 0 ? state.t_target_ms : params.target_block_interval_ms;
    double factor = static_cast<double>(target) / static_cast<double>(actual);
    factor = std::clamp(factor, params.retarget_clamp_lo, params.retarget_clamp_hi);
    state.d_current = std::clamp(state.d_current * factor, static_cast<double>(params.min_difficulty),
                                 static_cast<double>(params.max_difficulty));
    state.t_actual_last_ms = actual;
    return state;
}

DifficultyState difficulty_after(std::span<const Block> chain, const ChainParams& params)
{
    DifficultyState st;
    st.d_current = params.initial_difficulty;
    st.t_target_ms = params.target_block_interval_ms;
    for (std::size_t i = 1; i < chain.size(); ++i) {
        auto prev = chain[i - 1].timestamp;
        auto cur = chain[i].timestamp;
        st.t_actual_last_ms = cur > prev ? static_cast<std::int64_t>(cur - prev) * 1000 : 0;
        st = adjust_difficulty(st, params);
    }
    return st;
}

std::optional<ChainFault> verify_chain(std::span<const Block> chain, const ChainParams& params)
{
    if (chain.empty() || chain.front() != genesis_block()) return ChainFault{0, VerifyError::MalformedBlock};
    for (std::size_t i = 1; i < chain.size(); ++i) {
        if (auto err = verify_block(chain[i], chain[i - 1], params)) return ChainFault{chain[i].index, *err};
    }
    return std::nullopt;
}

ChainChoice choose_chain(std::span<const Block> local, std::span<const Block> candidate, const ChainParams& params)
{
    if (auto fault = verify_chain(candidate, params)) return {ChainChoice::Outcome::Rejected, fault};
    if (cumulative_work(candidate) > cumulative_work(local)) return {ChainChoice::Outcome::AdoptCandidate, {}};
    return {ChainChoice::Outcome::KeepLocal, {}};
}

} // namespace dadb
