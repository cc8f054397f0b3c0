#include <dadb/chain.hpp>
#include <dadb/errors.hpp>

#include <string>

namespace dadb {

void ChainParams::validate() const
{
    if (!(1 <= min_difficulty && min_difficulty <= initial_difficulty && initial_difficulty <= max_difficulty &&
          max_difficulty <= kMaxDifficultyBits))
        throw InputError("chain params: require 1 <= min <= initial <= max <= 32");
    if (!(0.0 < retarget_clamp_lo && retarget_clamp_lo <= 1.0 && 1.0 <= retarget_clamp_hi))
        throw InputError("chain params: require 0 < clamp lo <= 1 <= clamp hi");
    if (target_block_interval_ms <= 0) throw InputError("chain params: target interval must be positive");
}

std::string canonical_block_bytes(const Block& block)
{
    std::string out;
    out.reserve(block.data.size() + block.prev_hash.size() + 64);
    out += std::to_string(block.index);
    out += kFieldSeparator;
    out += std::to_string(block.timestamp);
    out += kFieldSeparator;
    out += block.data;
    out += kFieldSeparator;
    out += block.prev_hash;
    out += kFieldSeparator;
    out += std::to_string(block.difficulty);
    out += kFieldSeparator;
    out += std::to_string(block.nonce);
    return out;
}

std::string block_hash(const Block& block)
{
    return sha256_hex(canonical_block_bytes(block));
}

bool meets_difficulty(std::string_view hash_hex, int bits)
{
    if (bits < 0 || bits > kMaxDifficultyBits) throw InputError("meets_difficulty: bits out of range");
    auto raw = from_hex(hash_hex);
    if (!raw || raw->size() != 32) throw InputError("meets_difficulty: malformed hash");
    int full = bits / 8;
    for (int i = 0; i < full; ++i)
        if ((*raw)[i] != 0) return false;
    int rest = bits % 8;
    if (rest == 0) return true;
    auto mask = static_cast<std::uint8_t>(0xff << (8 - rest));
    return ((*raw)[full] & mask) == 0;
}

Block genesis_block()
{
    Block g;
    g.index = 0;
    g.timestamp = 0;
    g.data = "GENESIS";
    g.prev_hash = kZeroHash;
    g.difficulty = 0;
    g.nonce = 0;
    g.hash = block_hash(g);
    return g;
}

void check_linkage(std::span<const Block> chain)
{
    if (chain.empty()) throw InputError("chain is empty");
    if (chain.front().index != 0 || chain.front().prev_hash != kZeroHash)
        throw InputError("chain does not start with a genesis-shaped block");
    for (std::size_t i = 1; i < chain.size(); ++i) {
        if (chain[i].index != chain[i - 1].index + 1) throw InputError("chain index gap at " + std::to_string(i));
        if (chain[i].prev_hash != chain[i - 1].hash) throw InputError("chain link broken at " + std::to_string(i));
    }
}

std::uint64_t cumulative_work(std::span<const Block> chain)
{
    check_linkage(chain);
    std::uint64_t work = 0;
    for (std::size_t i = 1; i < chain.size(); ++i) {
        int d = chain[i].difficulty;
        if (d < 0 || d > kMaxDifficultyBits) throw InputError("block difficulty out of range");
        work += std::uint64_t{1} << d;
    }
    return work;
}

bool contains_separator(std::string_view s)
{
    return s.find(kFieldSeparator) != std::string_view::npos;
}

void to_json(nlohmann::json& j, const Block& b)
{
    j = nlohmann::json{{"index", b.index},   {"timestamp", b.timestamp},   {"data", b.data},
                       {"prev_hash", b.prev_hash}, {"hash", b.hash}, {"difficulty", b.difficulty},
                       {"nonce", b.nonce}};
}

void from_json(const nlohmann::json& j, Block& b)
{
    auto uint_field = [&](const char* key) -> std::uint64_t {
        const auto& v = j.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            throw InputError(std::string("block json: field '") + key + "' must be a non-negative integer");
        return v.get<std::uint64_t>();
    };
    if (!j.is_object()) throw InputError("block json: not an object");
    b.index = uint_field("index");
    b.timestamp = uint_field("timestamp");
    b.nonce = uint_field("nonce");
    auto d = uint_field("difficulty");
    if (d > static_cast<std::uint64_t>(kMaxDifficultyBits)) throw InputError("block json: difficulty out of range");
    b.difficulty = static_cast<int>(d);
    if (!j.at("data").is_string() || !j.at("prev_hash").is_string() || !j.at("hash").is_string())
        throw InputError("block json: string fields expected");
    b.data = j.at("data").get<std::string>();
    b.prev_hash = j.at("prev_hash").get<std::string>();
    b.hash = j.at("hash").get<std::string>();
}

} // namespace dadb
