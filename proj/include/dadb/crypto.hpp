#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dadb {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

inline std::span<const std::uint8_t> as_bytes(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string to_hex(std::span<const std::uint8_t> bytes);

// Lowercase or uppercase accepted; odd length or non-hex characters yield nullopt.
std::optional<Bytes> from_hex(std::string_view hex);

bool is_lower_hex(std::string_view s, std::size_t expected_len);

Digest sha256(std::span<const std::uint8_t> data);
std::string sha256_hex(std::span<const std::uint8_t> data);
inline std::string sha256_hex(std::string_view s) { return sha256_hex(as_bytes(s)); }

/**
 * Ed25519 keypair owned by one node. The node id is the lowercase hex of the
 * 32-byte public key; the seed never leaves this object except through seed()
 * for persisting the key file.
 */
class NodeIdentity
{
public:
    using Seed = std::array<std::uint8_t, 32>;
    using PublicKey = std::array<std::uint8_t, 32>;
    using Signature = std::array<std::uint8_t, 64>;

    static NodeIdentity generate();
    static NodeIdentity from_seed(const Seed& seed);

    const Seed& seed() const { return seed_; }
    const PublicKey& public_key() const { return public_key_; }
    const std::string& node_id() const { return node_id_; }

    Signature sign(std::span<const std::uint8_t> message) const;

private:
    explicit NodeIdentity(const Seed& seed);

    Seed seed_{};
    PublicKey public_key_{};
    std::string node_id_;
};

bool ed25519_verify(std::span<const std::uint8_t> public_key,
                    std::span<const std::uint8_t> message,
                    std::span<const std::uint8_t> signature);

} // namespace dadb
