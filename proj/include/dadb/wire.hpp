#pragma once

#include <dadb/crypto.hpp>

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dadb {

enum class MessageKind { Hello, Peers, NewBlock, GetBlocks, Blocks, Tx, Query, Response, Ping, Pong };

std::string_view to_string(MessageKind k);
std::optional<MessageKind> parse_message_kind(std::string_view s);

/**
 * Compact JSON with object keys sorted bytewise, integers in shortest form and
 * minimal string escaping. Throws InputError on any non-integer number.
 */
std::string canonical_json(const nlohmann::json& value);

struct MessageEnvelope {
    std::string sender; // node id hex
    MessageKind kind = MessageKind::Ping;
    std::int64_t timestamp = 0; // Unix ms, informational only
    nlohmann::json payload = nlohmann::json::object();
    std::string signature; // 128 hex chars

    bool operator==(const MessageEnvelope&) const = default;
};

std::string signing_bytes(const MessageEnvelope& env);

/// Fills sender and signature from the identity.
MessageEnvelope sign_envelope(MessageEnvelope env, const NodeIdentity& identity);

/// False on any malformed field or signature mismatch; never throws.
bool verify_envelope(const MessageEnvelope& env);

nlohmann::json envelope_to_json(const MessageEnvelope& env);

/// Throws ProtocolError on a shape error.
MessageEnvelope envelope_from_json(const nlohmann::json& j);

/// Canonical JSON bytes of the envelope.
std::string encode_envelope(const MessageEnvelope& env);

/// Parses and checks the signature; throws ProtocolError if either fails.
MessageEnvelope decode_verified_envelope(std::string_view bytes);

inline constexpr std::size_t kMaxFrameBytes = std::size_t{16} * 1024 * 1024;

/// 4-byte big-endian length prefix. Throws ProtocolError above the frame cap.
Bytes frame(std::span<const std::uint8_t> payload);
inline Bytes frame(std::string_view payload) { return frame(as_bytes(payload)); }

/// Incremental deframer for one connection's byte stream.
class FrameDecoder
{
public:
    /// Appends bytes and returns every complete message now available.
    /// Throws ProtocolError as soon as a header declares more than the cap.
    std::vector<Bytes> feed(std::span<const std::uint8_t> chunk);

    /// True if a partial frame is buffered (the stream would be truncated if it ended now).
    bool has_partial() const { return !buffer_.empty(); }

private:
    Bytes buffer_;
};

/// Deframes a complete stream. Throws ProtocolError on oversize or truncation.
std::vector<Bytes> deframe(std::span<const std::uint8_t> stream);

} // namespace dadb
