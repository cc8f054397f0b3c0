#include <dadb/errors.hpp>
#include <dadb/wire.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

namespace dadb {

namespace {

constexpr std::array<std::pair<MessageKind, std::string_view>, 10> kKindNames{{
    {MessageKind::Hello, "HELLO"},
    {MessageKind::Peers, "PEERS"},
    {MessageKind::NewBlock, "NEW_BLOCK"},
    {MessageKind::GetBlocks, "GET_BLOCKS"},
    {MessageKind::Blocks, "BLOCKS"},
    {MessageKind::Tx, "TX"},
    {MessageKind::Query, "QUERY"},
    {MessageKind::Response, "RESPONSE"},
    {MessageKind::Ping, "PING"},
    {MessageKind::Pong, "PONG"},
}};

bool bytewise_less(const std::string& a, const std::string& b)
{
    auto n = std::min(a.size(), b.size());
    int c = std::memcmp(a.data(), b.data(), n);
    return c < 0 || (c == 0 && a.size() < b.size());
}

void write_canonical(const nlohmann::json& v, std::string& out)
{
    using T = nlohmann::json::value_t;
    switch (v.type()) {
    case T::null: out += "null"; break;
    case T::boolean: out += v.get<bool>() ? "true" : "false"; break;
    case T::number_integer: out += std::to_string(v.get<std::int64_t>()); break;
    case T::number_unsigned: out += std::to_string(v.get<std::uint64_t>()); break;
    case T::number_float: {
        double d = v.get<double>();
        if (!std::isfinite(d) || std::trunc(d) != d || std::fabs(d) > 9007199254740992.0)
            throw InputError("canonical_json: non-integer number");
        out += std::to_string(static_cast<std::int64_t>(d));
        break;
    }
    case T::string:
        try {
            out += nlohmann::json(v.get_ref<const std::string&>()).dump(-1, ' ', false);
        } catch (const nlohmann::json::type_error& e) {
            throw InputError(std::string("canonical_json: ") + e.what());
        }
        break;
    case T::array: {
        out += '[';
        bool first = true;
        for (const auto& e : v) {
            if (!first) out += ',';
            first = false;
            write_canonical(e, out);
        }
        out += ']';
        break;
    }
    case T::object: {
        std::vector<const std::string*> keys;
        keys.reserve(v.size());
        for (auto it = v.begin(); it != v.end(); ++it) keys.push_back(&it.key());
        std::sort(keys.begin(), keys.end(), [](auto* a, auto* b) { return bytewise_less(*a, *b); });
        out += '{';
        bool first = true;
        for (const auto* k : keys) {
            if (!first) out += ',';
            first = false;
            write_canonical(nlohmann::json(*k), out);
            out += ':';
            write_canonical(v.at(*k), out);
        }
        out += '}';
        break;
    }
    case T::binary:
    case T::discarded:
        throw InputError("canonical_json: unsupported value");
    }
}

} // namespace

std::string_view to_string(MessageKind k)
{
    for (const auto& [kind, name] : kKindNames)
        if (kind == k) return name;
    return "UNKNOWN";
}

std::optional<MessageKind> parse_message_kind(std::string_view s)
{
    for (const auto& [kind, name] : kKindNames)
        if (name == s) return kind;
    return std::nullopt;
}

std::string canonical_json(const nlohmann::json& value)
{
    std::string out;
    write_canonical(value, out);
    return out;
}

std::string signing_bytes(const MessageEnvelope& env)
{
    std::string out(to_string(env.kind));
    out += '\x1f';
    out += std::to_string(env.timestamp);
    out += '\x1f';
    out += canonical_json(env.payload);
    return out;
}

MessageEnvelope sign_envelope(MessageEnvelope env, const NodeIdentity& identity)
{
    env.sender = identity.node_id();
    auto sig = identity.sign(as_bytes(signing_bytes(env)));
    env.signature = to_hex(sig);
    return env;
}

bool verify_envelope(const MessageEnvelope& env)
{
    auto pk = from_hex(env.sender);
    auto sig = from_hex(env.signature);
    if (!pk || !sig || pk->size() != 32 || sig->size() != 64) return false;
    std::string msg;
    try {
        msg = signing_bytes(env);
    } catch (const InputError&) {
        return false;
    }
    return ed25519_verify(*pk, as_bytes(msg), *sig);
}

nlohmann::json envelope_to_json(const MessageEnvelope& env)
{
    return nlohmann::json{{"sender", env.sender},
                          {"kind", std::string(to_string(env.kind))},
                          {"timestamp", env.timestamp},
                          {"payload", env.payload},
                          {"signature", env.signature}};
}

MessageEnvelope envelope_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw ProtocolError("envelope: not an object");
    for (const char* key : {"sender", "kind", "timestamp", "payload", "signature"})
        if (!j.contains(key)) throw ProtocolError(std::string("envelope: missing ") + key);
    if (!j["sender"].is_string() || !j["kind"].is_string() || !j["signature"].is_string() ||
        !j["timestamp"].is_number_integer())
        throw ProtocolError("envelope: field type mismatch");
    auto kind = parse_message_kind(j["kind"].get<std::string>());
    if (!kind) throw ProtocolError("envelope: unknown kind");
    MessageEnvelope env;
    env.sender = j["sender"].get<std::string>();
    env.kind = *kind;
    env.timestamp = j["timestamp"].get<std::int64_t>();
    env.payload = j["payload"];
    env.signature = j["signature"].get<std::string>();
    return env;
}

std::string encode_envelope(const MessageEnvelope& env)
{
    return canonical_json(envelope_to_json(env));
}

MessageEnvelope decode_verified_envelope(std::string_view bytes)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProtocolError(std::string("envelope: ") + e.what());
    }
    auto env = envelope_from_json(j);
    if (!verify_envelope(env)) throw ProtocolError("envelope: bad signature");
    return env;
}

Bytes frame(std::span<const std::uint8_t> payload)
{
    if (payload.size() > kMaxFrameBytes) throw ProtocolError("frame: payload exceeds 16 MiB");
    auto n = static_cast<std::uint32_t>(payload.size());
    Bytes out;
    out.reserve(payload.size() + 4);
    out.push_back(static_cast<std::uint8_t>(n >> 24));
    out.push_back(static_cast<std::uint8_t>(n >> 16));
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

std::vector<Bytes> FrameDecoder::feed(std::span<const std::uint8_t> chunk)
{
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
    std::vector<Bytes> out;
    std::size_t pos = 0;
    while (buffer_.size() - pos >= 4) {
        std::uint32_t n = (std::uint32_t{buffer_[pos]} << 24) | (std::uint32_t{buffer_[pos + 1]} << 16) |
                          (std::uint32_t{buffer_[pos + 2]} << 8) | std::uint32_t{buffer_[pos + 3]};
        if (n > kMaxFrameBytes) {
            buffer_.clear();
            throw ProtocolError("deframe: declared length exceeds 16 MiB");
        }
        if (buffer_.size() - pos - 4 < n) break;
        auto first = buffer_.begin() + static_cast<std::ptrdiff_t>(pos + 4);
        out.emplace_back(first, first + n);
        pos += 4 + n;
    }
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(pos));
    return out;
}

std::vector<Bytes> deframe(std::span<const std::uint8_t> stream)
{
    FrameDecoder dec;
    auto out = dec.feed(stream);
    if (dec.has_partial()) throw ProtocolError("deframe: truncated stream");
    return out;
}

} // namespace dadb
