#pragma once

#include <dadb/wire.hpp>

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace dadb {

enum class PeerState { Known, Connected, Failed };

std::string_view to_string(PeerState s);

struct PeerRecord {
    std::string addr; // host:port the peer listens on
    std::string node_id; // empty until the handshake
    std::int64_t last_seen_ms = 0;
    PeerState state = PeerState::Known;
};

/// Known peers keyed by listen address. Never holds the node's own address.
class PeerTable
{
public:
    explicit PeerTable(std::string self_addr) : self_(std::move(self_addr)) {}

    /// Inserts a Known record if absent. Returns true only for a fresh insert.
    bool add_peer(const std::string& addr);

    PeerRecord* find(const std::string& addr);
    const PeerRecord* find(const std::string& addr) const;

    std::vector<PeerRecord> records() const;
    std::vector<std::string> addrs() const;
    std::size_t size() const { return peers_.size(); }
    std::size_t count(PeerState s) const;
    const std::string& self_addr() const { return self_; }

private:
    std::string self_;
    std::map<std::string, PeerRecord> peers_;
};

/// Bounded set of recently seen hashes; evicts the oldest entry when full.
class SeenCache
{
public:
    explicit SeenCache(std::size_t capacity = 1024) : capacity_(capacity) {}

    /// True if the hash was not present (and is now recorded).
    bool insert(const std::string& hash);
    bool contains(const std::string& hash) const { return set_.count(hash) != 0; }
    std::size_t size() const { return order_.size(); }

private:
    std::size_t capacity_;
    std::deque<std::string> order_;
    std::unordered_set<std::string> set_;
};

using ConnId = std::uint64_t;

/**
 * Message transport seen by a node. Connections are opaque ids; delivery back
 * into the node happens through Node::on_message, already signature-checked.
 */
class Transport
{
public:
    virtual ~Transport() = default;

    /// Opens a connection to a listen address; nullopt if unreachable.
    virtual std::optional<ConnId> dial(const std::string& addr) = 0;

    /// False if the connection is gone or the write failed.
    virtual bool send(ConnId conn, const MessageEnvelope& env) = 0;

    virtual void close(ConnId conn) = 0;
};

} // namespace dadb
