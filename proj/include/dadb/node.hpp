#pragma once

#include <dadb/consensus.hpp>
#include <dadb/contracts.hpp>
#include <dadb/net.hpp>
#include <dadb/store.hpp>

#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dadb {

/// A client transaction. Its canonical JSON becomes the block's data field.
struct TxPayload {
    enum class Kind { Raw, Deploy, Call };
    Kind kind = Kind::Raw;
    std::string data; // raw
    nlohmann::json contract; // deploy
    std::string contract_id; // call
    std::vector<std::int64_t> args; // call

    static TxPayload raw(std::string data);
    static TxPayload deploy(nlohmann::json source);
    static TxPayload call(std::string contract_id, std::vector<std::int64_t> args);
};

nlohmann::json tx_to_json(const TxPayload& tx);
/// Throws InputError on a shape error.
TxPayload tx_from_json(const nlohmann::json& j);
/// Block data for a transaction: canonical JSON of tx_to_json.
std::string tx_block_data(const TxPayload& tx);

/// Clock and timer source for a node; virtual in the simulator.
class Runtime
{
public:
    virtual ~Runtime() = default;
    virtual std::int64_t now_ms() const = 0;
    /// Runs fn on the node's own context after delay_ms.
    virtual void schedule(std::int64_t delay_ms, std::function<void()> fn) = 0;
};

/// Proof-of-work search running off the node's context; results come back through the runtime.
class Miner
{
public:
    using Done = std::function<void(std::optional<Block>)>;
    virtual ~Miner() = default;
    /// At most one job at a time. done(nullopt) reports a cancelled job.
    virtual void start(Block candidate, Done done) = 0;
    virtual void cancel() = 0;
};

/// Hooks for metrics and tests. Called on the node's context.
class NodeObserver
{
public:
    virtual ~NodeObserver() = default;
    virtual void block_appended(const Block&) {}
    /// depth = blocks removed from the old chain.
    virtual void chain_replaced(std::uint64_t /*depth*/, std::span<const Block> /*adopted*/) {}
    virtual void block_rejected(VerifyError) {}
};

struct NodeOptions {
    std::string listen_addr;
    ChainParams params;
    bool mining = true;
    std::int64_t handshake_timeout_ms = 5000;
};

struct SubmitResult {
    bool ok = false;
    std::uint64_t block_index = 0;
    std::string block_hash;
    std::string error;
    bool retriable = false;
};

enum class BlockOutcome { Appended, Ignored, SyncTriggered };

struct NodeCounters {
    std::map<std::string, std::uint64_t> rejected; // VerifyError name -> count
    std::uint64_t bad_envelopes = 0;
    std::uint64_t syncs_requested = 0;
    std::uint64_t reorgs = 0;
    std::uint64_t max_reorg_depth = 0;
    std::uint64_t rejected_total() const;
};

/**
 * Node state machine. Every mutating method must be called from one context
 * (the command loop, or the simulator's event loop); answer_query is safe from
 * any thread.
 */
class Node
{
public:
    using SubmitDone = std::function<void(const SubmitResult&)>;

    Node(NodeIdentity identity, NodeOptions options, BlockStore& store, Transport& transport, Runtime& runtime,
         Miner& miner);

    /// Creates genesis if the store is empty, re-applies unapplied effects and
    /// dials the bootstrap peers (each completed handshake triggers a sync).
    void start(const std::vector<std::string>& bootstrap);

    /// Entry point for every verified envelope.
    void on_message(ConnId from, const MessageEnvelope& env);
    void on_disconnect(ConnId conn);
    /// An envelope on `from` failed signature or shape checks.
    void on_bad_envelope(ConnId from);

    /// Validates, then queues the transaction for create/mine/verify/append/broadcast/execute/persist.
    void submit(const TxPayload& tx, SubmitDone done);

    BlockOutcome handle_new_block(ConnId from, const Block& block);
    std::size_t broadcast_block(const Block& block, std::optional<ConnId> except = std::nullopt);
    void request_sync(ConnId conn);
    void request_sync_all();
    /// Applies a full candidate chain from a peer; true if it was adopted.
    bool handle_blocks(const Chain& candidate);

    /// Thread-safe client read. what: chain | block | state | stats.
    nlohmann::json answer_query(const std::string& what, const nlohmann::json& params) const;

    const NodeIdentity& identity() const { return identity_; }
    const std::string& node_id() const { return identity_.node_id(); }
    const NodeOptions& options() const { return options_; }
    const PeerTable& peers() const { return peers_; }
    BlockStore& store() { return store_; }
    const BlockStore& store() const { return store_; }
    const DifficultyState& difficulty() const { return difficulty_; }
    int current_bits() const { return effective_bits(difficulty_.d_current, options_.params); }
    const NodeCounters& counters() const { return counters_; }
    const ContractCache& cache() const { return cache_; }
    std::size_t pending_tx() const { return queue_.size(); }

    void set_observer(NodeObserver* observer) { observer_ = observer; }
    /// When set, each submit flow step is appended by name.
    void set_step_log(std::vector<std::string>* log) { step_log_ = log; }

    /// Contract effects of one block, as applied on append and on chain replacement.
    void apply_effects(const Block& block, EffectsWriter& writer);

private:
    struct Job {
        TxPayload tx;
        std::string data;
        SubmitDone done;
        int cancellations = 0;
    };

    void log_step(const char* name);
    void send(ConnId conn, MessageKind kind, nlohmann::json payload);
    void dial(const std::string& addr);
    void send_hello(ConnId conn);
    void on_hello(ConnId from, const MessageEnvelope& env);
    void on_peers(const nlohmann::json& payload);
    void on_tx(ConnId from, const MessageEnvelope& env);
    void on_query(ConnId from, const MessageEnvelope& env);
    /// Stores, relays (except back to `from`), then executes and persists effects.
    void append_block(const Block& block, std::optional<ConnId> from);
    void pump();
    void on_mined(std::optional<Block> block);
    void reject(VerifyError e);
    void refresh_stats();

    NodeIdentity identity_;
    NodeOptions options_;
    BlockStore& store_;
    Transport& transport_;
    Runtime& runtime_;
    Miner& miner_;

    PeerTable peers_;
    std::map<ConnId, std::string> conn_addr_; // after HELLO
    std::map<std::string, ConnId> addr_conn_;
    std::map<ConnId, bool> hello_sent_;
    SeenCache seen_;
    SeenCache broadcasted_;
    ContractCache cache_;
    DifficultyState difficulty_;
    NodeCounters counters_;

    std::deque<Job> queue_;
    bool mining_ = false;

    std::atomic<std::size_t> connected_peers_{0};
    std::atomic<int> bits_{0};

    NodeObserver* observer_ = nullptr;
    std::vector<std::string>* step_log_ = nullptr;
};

} // namespace dadb
