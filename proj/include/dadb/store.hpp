#pragma once

#include <dadb/chain.hpp>

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

struct sqlite3;

namespace dadb {

/// Sub-steps of an append, exposed so tests can inject a failure between any two.
enum class AppendStep { Begin, InsertBlock, UpdateCount, UpdateTip, Commit };

/// Writer handed to effect callbacks; every call runs inside the enclosing transaction.
class EffectsWriter
{
public:
    virtual ~EffectsWriter() = default;
    virtual std::optional<std::int64_t> get_state(const std::string& contract_id, const std::string& key) = 0;
    virtual void put_state(const std::string& contract_id, const std::string& key, std::int64_t value) = 0;
    virtual std::optional<nlohmann::json> get_contract(const std::string& contract_id) = 0;
    virtual void put_contract(const std::string& contract_id, const nlohmann::json& source) = 0;
    virtual void record_execution(const std::string& outcome) = 0;
    virtual std::uint64_t block_index() const = 0;
};

using BlockEffects = std::function<void(const Block&, EffectsWriter&)>;

/**
 * Single-file block and contract-state store.
 *
 * Blocks are dense by index; the block count and tip hash are kept in a
 * metadata table and updated in the same transaction as the block row. Writes
 * take an exclusive lock; reads share.
 */
class BlockStore
{
public:
    /// Opens or creates the database file. ":memory:" gives a private in-memory store.
    /// Throws StoreError if the file cannot be opened or its metadata disagrees with its rows.
    explicit BlockStore(const std::string& path);
    ~BlockStore();

    BlockStore(const BlockStore&) = delete;
    BlockStore& operator=(const BlockStore&) = delete;

    /// Throws InputError unless block.index == count (and links to the tip); StoreError on I/O failure.
    void add_block(const Block& block);

    std::uint64_t get_block_count() const;
    std::string get_latest_block_hash() const; // NotFoundError when empty
    Block get_block(std::uint64_t index) const; // NotFoundError past the end
    Chain get_all_blocks() const;
    Block tip() const { return get_block(get_block_count() - 1); }

    /**
     * Replaces the whole chain and rebuilds contract state by running `effects`
     * over every block in order, all in one transaction. Throws InputError if the
     * linkage is broken or the genesis differs from the stored one.
     */
    void replace_chain(std::span<const Block> chain, const BlockEffects& effects);

    /// Applies the contract effects of an already stored block; marks it applied.
    void commit_effects(const Block& block, const BlockEffects& effects);

    /// Index of the last block whose effects are persisted, if any.
    std::optional<std::uint64_t> effects_height() const;

    std::optional<std::int64_t> get_state(const std::string& contract_id, const std::string& key) const;
    void put_state(const std::string& contract_id, const std::string& key, std::int64_t value,
                   std::uint64_t version);

    std::optional<nlohmann::json> get_contract(const std::string& contract_id) const;
    std::optional<std::string> get_execution(std::uint64_t block_index) const;

    /// All (contract_id, key, value) rows in key order.
    std::vector<std::tuple<std::string, std::string, std::int64_t>> dump_state() const;

    /// Called before each append sub-step; throwing from it aborts the append.
    void set_append_hook(std::function<void(AppendStep)> hook) { append_hook_ = std::move(hook); }

    const std::string& path() const { return path_; }

private:
    class Txn;
    class Writer;

    void exec(const char* sql) const;
    void check_meta() const;
    std::uint64_t count_locked() const;

    std::string path_;
    sqlite3* db_ = nullptr;
    // Writers hold the turnstile while waiting so a stream of readers cannot starve them.
    mutable std::mutex turnstile_;
    mutable std::shared_mutex mutex_;

    std::unique_lock<std::shared_mutex> write_lock() const;
    std::shared_lock<std::shared_mutex> read_lock() const;
    std::function<void(AppendStep)> append_hook_;
};

} // namespace dadb
