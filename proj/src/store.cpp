#include <dadb/errors.hpp>
#include <dadb/store.hpp>
#include <dadb/wire.hpp>

#include <sqlite3.h>

#include <mutex>

namespace dadb {

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS blocks (
    idx        INTEGER PRIMARY KEY,
    timestamp  INTEGER NOT NULL,
    data       BLOB    NOT NULL,
    prev_hash  TEXT    NOT NULL,
    hash       TEXT    NOT NULL,
    difficulty INTEGER NOT NULL,
    nonce      INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS meta (
    name  TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS contract_state (
    contract_id TEXT    NOT NULL,
    key         TEXT    NOT NULL,
    value       INTEGER NOT NULL,
    version     INTEGER NOT NULL,
    PRIMARY KEY (contract_id, key)
);
CREATE TABLE IF NOT EXISTS contracts (
    contract_id TEXT PRIMARY KEY,
    source      TEXT    NOT NULL,
    deployed_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS executions (
    block_index INTEGER PRIMARY KEY,
    outcome     TEXT    NOT NULL
);
INSERT OR IGNORE INTO meta(name, value) VALUES ('count', '0'), ('tip', '');
)sql";

class Stmt
{
public:
    Stmt(sqlite3* db, const char* sql) : db_(db)
    {
        if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
            throw StoreError(std::string("prepare: ") + sqlite3_errmsg(db));
    }
    ~Stmt() { sqlite3_finalize(stmt_); }
    Stmt(const Stmt&) = delete;
    Stmt& operator=(const Stmt&) = delete;

    Stmt& bind(int i, std::int64_t v)
    {
        check(sqlite3_bind_int64(stmt_, i, v));
        return *this;
    }
    Stmt& bind(int i, const std::string& v)
    {
        check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
        return *this;
    }
    Stmt& bind_blob(int i, const std::string& v)
    {
        check(sqlite3_bind_blob(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
        return *this;
    }

    /// True while a row is available.
    bool step()
    {
        int rc = sqlite3_step(stmt_);
        if (rc == SQLITE_ROW) return true;
        if (rc == SQLITE_DONE) return false;
        throw StoreError(std::string("step: ") + sqlite3_errmsg(db_));
    }
    void run()
    {
        while (step()) {
        }
    }

    std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_, col); }
    std::string text(int col) const
    {
        auto* p = reinterpret_cast<const char*>(sqlite3_column_blob(stmt_, col));
        auto n = sqlite3_column_bytes(stmt_, col);
        return p ? std::string(p, static_cast<std::size_t>(n)) : std::string{};
    }

private:
    void check(int rc)
    {
        if (rc != SQLITE_OK) throw StoreError(std::string("bind: ") + sqlite3_errmsg(db_));
    }

    sqlite3* db_;
    sqlite3_stmt* stmt_ = nullptr;
};

Block read_block(const Stmt& s)
{
    Block b;
    b.index = static_cast<std::uint64_t>(s.int64(0));
    b.timestamp = static_cast<std::uint64_t>(s.int64(1));
    b.data = s.text(2);
    b.prev_hash = s.text(3);
    b.hash = s.text(4);
    b.difficulty = static_cast<int>(s.int64(5));
    b.nonce = static_cast<std::uint64_t>(s.int64(6));
    return b;
}

void insert_block(sqlite3* db, const Block& b)
{
    Stmt s(db, "INSERT INTO blocks(idx, timestamp, data, prev_hash, hash, difficulty, nonce) "
               "VALUES (?, ?, ?, ?, ?, ?, ?)");
    s.bind(1, static_cast<std::int64_t>(b.index))
        .bind(2, static_cast<std::int64_t>(b.timestamp))
        .bind_blob(3, b.data)
        .bind(4, b.prev_hash)
        .bind(5, b.hash)
        .bind(6, b.difficulty)
        .bind(7, static_cast<std::int64_t>(b.nonce));
    s.run();
}

void set_meta(sqlite3* db, const std::string& name, const std::string& value)
{
    Stmt s(db, "INSERT INTO meta(name, value) VALUES (?, ?) ON CONFLICT(name) DO UPDATE SET value = excluded.value");
    s.bind(1, name).bind(2, value);
    s.run();
}

std::optional<std::string> get_meta(sqlite3* db, const std::string& name)
{
    Stmt s(db, "SELECT value FROM meta WHERE name = ?");
    s.bind(1, name);
    if (!s.step()) return std::nullopt;
    return s.text(0);
}

std::optional<std::int64_t> select_state(sqlite3* db, const std::string& contract_id, const std::string& key)
{
    Stmt s(db, "SELECT value FROM contract_state WHERE contract_id = ? AND key = ?");
    s.bind(1, contract_id).bind(2, key);
    if (!s.step()) return std::nullopt;
    return s.int64(0);
}

void upsert_state(sqlite3* db, const std::string& contract_id, const std::string& key, std::int64_t value,
                  std::uint64_t version)
{
    Stmt s(db, "INSERT INTO contract_state(contract_id, key, value, version) VALUES (?, ?, ?, ?) "
               "ON CONFLICT(contract_id, key) DO UPDATE SET value = excluded.value, version = excluded.version");
    s.bind(1, contract_id).bind(2, key).bind(3, value).bind(4, static_cast<std::int64_t>(version));
    s.run();
}

std::optional<nlohmann::json> select_contract(sqlite3* db, const std::string& contract_id)
{
    Stmt s(db, "SELECT source FROM contracts WHERE contract_id = ?");
    s.bind(1, contract_id);
    if (!s.step()) return std::nullopt;
    return nlohmann::json::parse(s.text(0));
}

} // namespace

// Rolls back unless committed.
class BlockStore::Txn
{
public:
    explicit Txn(sqlite3* db) : db_(db)
    {
        if (sqlite3_exec(db_, "BEGIN IMMEDIATE", nullptr, nullptr, nullptr) != SQLITE_OK)
            throw StoreError(std::string("begin: ") + sqlite3_errmsg(db_));
    }
    ~Txn()
    {
        if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit()
    {
        if (sqlite3_exec(db_, "COMMIT", nullptr, nullptr, nullptr) != SQLITE_OK)
            throw StoreError(std::string("commit: ") + sqlite3_errmsg(db_));
        done_ = true;
    }

private:
    sqlite3* db_;
    bool done_ = false;
};

class BlockStore::Writer : public EffectsWriter
{
public:
    Writer(sqlite3* db, std::uint64_t index) : db_(db), index_(index) {}

    std::optional<std::int64_t> get_state(const std::string& contract_id, const std::string& key) override
    {
        return select_state(db_, contract_id, key);
    }
    void put_state(const std::string& contract_id, const std::string& key, std::int64_t value) override
    {
        upsert_state(db_, contract_id, key, value, index_);
    }
    std::optional<nlohmann::json> get_contract(const std::string& contract_id) override
    {
        return select_contract(db_, contract_id);
    }
    void put_contract(const std::string& contract_id, const nlohmann::json& source) override
    {
        Stmt s(db_, "INSERT OR IGNORE INTO contracts(contract_id, source, deployed_at) VALUES (?, ?, ?)");
        s.bind(1, contract_id).bind(2, canonical_json(source)).bind(3, static_cast<std::int64_t>(index_));
        s.run();
    }
    void record_execution(const std::string& outcome) override
    {
        Stmt s(db_, "INSERT OR REPLACE INTO executions(block_index, outcome) VALUES (?, ?)");
        s.bind(1, static_cast<std::int64_t>(index_)).bind(2, outcome);
        s.run();
    }
    std::uint64_t block_index() const override { return index_; }

private:
    sqlite3* db_;
    std::uint64_t index_;
};

BlockStore::BlockStore(const std::string& path) : path_(path)
{
    int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
    if (sqlite3_open_v2(path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
        std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
        sqlite3_close_v2(db_);
        db_ = nullptr;
        throw StoreError("open " + path + ": " + msg);
    }
    try {
        exec("PRAGMA synchronous = FULL");
        exec(kSchema);
        check_meta();
    } catch (...) {
        sqlite3_close_v2(db_);
        db_ = nullptr;
        throw;
    }
}

std::unique_lock<std::shared_mutex> BlockStore::write_lock() const
{
    std::lock_guard gate(turnstile_);
    return std::unique_lock(mutex_);
}

std::shared_lock<std::shared_mutex> BlockStore::read_lock() const
{
    {
        std::lock_guard gate(turnstile_);
    }
    return std::shared_lock(mutex_);
}

BlockStore::~BlockStore()
{
    if (db_) sqlite3_close_v2(db_);
}

void BlockStore::exec(const char* sql) const
{
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : sqlite3_errmsg(db_);
        sqlite3_free(err);
        throw StoreError(msg);
    }
}

void BlockStore::check_meta() const
{
    auto count = count_locked();
    Stmt rows(db_, "SELECT COUNT(*), COALESCE(MAX(idx), -1) FROM blocks");
    rows.step();
    auto n = static_cast<std::uint64_t>(rows.int64(0));
    auto max_idx = rows.int64(1);
    if (n != count || max_idx != static_cast<std::int64_t>(count) - 1)
        throw StoreError("store metadata disagrees with block rows");
    auto tip = get_meta(db_, "tip").value_or("");
    if (count == 0 ? !tip.empty() : tip != [&] {
            Stmt s(db_, "SELECT hash FROM blocks WHERE idx = ?");
            s.bind(1, static_cast<std::int64_t>(count - 1));
            s.step();
            return s.text(0);
        }())
        throw StoreError("store tip hash disagrees with last block");
}

std::uint64_t BlockStore::count_locked() const
{
    auto v = get_meta(db_, "count");
    if (!v) throw StoreError("store metadata missing");
    return std::stoull(*v);
}

void BlockStore::add_block(const Block& block)
{
    auto lock = write_lock();
    auto step = [this](AppendStep s) {
        if (append_hook_) append_hook_(s);
    };
    auto count = count_locked();
    if (block.index != count) throw InputError("add_block: index " + std::to_string(block.index) + " != count " +
                                               std::to_string(count));
    if (count > 0 && block.prev_hash != get_meta(db_, "tip").value_or(""))
        throw InputError("add_block: block does not link to the stored tip");
    try {
        step(AppendStep::Begin);
        Txn txn(db_);
        step(AppendStep::InsertBlock);
        insert_block(db_, block);
        step(AppendStep::UpdateCount);
        set_meta(db_, "count", std::to_string(count + 1));
        step(AppendStep::UpdateTip);
        set_meta(db_, "tip", block.hash);
        step(AppendStep::Commit);
        txn.commit();
    } catch (const StoreError&) {
        throw;
    } catch (const std::exception& e) {
        throw StoreError(std::string("add_block aborted: ") + e.what());
    }
}

std::uint64_t BlockStore::get_block_count() const
{
    auto lock = read_lock();
    return count_locked();
}

std::string BlockStore::get_latest_block_hash() const
{
    auto lock = read_lock();
    if (count_locked() == 0) throw NotFoundError("store is empty");
    return get_meta(db_, "tip").value_or("");
}

Block BlockStore::get_block(std::uint64_t index) const
{
    auto lock = read_lock();
    if (index >= count_locked()) throw NotFoundError("no block at index " + std::to_string(index));
    Stmt s(db_, "SELECT idx, timestamp, data, prev_hash, hash, difficulty, nonce FROM blocks WHERE idx = ?");
    s.bind(1, static_cast<std::int64_t>(index));
    if (!s.step()) throw NotFoundError("no block at index " + std::to_string(index));
    return read_block(s);
}

Chain BlockStore::get_all_blocks() const
{
    auto lock = read_lock();
    Stmt s(db_, "SELECT idx, timestamp, data, prev_hash, hash, difficulty, nonce FROM blocks ORDER BY idx");
    Chain out;
    while (s.step()) out.push_back(read_block(s));
    return out;
}

void BlockStore::replace_chain(std::span<const Block> chain, const BlockEffects& effects)
{
    auto lock = write_lock();
    check_linkage(chain);
    if (count_locked() > 0) {
        Stmt s(db_, "SELECT hash FROM blocks WHERE idx = 0");
        s.step();
        if (s.text(0) != chain.front().hash) throw InputError("replace_chain: genesis differs");
    }
    Txn txn(db_);
    exec("DELETE FROM blocks; DELETE FROM contract_state; DELETE FROM contracts; DELETE FROM executions;");
    for (const auto& b : chain) insert_block(db_, b);
    for (const auto& b : chain) {
        Writer w(db_, b.index);
        if (effects) effects(b, w);
    }
    set_meta(db_, "count", std::to_string(chain.size()));
    set_meta(db_, "tip", chain.back().hash);
    set_meta(db_, "effects_height", std::to_string(chain.back().index));
    txn.commit();
}

void BlockStore::commit_effects(const Block& block, const BlockEffects& effects)
{
    auto lock = write_lock();
    Txn txn(db_);
    Writer w(db_, block.index);
    if (effects) effects(block, w);
    set_meta(db_, "effects_height", std::to_string(block.index));
    txn.commit();
}

std::optional<std::uint64_t> BlockStore::effects_height() const
{
    auto lock = read_lock();
    auto v = get_meta(db_, "effects_height");
    if (!v) return std::nullopt;
    return std::stoull(*v);
}

std::optional<std::int64_t> BlockStore::get_state(const std::string& contract_id, const std::string& key) const
{
    auto lock = read_lock();
    return select_state(db_, contract_id, key);
}

void BlockStore::put_state(const std::string& contract_id, const std::string& key, std::int64_t value,
                           std::uint64_t version)
{
    auto lock = write_lock();
    Txn txn(db_);
    upsert_state(db_, contract_id, key, value, version);
    txn.commit();
}

std::optional<nlohmann::json> BlockStore::get_contract(const std::string& contract_id) const
{
    auto lock = read_lock();
    return select_contract(db_, contract_id);
}

std::optional<std::string> BlockStore::get_execution(std::uint64_t block_index) const
{
    auto lock = read_lock();
    Stmt s(db_, "SELECT outcome FROM executions WHERE block_index = ?");
    s.bind(1, static_cast<std::int64_t>(block_index));
    if (!s.step()) return std::nullopt;
    return s.text(0);
}

std::vector<std::tuple<std::string, std::string, std::int64_t>> BlockStore::dump_state() const
{
    auto lock = read_lock();
    Stmt s(db_, "SELECT contract_id, key, value FROM contract_state ORDER BY contract_id, key");
    std::vector<std::tuple<std::string, std::string, std::int64_t>> out;
    while (s.step()) out.emplace_back(s.text(0), s.text(1), s.int64(2));
    return out;
}

} // namespace dadb
