#pragma once

// In-memory network of real Node instances on a virtual clock, for unit tests.

#include <dadb/errors.hpp>
#include <dadb/node.hpp>

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace testing_mesh {

using namespace dadb;

class Mesh;

class Clock : public Runtime
{
public:
    explicit Clock(Mesh& m) : mesh_(m) {}
    std::int64_t now_ms() const override;
    void schedule(std::int64_t delay_ms, std::function<void()> fn) override;

private:
    Mesh& mesh_;
};

/// Mines synchronously; the result is delivered one virtual ms later unless cancelled.
/// With hold = true the job waits for release().
class StepMiner : public Miner
{
public:
    explicit StepMiner(Mesh& m) : mesh_(m) {}
    void start(Block candidate, Done done) override;
    void cancel() override;
    void release();

    bool hold = false;
    int started = 0;
    int cancelled = 0;

private:
    Mesh& mesh_;
    std::optional<Block> pending_;
    Done done_;
    std::shared_ptr<bool> flag_;
};

class Wire : public Transport
{
public:
    Wire(Mesh& m, int self) : mesh_(m), self_(self) {}
    std::optional<ConnId> dial(const std::string& addr) override;
    bool send(ConnId conn, const MessageEnvelope& env) override;
    void close(ConnId) override {}

private:
    Mesh& mesh_;
    int self_;
};

struct Member {
    std::unique_ptr<BlockStore> store;
    std::unique_ptr<Wire> wire;
    std::unique_ptr<StepMiner> miner;
    std::unique_ptr<Node> node;
};

inline std::string mem_addr(int i)
{
    return "mem:" + std::to_string(i);
}

inline ChainParams quick_params(int difficulty = 4)
{
    ChainParams p;
    p.target_block_interval_ms = 2000;
    p.initial_difficulty = difficulty;
    p.min_difficulty = 1;
    p.max_difficulty = 12;
    return p;
}

inline NodeIdentity identity_for(int i)
{
    NodeIdentity::Seed s{};
    s[0] = static_cast<std::uint8_t>(i + 1);
    s[31] = 0x5a;
    return NodeIdentity::from_seed(s);
}

class Mesh
{
public:
    /// Return false to drop. May edit the encoded bytes in place.
    std::function<bool(int from, int to, std::string& bytes)> filter;

    Node& add(ChainParams params = quick_params(), bool mining = true, const std::string& db = ":memory:")
    {
        int i = static_cast<int>(members.size());
        auto m = std::make_unique<Member>();
        m->store = std::make_unique<BlockStore>(db);
        m->wire = std::make_unique<Wire>(*this, i);
        m->miner = std::make_unique<StepMiner>(*this);
        NodeOptions o;
        o.listen_addr = mem_addr(i);
        o.params = params;
        o.mining = mining;
        o.handshake_timeout_ms = 1000;
        m->node = std::make_unique<Node>(identity_for(i), o, *m->store, *m->wire, clock, *m->miner);
        members.push_back(std::move(m));
        return *members.back()->node;
    }

    Node& node(int i) { return *members[static_cast<std::size_t>(i)]->node; }
    StepMiner& miner(int i) { return *members[static_cast<std::size_t>(i)]->miner; }

    void at(std::int64_t t, std::function<void()> fn) { queue.emplace(std::make_pair(std::max(t, now), seq++), std::move(fn)); }

    /// Runs events up to now + ms (or until idle).
    void run(std::int64_t ms = 60000)
    {
        auto until = now + ms;
        while (!queue.empty() && queue.begin()->first.first <= until) {
            auto it = queue.begin();
            auto fn = std::move(it->second);
            now = it->first.first;
            queue.erase(it);
            fn();
        }
    }

    void deliver(int from, int to, std::string bytes)
    {
        if (filter && !filter(from, to, bytes)) return;
        at(now + 1, [this, from, to, bytes] {
            auto& n = node(to);
            try {
                n.on_message(static_cast<ConnId>(from) + 1, decode_verified_envelope(bytes));
            } catch (const ProtocolError&) {
                n.on_bad_envelope(static_cast<ConnId>(from) + 1);
            }
        });
    }

    std::vector<std::unique_ptr<Member>> members;
    Clock clock{*this};
    std::int64_t now = 0;
    std::uint64_t seq = 0;
    std::multimap<std::pair<std::int64_t, std::uint64_t>, std::function<void()>> queue;
};

inline std::int64_t Clock::now_ms() const
{
    return mesh_.now;
}

inline void Clock::schedule(std::int64_t delay_ms, std::function<void()> fn)
{
    mesh_.at(mesh_.now + delay_ms, std::move(fn));
}

inline void StepMiner::start(Block candidate, Done done)
{
    ++started;
    flag_ = std::make_shared<bool>(false);
    pending_ = mine_block(std::move(candidate));
    done_ = std::move(done);
    if (!hold) release();
}

inline void StepMiner::release()
{
    if (!done_) return;
    auto flag = flag_;
    mesh_.at(mesh_.now + 1, [flag, done = std::move(done_), block = pending_] { done(*flag ? std::nullopt : block); });
    done_ = nullptr;
}

inline void StepMiner::cancel()
{
    if (!flag_ || *flag_) return;
    *flag_ = true;
    ++cancelled;
    release();
}

inline std::optional<ConnId> Wire::dial(const std::string& addr)
{
    for (std::size_t j = 0; j < mesh_.members.size(); ++j)
        if (mem_addr(static_cast<int>(j)) == addr && static_cast<int>(j) != self_) return static_cast<ConnId>(j) + 1;
    return std::nullopt;
}

inline bool Wire::send(ConnId conn, const MessageEnvelope& env)
{
    mesh_.deliver(self_, static_cast<int>(conn) - 1, encode_envelope(env));
    return true;
}

} // namespace testing_mesh
