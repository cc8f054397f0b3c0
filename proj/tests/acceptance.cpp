// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "contract_oracle.hpp"
#include "mesh.hpp"
#include "oracles.hpp"

#include <dadb/contracts.hpp>
#include <dadb/errors.hpp>
#include <dadb/sim.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace dadb;
using nlohmann::json;

namespace {

struct Check {
    bool ok = true;
    std::ostringstream why;

    void expect(bool cond, const std::string& what)
    {
        if (!cond && ok) why << what;
        ok = ok && cond;
    }
};

using Criterion = std::function<void(Check&)>;

ChainParams sim_params()
{
    ChainParams p;
    p.target_block_interval_ms = 2000;
    p.initial_difficulty = 8;
    p.min_difficulty = 1;
    p.max_difficulty = 16;
    return p;
}

ScenarioConfig scenario(int nodes, std::int64_t duration_ms, std::uint64_t seed)
{
    ScenarioConfig c;
    c.node_count = nodes;
    c.seed = seed;
    c.duration_ms = duration_ms;
    c.params = sim_params();
    c.write_interval_ms = 2000;
    c.read_interval_ms = 1000;
    return c;
}

std::string tmp_path(const std::string& name)
{
    return (std::filesystem::temp_directory_path() / ("dadb-accept-" + std::to_string(::getpid()) + "-" + name))
        .string();
}

void retarget(Check& c)
{
    ChainParams p;
    p.min_difficulty = 1;
    p.max_difficulty = 32;
    p.retarget_clamp_lo = 0.5;
    p.retarget_clamp_hi = 2.0;
    auto r = adjust_difficulty({8.0, 10000, 20000}, p);
    c.expect(std::abs(r.d_current - 4.0) < 1e-12, "8 * 10000/20000 != 4");

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(1.0, 32.0);
    std::uniform_int_distribution<std::int64_t> t(1, 120000);
    for (int i = 0; i < 10000 && c.ok; ++i) {
        DifficultyState s{d(rng), t(rng), t(rng)};
        auto n = adjust_difficulty(s, p).d_current;
        if (s.t_actual_last_ms > s.t_target_ms) c.expect(n <= s.d_current, "slower blocks raised difficulty");
        if (s.t_actual_last_ms < s.t_target_ms) c.expect(n >= s.d_current, "faster blocks lowered difficulty");
        if (s.t_actual_last_ms == s.t_target_ms) c.expect(n == s.d_current, "on-target blocks changed difficulty");
        c.expect(n >= p.min_difficulty && n <= p.max_difficulty, "difficulty left its bounds");
    }
}

void consistency(Check& c)
{
    c.expect(consistency_level(5, 1000) == 0.995, "C(5, 1000) != 0.995");
    std::mt19937_64 rng(2);
    for (int log = 0; log < 1000 && c.ok; ++log) {
        std::uint64_t inc = 0, total = 0, want_inc = 0;
        for (auto n = 1 + rng() % 30; n > 0; --n) {
            std::vector<std::string> heads(1 + rng() % 10);
            for (auto& h : heads) h = std::string(1, static_cast<char>('a' + rng() % 4));
            auto mode = mode_head(heads);
            for (const auto& h : heads) inc += h != mode;
            std::size_t best = 0;
            for (const auto& h : heads) best = std::max<std::size_t>(best, std::count(heads.begin(), heads.end(), h));
            want_inc += heads.size() - best;
            total += heads.size();
        }
        c.expect(inc == want_inc, "mode-based count disagrees with recount");
        c.expect(std::abs(*consistency_level(inc, total) -
                          static_cast<double>(total - want_inc) / static_cast<double>(total)) < 1e-12,
                 "C disagrees with recount");
    }
}

void mining_round_trip(Check& c)
{
    ChainParams p;
    p.min_difficulty = 1;
    Block head = genesis_block();
    for (int i = 0; i < 100 && c.ok; ++i) {
        auto b = *mine_block(create_new_block("block " + std::to_string(i), head, 8, 1700000000 + i));
        c.expect(oracle::sha256_hex(canonical_block_bytes(b)) == b.hash, "hash disagrees with digest oracle");
        c.expect(oracle::leading_zero_bits(b.hash) >= 8, "mined hash below difficulty");
        c.expect(!verify_block(b, head, p), "mined block failed verification");

        auto flip = [](std::string h) {
            h[10] = h[10] == '0' ? '1' : '0';
            return h;
        };
        std::vector<std::pair<Block, VerifyError>> mutants;
        auto m = b;
        m.index += 1;
        mutants.push_back({m, VerifyError::WrongIndex});
        m = b;
        m.prev_hash = flip(m.prev_hash);
        mutants.push_back({m, VerifyError::PrevHashMismatch});
        m = b;
        m.hash = flip(m.hash);
        mutants.push_back({m, VerifyError::HashMismatch});
        m = b;
        m.data += "!";
        mutants.push_back({m, VerifyError::HashMismatch});
        m = b;
        m.timestamp += 1;
        mutants.push_back({m, VerifyError::HashMismatch});
        m = b;
        m.nonce += 1;
        mutants.push_back({m, VerifyError::HashMismatch});
        m = b;
        m.difficulty += 1;
        mutants.push_back({m, VerifyError::HashMismatch});
        // Re-hashed without new work: either it happens to qualify or it lacks work.
        m = b;
        m.data += "?";
        m.hash = oracle::sha256_hex(canonical_block_bytes(m));
        if (oracle::leading_zero_bits(m.hash) < 8) mutants.push_back({m, VerifyError::InsufficientWork});
        m = b;
        m.difficulty = 40;
        mutants.push_back({m, VerifyError::MalformedBlock});

        for (const auto& [mut, want] : mutants) {
            auto got = verify_block(mut, head, p);
            c.expect(got && *got == want, "block " + std::to_string(i) + ": expected " + std::string(to_string(want)) +
                                              ", got " + (got ? std::string(to_string(*got)) : "ok"));
        }
        head = b;
    }
}

void convergence(Check& c)
{
    auto r = run_scenario(scenario(5, 60000, 7));
    c.expect(r.consistency.final_c == 1.0, "final c != 1");
    c.expect(r.heads_equal, "heads differ");
    c.expect(r.final_chain_length > 20, "too few blocks committed");
}

void partition_heal(Check& c)
{
    auto cfg = scenario(5, 60000, 11);
    cfg.partitions.push_back({10000, 30000, {{0, 1}, {2, 3, 4}}});
    auto r = run_scenario(cfg);
    c.expect(r.fork_count >= 1, "no fork observed");
    c.expect(r.heads_equal, "heads differ after heal");
    c.expect(r.final_work == r.max_work_seen, "final head is not the maximum-work chain");
    c.expect(r.consistency.c && *r.consistency.c < 1.0, "c over the run did not drop");
    c.expect(r.consistency.post_heal_c == 1.0, "c did not return to 1 after heal");
}

void adversarial(Check& c)
{
    auto cfg = scenario(10, 120000, 3);
    cfg.malicious_fraction = 0.3;
    cfg.behaviors = {MaliciousBehavior::InvalidPow, MaliciousBehavior::BadPrevHash, MaliciousBehavior::TamperedSignature};
    auto r = run_scenario(cfg);
    c.expect(r.malicious_nodes.size() == 3, "expected 3 malicious nodes");
    c.expect(r.final_chain_valid, "honest chain fails verification");
    c.expect(r.malicious_blocks_in_chain == 0, "malicious block in honest chain");
    c.expect(r.rejected_invalid_blocks > 0, "nothing rejected");
    c.expect(r.consistency.final_c == 1.0, "honest post-run c != 1");
}

json deep_sum(int depth)
{
    if (depth == 0) return 1;
    auto sub = deep_sum(depth - 1);
    return {"add", sub, sub};
}

// 2^17 - 1 nodes: more evaluation steps than the budget allows.
const json& heavy_statement()
{
    static const json stmt = {"set", "heavy", deep_sum(16)};
    return stmt;
}

void contracts(Check& c)
{
    oracle::ContractFuzzer fuzz(7);
    oracle::ReferenceEvaluator ref;
    int faults = 0;
    for (int i = 0; i < 1000 && c.ok; ++i) {
        auto src = fuzz.contract();
        auto args = fuzz.args(3);
        auto init = fuzz.state();
        // Injected faults: an overflow every fifth contract, a step-limit blowup every tenth; it fires unless an earlier statement faults first.
        std::optional<ContractFault> injected;
        if (i % 5 == 1 || i % 10 == 3) {
            if (!ref.run(src, args, init).fault) injected = i % 5 == 1 ? ContractFault::Overflow : ContractFault::StepLimit;
            if (i % 5 == 1) src.push_back({"set", "a", {"mul", INT64_MAX, 2}});
            else src.push_back(heavy_statement());
        }
        MapStateView state;
        for (const auto& [k, v] : init) state.put(k, v);
        auto fault = execute(compile(src), args, state);
        auto expected = ref.run(src, args, init);
        c.expect((fault ? std::optional<std::string>(to_string(*fault)) : std::nullopt) == expected.fault,
                 "fault disagreement on " + src.dump());
        c.expect(state.values() == expected.state, "state disagreement on " + src.dump());
        if (fault) {
            ++faults;
            c.expect(state.values() == init, "faulting contract changed state");
        }
        if (injected) c.expect(fault == injected, "injected fault not reported on " + src.dump());
    }
    c.expect(faults >= 250, "too few faults exercised");
}

void cache(Check& c)
{
    const int n = 50;
    auto src = json::parse(R"([["add","n",["arg",0]],["if",["lt",["get","n"],100],[["add","small",1]],[]]])");
    auto id = contract_id_of(src);
    ContractCache cache;
    SourceProvider provider = [&](const std::string& want) -> std::optional<json> {
        return want == id ? std::optional<json>(src) : std::nullopt;
    };
    MapStateView cached, uncached;
    for (int i = 0; i < n; ++i) {
        std::vector<std::int64_t> args{i};
        auto f1 = execute(*cache.lookup(id, provider), args, cached);
        auto f2 = execute(compile(src), args, uncached);
        c.expect(f1 == f2 && cached.values() == uncached.values(), "cached and uncached runs diverged");
    }
    auto k = cache.counters();
    c.expect(k.compiles == 1, "compiles != 1");
    c.expect(k.hits == n - 1, "hits != N-1");
}

void durability(Check& c)
{
    using namespace testing_mesh;
    auto db = tmp_path("restart.db");
    std::filesystem::remove(db);
    std::string tip;
    std::string dump;
    auto serialize = [](const Chain& chain) {
        std::string s;
        for (const auto& b : chain) s += canonical_json(json(b)) + "\n";
        return s;
    };
    {
        Mesh m;
        m.add(quick_params(), true, db);
        m.node(0).start({});
        for (int i = 0; i < 20; ++i) {
            m.now += 900;
            m.node(0).submit(TxPayload::raw("durable " + std::to_string(i)), [](const SubmitResult&) {});
            m.run();
        }
        tip = m.node(0).store().get_latest_block_hash();
        dump = serialize(m.node(0).store().get_all_blocks());
    }
    Chain chain;
    {
        Mesh m;
        m.add(quick_params(), true, db);
        m.node(0).start({});
        chain = m.node(0).store().get_all_blocks();
        c.expect(m.node(0).store().get_latest_block_hash() == tip, "tip changed across restart");
        c.expect(serialize(chain) == dump, "chain not byte-identical after restart");
        c.expect(chain.size() == 21, "blocks lost across restart");
    }
    std::filesystem::remove(db);

    int injections = 0;
    for (std::size_t target = 1; target <= 20 && c.ok; ++target) {
        for (int step = 0; step <= static_cast<int>(AppendStep::Commit); ++step) {
            auto path = tmp_path("crash.db");
            std::filesystem::remove(path);
            {
                BlockStore s(path);
                for (std::size_t i = 0; i < target; ++i) s.add_block(chain[i]);
            }
            pid_t pid = ::fork();
            if (pid == 0) {
                BlockStore s(path);
                s.set_append_hook([step](AppendStep at) {
                    if (static_cast<int>(at) == step) ::_exit(0);
                });
                s.add_block(chain[target]);
                ::_exit(1);
            }
            int status = 0;
            ::waitpid(pid, &status, 0);
            ++injections;
            try {
                BlockStore after(path);
                auto n = after.get_block_count();
                c.expect(n == target, "crash changed the block count");
                c.expect(after.get_latest_block_hash() == after.get_block(n - 1).hash, "count and tip disagree");
            } catch (const std::exception& e) {
                c.expect(false, std::string("store unreadable after crash: ") + e.what());
            }
            std::filesystem::remove(path);
        }
    }
    c.expect(injections == 100, "expected 100 injection points");
}

void harness_determinism(Check& c)
{
    auto cfg = scenario(6, 40000, 99);
    cfg.partitions.push_back({8000, 16000, {{0, 1, 2}}});
    cfg.malicious_fraction = 0.34;
    cfg.behaviors = {MaliciousBehavior::BadPrevHash, MaliciousBehavior::InvalidPow};
    cfg.loss_rate = 0.02;
    auto a = run_scenario(cfg).to_json().dump(2);
    auto b = run_scenario(cfg).to_json().dump(2);
    c.expect(a == b, "reports differ");
}

void genesis(Check& c)
{
    // Canonical bytes assembled by hand: index, timestamp, data, prev_hash, difficulty, nonce.
    const std::string sep(1, '\x1f');
    auto bytes = "0" + sep + "0" + sep + "GENESIS" + sep + std::string(64, '0') + sep + "0" + sep + "0";
    auto digest = oracle::sha256_hex(bytes);
    c.expect(digest == "59f26e7ddc5e0efd36a420a4785746f5c0d9905185c2643db1df47774532c970", "oracle digest drifted");
    c.expect(genesis_block().hash == digest, "genesis hash differs from oracle");
}

} // namespace

int main()
{
    oracle::init();
    struct Entry {
        int id;
        const char* name;
        double budget_s;
        Criterion run;
    };
    const std::vector<Entry> entries = {
        {1, "retarget formula and direction", 1, retarget},
        {2, "consistency level and recount", 1, consistency},
        {3, "mining and verification round trip", 30, mining_round_trip},
        {4, "gossip convergence", 10, convergence},
        {5, "partition and heal", 15, partition_heal},
        {6, "adversarial rejection", 30, adversarial},
        {7, "contract determinism and atomicity", 30, contracts},
        {8, "contract cache", 30, cache},
        {9, "durability", 60, durability},
        {10, "harness determinism", 60, harness_determinism},
        {11, "genesis oracle", 1, genesis},
    };
    int failed = 0;
    for (const auto& e : entries) {
        Check c;
        auto t0 = std::chrono::steady_clock::now();
        try {
            e.run(c);
        } catch (const std::exception& ex) {
            c.expect(false, std::string("exception: ") + ex.what());
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        c.expect(secs < e.budget_s, "over time budget");
        failed += !c.ok;
        std::cout << "criterion " << e.id << " " << (c.ok ? "PASS" : "FAIL") << " " << e.name << " ("
                  << static_cast<long>(secs * 1000) << " ms)";
        if (!c.ok) std::cout << ": " << c.why.str();
        std::cout << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
