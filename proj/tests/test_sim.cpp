#include <dadb/errors.hpp>
#include <dadb/sim.hpp>

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

using namespace dadb;
using nlohmann::json;

namespace {

ScenarioConfig base(int nodes, std::int64_t duration_ms)
{
    ScenarioConfig c;
    c.node_count = nodes;
    c.seed = 1;
    c.duration_ms = duration_ms;
    c.params.target_block_interval_ms = 2000;
    c.params.initial_difficulty = 8;
    c.params.min_difficulty = 1;
    c.params.max_difficulty = 16;
    return c;
}

json scenario_json()
{
    return json::parse(R"({
      "node_count": 5, "seed": 4, "duration_ms": 30000,
      "params": {"target_block_interval_ms": 2000, "initial_difficulty": 8, "max_difficulty": 16},
      "workload": {"write_interval_ms": 2000, "read_interval_ms": 500},
      "partitions": [{"start_ms": 5000, "end_ms": 9000, "groups": [[0], [1, 2]]}],
      "malicious": {"fraction": 0.2, "behavior": "bad_prev_hash"},
      "link": {"latency_ms": 15, "loss_rate": 0.0}
    })");
}

// Independent recount: tally each sample by hand, no shared helpers.
std::pair<std::uint64_t, std::uint64_t> recount(const std::vector<std::vector<std::string>>& log)
{
    std::uint64_t total = 0, inconsistent = 0;
    for (const auto& heads : log) {
        std::size_t best = 0;
        for (const auto& h : heads) {
            std::size_t n = 0;
            for (const auto& o : heads) n += o == h;
            best = std::max(best, n);
        }
        total += heads.size();
        inconsistent += heads.size() - best;
    }
    return {inconsistent, total};
}

} // namespace

TEST(ScenarioConfig, ParsesAndRoundTrips)
{
    auto c = scenario_from_json(scenario_json());
    EXPECT_EQ(c.node_count, 5);
    EXPECT_EQ(c.read_interval_ms, 500);
    EXPECT_EQ(c.latency_ms, 15);
    EXPECT_EQ(c.malicious_count(), 1);
    ASSERT_EQ(c.behaviors.size(), 1u);
    EXPECT_EQ(c.behaviors[0], MaliciousBehavior::BadPrevHash);
    EXPECT_EQ(c.partitions[0].groups, (std::vector<std::vector<int>>{{0}, {1, 2}}));
    EXPECT_EQ(scenario_to_json(scenario_from_json(scenario_to_json(c))), scenario_to_json(c));
}

TEST(ScenarioConfig, RejectsInvalidInput)
{
    auto with = [](const char* pointer, json v) {
        auto j = scenario_json();
        j[json::json_pointer(pointer)] = std::move(v);
        return j;
    };
    EXPECT_THROW(scenario_from_json(with("/node_count", 0)), InputError);
    EXPECT_THROW(scenario_from_json(with("/node_count", 65)), InputError);
    EXPECT_THROW(scenario_from_json(with("/duration_ms", 0)), InputError);
    EXPECT_THROW(scenario_from_json(with("/extra", 1)), InputError);
    EXPECT_THROW(scenario_from_json(with("/workload/write_interval_ms", 0)), InputError);
    EXPECT_THROW(scenario_from_json(with("/partitions/0/groups", json::parse("[[0,1],[1,2]]"))), InputError);
    EXPECT_THROW(scenario_from_json(with("/partitions/0/groups", json::parse("[[0,5]]"))), InputError);
    EXPECT_THROW(scenario_from_json(with("/partitions/0/end_ms", 4000)), InputError);
    EXPECT_THROW(scenario_from_json(with("/partitions/1", json::parse(R"({"start_ms":8000,"end_ms":9500,"groups":[[3]]})"))),
                 InputError);
    EXPECT_THROW(scenario_from_json(with("/malicious/fraction", 1.0)), InputError);
    EXPECT_THROW(scenario_from_json(with("/malicious/fraction", -0.1)), InputError);
    EXPECT_THROW(scenario_from_json(with("/malicious/behavior", "eclipse")), InputError);
    EXPECT_THROW(scenario_from_json(with("/malicious/behavior", json::array())), InputError);
    EXPECT_THROW(scenario_from_json(with("/link/loss_rate", 1.0)), InputError);
    EXPECT_THROW(scenario_from_json(with("/seed", -3)), InputError);
    EXPECT_THROW(scenario_from_json(with("/params/max_difficulty", 40)), InputError);
    EXPECT_THROW(scenario_from_json(json::array()), InputError);
    EXPECT_THROW(run_scenario(base(0, 1000)), InputError);
}

TEST(ConsistencyLevel, SubstitutionAndEdges)
{
    EXPECT_EQ(consistency_level(5, 1000), 0.995);
    EXPECT_EQ(consistency_level(0, 7), 1.0);
    EXPECT_EQ(consistency_level(7, 7), 0.0);
    EXPECT_EQ(consistency_level(0, 0), std::nullopt);
    EXPECT_THROW(consistency_level(2, 1), InputError);
}

TEST(ConsistencyLevel, MatchesBruteForceRecountOnRandomLogs)
{
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::vector<std::string>> log(1 + rng() % 20);
        std::uint64_t inc = 0, total = 0;
        for (auto& heads : log) {
            heads.resize(1 + rng() % 9);
            for (auto& h : heads) h = std::string(1, static_cast<char>('a' + rng() % 3));
            auto mode = mode_head(heads);
            for (const auto& h : heads) inc += h != mode;
            total += heads.size();
        }
        auto [want_inc, want_total] = recount(log);
        ASSERT_EQ(inc, want_inc);
        ASSERT_EQ(total, want_total);
        ASSERT_NEAR(*consistency_level(inc, total),
                    static_cast<double>(want_total - want_inc) / static_cast<double>(want_total), 1e-12);
    }
}

TEST(ModeHead, TiesGoToSmallestHash)
{
    EXPECT_EQ(mode_head({"b", "a", "b", "a"}), "a");
    EXPECT_EQ(mode_head({"c", "b", "c"}), "c");
    EXPECT_EQ(mode_head({}), "");
}

TEST(Percentile, NearestRank)
{
    EXPECT_EQ(percentile({}, 50), 0);
    EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 50), 3);
    EXPECT_EQ(percentile({5, 1, 3, 2, 4}, 95), 5);
    EXPECT_EQ(percentile({15, 20, 35, 40, 50}, 40), 20);
}

TEST(RunScenario, QuiescentNetworkConverges)
{
    auto r = run_scenario(base(5, 60000));
    EXPECT_EQ(r.consistency.final_c, 1.0);
    EXPECT_EQ(r.consistency.c, 1.0);
    EXPECT_TRUE(r.heads_equal);
    EXPECT_TRUE(r.final_chain_valid);
    EXPECT_EQ(r.committed_tx_count, r.final_chain_length - 1);
    EXPECT_EQ(r.committed_tx_count, 29u);
    EXPECT_EQ(r.fork_count, 0u);
    EXPECT_GT(r.throughput_tps, 0);
    EXPECT_GE(r.write_latency_ms.p50, 0);
    EXPECT_LE(r.write_latency_ms.p50, r.write_latency_ms.p95);
    EXPECT_LE(r.write_latency_ms.p95, r.write_latency_ms.max);
    EXPECT_EQ(r.consistency.samples.size(), 59u);
}

TEST(RunScenario, SameSeedSameReport)
{
    auto c = base(6, 30000);
    c.loss_rate = 0.05;
    c.malicious_fraction = 0.34;
    c.behaviors = {MaliciousBehavior::InvalidPow, MaliciousBehavior::TamperedSignature};
    auto a = run_scenario(c).to_json().dump();
    EXPECT_EQ(a, run_scenario(c).to_json().dump());
    c.seed = 2;
    EXPECT_NE(a, run_scenario(c).to_json().dump());
}

TEST(RunScenario, SampleLogRecountMatchesReport)
{
    auto c = base(5, 40000);
    c.partitions.push_back({8000, 20000, {{0, 1}, {2, 3, 4}}});
    auto r = run_scenario(c);
    std::vector<std::vector<std::string>> log;
    for (const auto& s : r.consistency.samples) log.push_back(s.heads);
    auto [inc, total] = recount(log);
    EXPECT_EQ(r.consistency.n_inconsistent, inc);
    EXPECT_EQ(r.consistency.n_total, total);
    EXPECT_EQ(r.consistency.c, consistency_level(inc, total));
}

TEST(RunScenario, PartitionForksThenHeals)
{
    auto c = base(5, 60000);
    c.partitions.push_back({10000, 30000, {{0, 1}, {2, 3, 4}}});
    auto r = run_scenario(c);
    EXPECT_GE(r.fork_count, 1u);
    bool split_seen = false;
    for (const auto& s : r.consistency.samples) {
        if (s.t_ms > 12000 && s.t_ms < 30000) split_seen |= std::set(s.heads.begin(), s.heads.end()).size() == 2;
    }
    EXPECT_TRUE(split_seen);
    EXPECT_LT(*r.consistency.c, 1.0);
    EXPECT_EQ(r.consistency.post_heal_c, 1.0);
    EXPECT_EQ(r.consistency.final_c, 1.0);
    EXPECT_TRUE(r.heads_equal);
    EXPECT_EQ(r.final_work, r.max_work_seen);
    EXPECT_GE(r.max_reorg_depth, 1u);
}

TEST(RunScenario, UnlistedNodesFormTheirOwnGroup)
{
    auto c = base(4, 30000);
    c.partitions.push_back({4000, 20000, {{0, 1}}});
    auto r = run_scenario(c);
    bool split_seen = false;
    for (const auto& s : r.consistency.samples)
        split_seen |= s.t_ms > 8000 && s.t_ms < 20000 && s.heads[0] != s.heads[2] && s.heads[2] == s.heads[3];
    EXPECT_TRUE(split_seen);
    EXPECT_TRUE(r.heads_equal);
}

TEST(RunScenario, ZeroLengthPartitionChangesNothing)
{
    auto c = base(5, 20000);
    auto plain = run_scenario(c);
    c.partitions.push_back({7000, 7000, {{0}, {1, 2, 3, 4}}});
    auto r = run_scenario(c);
    EXPECT_EQ(r.consistency.c, plain.consistency.c);
    EXPECT_EQ(r.final_head, plain.final_head);
}

TEST(RunScenario, EachMaliciousBehaviorIsRejected)
{
    for (auto b : {MaliciousBehavior::InvalidPow, MaliciousBehavior::BadPrevHash, MaliciousBehavior::TamperedSignature}) {
        auto c = base(6, 30000);
        c.malicious_fraction = 0.34;
        c.behaviors = {b};
        auto r = run_scenario(c);
        SCOPED_TRACE(std::string(to_string(b)));
        EXPECT_EQ(r.malicious_nodes.size(), 2u);
        EXPECT_GT(r.malicious_blocks_emitted, 0u);
        EXPECT_GE(r.rejected_invalid_blocks, r.malicious_blocks_emitted);
        EXPECT_EQ(r.malicious_blocks_in_chain, 0u);
        EXPECT_TRUE(r.final_chain_valid);
        EXPECT_EQ(r.consistency.final_c, 1.0);
        EXPECT_EQ(r.consistency.samples.front().heads.size(), 4u);
    }
}

TEST(RunScenario, ReportJsonAndCsvShape)
{
    auto c = base(3, 5000);
    auto r = run_scenario(c);
    auto j = r.to_json();
    for (const char* k : {"committed_tx_count", "throughput_tps", "write_latency_ms", "read_latency_ms", "consistency",
                          "fork_count", "max_reorg_depth", "rejected_invalid_blocks", "scenario"})
        EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["consistency"]["samples"].size(), 4u);
    auto csv = r.samples_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "t_ms,mode_hash,n_inconsistent,n_nodes");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
