#pragma once

#include <dadb/chain.hpp>

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dadb {

enum class MaliciousBehavior { InvalidPow, BadPrevHash, TamperedSignature };

std::string_view to_string(MaliciousBehavior b);

struct PartitionWindow {
    std::int64_t start_ms = 0;
    std::int64_t end_ms = 0;
    /// Nodes not listed in any group form one extra group of their own.
    std::vector<std::vector<int>> groups;
};

struct ScenarioConfig {
    int node_count = 0;
    std::uint64_t seed = 0;
    std::int64_t duration_ms = 0;
    ChainParams params;
    std::int64_t write_interval_ms = 2000;
    std::int64_t read_interval_ms = 1000;
    std::vector<PartitionWindow> partitions;
    double malicious_fraction = 0.0;
    std::vector<MaliciousBehavior> behaviors; // assigned round-robin to malicious nodes
    std::int64_t latency_ms = 20;
    double loss_rate = 0.0;
    std::int64_t hash_rate_per_ms = 1000; // virtual hashes per virtual millisecond
    std::int64_t handshake_timeout_ms = 5000;

    /// Throws InputError on any violated invariant.
    void validate() const;
    int malicious_count() const;
};

/// Parses and validates. Throws InputError.
ScenarioConfig scenario_from_json(const nlohmann::json& j);
nlohmann::json scenario_to_json(const ScenarioConfig& c);

/// 1 - n_inconsistent / n_total; nullopt when n_total is 0. Throws InputError if n_inconsistent > n_total.
std::optional<double> consistency_level(std::uint64_t n_inconsistent, std::uint64_t n_total);

/// Most frequent value; ties go to the lexicographically smallest. Empty input gives "".
std::string mode_head(const std::vector<std::string>& heads);

struct ConsistencySample {
    std::int64_t t_ms = 0;
    std::vector<std::string> heads; // honest nodes in index order
    std::string mode_hash;
    std::uint64_t n_inconsistent = 0;
};

struct ConsistencyReport {
    std::vector<ConsistencySample> samples;
    std::uint64_t n_total = 0;
    std::uint64_t n_inconsistent = 0;
    std::optional<double> c;
    /// Over samples taken at least two write intervals after the last heal.
    std::optional<double> post_heal_c;
    /// One read per honest node after the end-of-run drain.
    std::optional<double> final_c;
};

struct LatencySummary {
    double p50 = 0;
    double p95 = 0;
    double max = 0;
};

struct MetricsReport {
    ScenarioConfig scenario;
    std::uint64_t committed_tx_count = 0;
    double throughput_tps = 0;
    LatencySummary write_latency_ms;
    LatencySummary read_latency_ms;
    ConsistencyReport consistency;
    std::uint64_t fork_count = 0;
    std::uint64_t max_reorg_depth = 0;
    std::uint64_t rejected_invalid_blocks = 0;
    std::vector<int> malicious_nodes;

    // End-of-run audit of the honest nodes.
    bool heads_equal = false;
    std::string final_head;
    std::uint64_t final_chain_length = 0;
    std::uint64_t final_work = 0;
    std::uint64_t max_work_seen = 0;
    bool final_chain_valid = false;
    std::uint64_t malicious_blocks_in_chain = 0;
    std::uint64_t malicious_blocks_emitted = 0;

    nlohmann::json to_json() const;
    /// t_ms,mode_hash,n_inconsistent,n_nodes
    std::string samples_csv() const;
};

/// Nearest-rank percentile of an unsorted sample; 0 for an empty one.
double percentile(std::vector<double> values, double p);

/// Runs the whole scenario on a virtual clock. Same config gives the same report.
MetricsReport run_scenario(const ScenarioConfig& config);

} // namespace dadb
