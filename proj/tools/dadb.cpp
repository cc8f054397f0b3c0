#include <dadb/contracts.hpp>
#include <dadb/errors.hpp>
#include <dadb/runtime.hpp>
#include <dadb/sim.hpp>

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using nlohmann::json;
using namespace dadb;

namespace {

json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError(path + ": " + e.what());
    }
}

int print_response(const MessageEnvelope& env, const json& extra = json::object())
{
    auto out = env.payload;
    for (const auto& [k, v] : extra.items()) out[k] = v;
    std::cout << out.dump(2) << "\n";
    return out.value("ok", false) ? kExitOk : kExitFailed;
}

std::string csv_path_for(const std::string& report)
{
    auto dot = report.rfind('.');
    auto slash = report.rfind('/');
    if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) return report.substr(0, dot) + ".csv";
    return report + ".csv";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"dadb: proof-of-work replicated database node, client and simulator"};
    app.require_subcommand(1);

    // node run
    auto* node_cmd = app.add_subcommand("node", "Run a node")->require_subcommand(1);
    auto* node_run = node_cmd->add_subcommand("run", "Start a node and serve until interrupted");
    NodeConfig ncfg;
    int difficulty = ncfg.params.initial_difficulty;
    std::int64_t target_interval = ncfg.params.target_block_interval_ms;
    bool no_mine = false;
    node_run->add_option("--listen", ncfg.listen, "host:port to listen on")->required();
    node_run->add_option("--peer", ncfg.peers, "bootstrap peer host:port (repeatable)");
    node_run->add_option("--db", ncfg.db_path, "SQLite database file")->required();
    node_run->add_option("--difficulty", difficulty, "initial difficulty in leading zero bits");
    node_run->add_option("--target-interval", target_interval, "target block interval in ms");
    node_run->add_option("--key", ncfg.key_path, "identity key file (created if missing)")->required();
    node_run->add_flag("--no-mine", no_mine, "relay and serve only; reject submissions");

    // client
    auto* client = app.add_subcommand("client", "Talk to a running node")->require_subcommand(1);
    std::string node_addr;
    client->add_option("--node", node_addr, "node host:port")->required();
    std::string put_data, deploy_file, call_id, state_id, state_key;
    std::vector<std::int64_t> call_args;
    std::uint64_t block_idx = 0;
    auto* c_put = client->add_subcommand("put", "Store a raw string in a new block");
    c_put->add_option("data", put_data)->required();
    auto* c_deploy = client->add_subcommand("deploy", "Deploy a contract from a JSON file");
    c_deploy->add_option("file", deploy_file)->required();
    auto* c_call = client->add_subcommand("call", "Call a deployed contract");
    c_call->add_option("id", call_id)->required();
    c_call->add_option("--arg", call_args, "integer argument (repeatable)");
    auto* c_chain = client->add_subcommand("chain", "Print the full chain");
    auto* c_block = client->add_subcommand("block", "Print one block");
    c_block->add_option("index", block_idx)->required();
    auto* c_state = client->add_subcommand("state", "Read one contract state key");
    c_state->add_option("id", state_id)->required();
    c_state->add_option("key", state_key)->required();
    auto* c_stats = client->add_subcommand("stats", "Print node statistics");

    // sim run
    auto* sim_cmd = app.add_subcommand("sim", "Deterministic multi-node simulation")->require_subcommand(1);
    auto* sim_run = sim_cmd->add_subcommand("run", "Run a scenario and write a report");
    std::string scenario_path, out_path;
    std::optional<std::uint64_t> seed;
    sim_run->add_option("scenario", scenario_path, "scenario JSON")->required();
    sim_run->add_option("--seed", seed, "override the scenario seed");
    sim_run->add_option("--out", out_path, "report JSON path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*node_run) {
            ncfg.params.initial_difficulty = difficulty;
            ncfg.params.target_block_interval_ms = target_interval;
            if (difficulty < ncfg.params.min_difficulty) ncfg.params.min_difficulty = difficulty;
            ncfg.mining = !no_mine;
            return run_node(ncfg);
        }

        if (*client) {
            if (*c_put) {
                auto env = client_request(node_addr, MessageKind::Tx, {{"tx", tx_to_json(TxPayload::raw(put_data))}});
                return print_response(env);
            }
            if (*c_deploy) {
                auto source = read_json_file(deploy_file);
                auto env = client_request(node_addr, MessageKind::Tx, {{"tx", tx_to_json(TxPayload::deploy(source))}});
                return print_response(env, {{"contract_id", contract_id_of(source)}});
            }
            if (*c_call) {
                auto env = client_request(node_addr, MessageKind::Tx,
                                          {{"tx", tx_to_json(TxPayload::call(call_id, call_args))}});
                return print_response(env);
            }
            json q;
            if (*c_chain) q = {{"what", "chain"}};
            if (*c_block) q = {{"what", "block"}, {"params", {{"index", block_idx}}}};
            if (*c_state) q = {{"what", "state"}, {"params", {{"contract_id", state_id}, {"key", state_key}}}};
            if (*c_stats) q = {{"what", "stats"}};
            return print_response(client_request(node_addr, MessageKind::Query, q));
        }

        if (*sim_run) {
            auto cfg = scenario_from_json(read_json_file(scenario_path));
            if (seed) cfg.seed = *seed;
            auto report = run_scenario(cfg);
            std::ofstream out(out_path);
            out << report.to_json().dump(2) << "\n";
            std::ofstream csv(csv_path_for(out_path));
            csv << report.samples_csv();
            if (!out || !csv) {
                std::cerr << "cannot write report to " << out_path << "\n";
                return kExitStore;
            }
            const auto& c = report.consistency;
            std::cout << "committed " << report.committed_tx_count << " tx, forks " << report.fork_count
                      << ", rejected " << report.rejected_invalid_blocks << ", c "
                      << (c.c ? std::to_string(*c.c) : "n/a") << ", final c "
                      << (c.final_c ? std::to_string(*c.final_c) : "n/a") << ", heads equal "
                      << (report.heads_equal ? "yes" : "no") << "\n";
            return kExitOk;
        }
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NetworkError& e) {
        std::cerr << "network error: " << e.what() << "\n";
        return kExitNetwork;
    } catch (const StoreError& e) {
        std::cerr << "store error: " << e.what() << "\n";
        return kExitStore;
    }
    return kExitOk;
}
