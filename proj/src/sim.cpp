#include <dadb/errors.hpp>
#include <dadb/node.hpp>
#include <dadb/sim.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <queue>
#include <random>
#include <set>
#include <sstream>

namespace dadb {

using nlohmann::json;

std::string_view to_string(MaliciousBehavior b)
{
    switch (b) {
    case MaliciousBehavior::InvalidPow: return "invalid_pow";
    case MaliciousBehavior::BadPrevHash: return "bad_prev_hash";
    case MaliciousBehavior::TamperedSignature: return "tampered_signature";
    }
    return "unknown";
}

namespace {

MaliciousBehavior parse_behavior(const std::string& s)
{
    for (auto b : {MaliciousBehavior::InvalidPow, MaliciousBehavior::BadPrevHash, MaliciousBehavior::TamperedSignature})
        if (to_string(b) == s) return b;
    throw InputError("unknown malicious behavior: " + s);
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object()) throw InputError(where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw InputError("unknown field " + where + "." + k);
    }
}

template <typename T>
T get_field(const json& j, const char* key, T fallback)
{
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw InputError(std::string("field ") + key + " has the wrong type");
    }
}

std::int64_t get_int(const json& j, const char* key, std::int64_t fallback)
{
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) throw InputError(std::string("field ") + key + " must be an integer");
    return j.at(key).get<std::int64_t>();
}

} // namespace

int ScenarioConfig::malicious_count() const
{
    return static_cast<int>(std::floor(malicious_fraction * node_count + 1e-9));
}

void ScenarioConfig::validate() const
{
    if (node_count < 1 || node_count > 64) throw InputError("node_count must be in [1, 64]");
    if (duration_ms <= 0) throw InputError("duration_ms must be positive");
    if (write_interval_ms <= 0 || read_interval_ms <= 0) throw InputError("workload intervals must be positive");
    params.validate();
    if (!(malicious_fraction >= 0.0 && malicious_fraction <= 1.0))
        throw InputError("malicious fraction must be in [0, 1]");
    if (malicious_count() > 0 && behaviors.empty()) throw InputError("malicious nodes need a behavior");
    if (malicious_count() >= node_count) throw InputError("at least one node must be honest");
    if (latency_ms < 0) throw InputError("latency_ms must be non-negative");
    if (!(loss_rate >= 0.0 && loss_rate < 1.0)) throw InputError("loss_rate must be in [0, 1)");
    if (hash_rate_per_ms <= 0) throw InputError("hash_rate_per_ms must be positive");
    if (handshake_timeout_ms <= 0) throw InputError("handshake_timeout_ms must be positive");

    std::vector<const PartitionWindow*> windows;
    for (const auto& p : partitions) {
        if (p.start_ms < 0 || p.end_ms < p.start_ms) throw InputError("partition window must have 0 <= start <= end");
        if (p.groups.empty()) throw InputError("partition needs at least one group");
        std::set<int> seen;
        for (const auto& g : p.groups) {
            if (g.empty()) throw InputError("partition groups must be non-empty");
            for (int n : g) {
                if (n < 0 || n >= node_count) throw InputError("partition names an unknown node");
                if (!seen.insert(n).second) throw InputError("partition groups overlap");
            }
        }
        windows.push_back(&p);
    }
    std::sort(windows.begin(), windows.end(), [](auto a, auto b) { return a->start_ms < b->start_ms; });
    for (std::size_t i = 1; i < windows.size(); ++i)
        if (windows[i]->start_ms < windows[i - 1]->end_ms) throw InputError("partition windows overlap in time");
}

ScenarioConfig scenario_from_json(const json& j)
{
    check_keys(j,
               {"node_count", "seed", "duration_ms", "params", "workload", "partitions", "malicious", "link",
                "hash_rate_per_ms", "handshake_timeout_ms"},
               "scenario");
    if (!j.contains("node_count") || !j.contains("duration_ms"))
        throw InputError("scenario needs node_count and duration_ms");
    ScenarioConfig c;
    c.node_count = static_cast<int>(get_int(j, "node_count", 0));
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() || (j["seed"].is_number_integer() && !j["seed"].is_number_unsigned()))
            throw InputError("seed must be a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    c.duration_ms = get_int(j, "duration_ms", 0);
    c.hash_rate_per_ms = get_int(j, "hash_rate_per_ms", c.hash_rate_per_ms);
    c.handshake_timeout_ms = get_int(j, "handshake_timeout_ms", c.handshake_timeout_ms);

    if (j.contains("params")) {
        const auto& p = j["params"];
        check_keys(p,
                   {"target_block_interval_ms", "initial_difficulty", "min_difficulty", "max_difficulty",
                    "retarget_clamp_lo", "retarget_clamp_hi"},
                   "params");
        c.params.target_block_interval_ms = get_int(p, "target_block_interval_ms", c.params.target_block_interval_ms);
        c.params.initial_difficulty = static_cast<int>(get_int(p, "initial_difficulty", c.params.initial_difficulty));
        c.params.min_difficulty = static_cast<int>(get_int(p, "min_difficulty", c.params.min_difficulty));
        c.params.max_difficulty = static_cast<int>(get_int(p, "max_difficulty", c.params.max_difficulty));
        c.params.retarget_clamp_lo = get_field<double>(p, "retarget_clamp_lo", c.params.retarget_clamp_lo);
        c.params.retarget_clamp_hi = get_field<double>(p, "retarget_clamp_hi", c.params.retarget_clamp_hi);
    }
    if (j.contains("workload")) {
        const auto& w = j["workload"];
        check_keys(w, {"write_interval_ms", "read_interval_ms"}, "workload");
        c.write_interval_ms = get_int(w, "write_interval_ms", c.write_interval_ms);
        c.read_interval_ms = get_int(w, "read_interval_ms", c.read_interval_ms);
    }
    if (j.contains("partitions")) {
        if (!j["partitions"].is_array()) throw InputError("partitions must be an array");
        for (const auto& p : j["partitions"]) {
            check_keys(p, {"start_ms", "end_ms", "groups"}, "partitions[]");
            PartitionWindow w;
            w.start_ms = get_int(p, "start_ms", 0);
            w.end_ms = get_int(p, "end_ms", 0);
            if (!p.contains("groups") || !p["groups"].is_array()) throw InputError("partition needs groups");
            for (const auto& g : p["groups"]) {
                if (!g.is_array()) throw InputError("partition group must be an array of node indices");
                std::vector<int> members;
                for (const auto& n : g) {
                    if (!n.is_number_integer()) throw InputError("node index must be an integer");
                    members.push_back(n.get<int>());
                }
                w.groups.push_back(std::move(members));
            }
            c.partitions.push_back(std::move(w));
        }
    }
    if (j.contains("malicious")) {
        const auto& m = j["malicious"];
        check_keys(m, {"fraction", "behavior"}, "malicious");
        c.malicious_fraction = get_field<double>(m, "fraction", 0.0);
        if (m.contains("behavior")) {
            const auto& b = m["behavior"];
            if (b.is_string()) {
                c.behaviors.push_back(parse_behavior(b.get<std::string>()));
            } else if (b.is_array()) {
                for (const auto& x : b) {
                    if (!x.is_string()) throw InputError("behavior entries must be strings");
                    c.behaviors.push_back(parse_behavior(x.get<std::string>()));
                }
            } else {
                throw InputError("behavior must be a string or a list of strings");
            }
        }
    }
    if (j.contains("link")) {
        const auto& l = j["link"];
        check_keys(l, {"latency_ms", "loss_rate"}, "link");
        c.latency_ms = get_int(l, "latency_ms", c.latency_ms);
        c.loss_rate = get_field<double>(l, "loss_rate", c.loss_rate);
    }
    c.validate();
    return c;
}

json scenario_to_json(const ScenarioConfig& c)
{
    json parts = json::array();
    for (const auto& p : c.partitions) parts.push_back({{"start_ms", p.start_ms}, {"end_ms", p.end_ms}, {"groups", p.groups}});
    json behaviors = json::array();
    for (auto b : c.behaviors) behaviors.push_back(std::string(to_string(b)));
    return {
        {"node_count", c.node_count},
        {"seed", c.seed},
        {"duration_ms", c.duration_ms},
        {"params",
         {{"target_block_interval_ms", c.params.target_block_interval_ms},
          {"initial_difficulty", c.params.initial_difficulty},
          {"min_difficulty", c.params.min_difficulty},
          {"max_difficulty", c.params.max_difficulty},
          {"retarget_clamp_lo", c.params.retarget_clamp_lo},
          {"retarget_clamp_hi", c.params.retarget_clamp_hi}}},
        {"workload", {{"write_interval_ms", c.write_interval_ms}, {"read_interval_ms", c.read_interval_ms}}},
        {"partitions", parts},
        {"malicious", {{"fraction", c.malicious_fraction}, {"behavior", behaviors}}},
        {"link", {{"latency_ms", c.latency_ms}, {"loss_rate", c.loss_rate}}},
        {"hash_rate_per_ms", c.hash_rate_per_ms},
        {"handshake_timeout_ms", c.handshake_timeout_ms},
    };
}

std::optional<double> consistency_level(std::uint64_t n_inconsistent, std::uint64_t n_total)
{
    if (n_inconsistent > n_total) throw InputError("n_inconsistent exceeds n_total");
    if (n_total == 0) return std::nullopt;
    return 1.0 - static_cast<double>(n_inconsistent) / static_cast<double>(n_total);
}

std::string mode_head(const std::vector<std::string>& heads)
{
    std::map<std::string, std::size_t> freq;
    for (const auto& h : heads) ++freq[h];
    std::string best;
    std::size_t best_n = 0;
    for (const auto& [h, n] : freq) {
        if (n > best_n) { // map order makes the first maximum the smallest hash
            best = h;
            best_n = n;
        }
    }
    return best;
}

double percentile(std::vector<double> values, double p)
{
    if (values.empty()) return 0;
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

json MetricsReport::to_json() const
{
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json samples = json::array();
    for (const auto& s : consistency.samples)
        samples.push_back(
            {{"t_ms", s.t_ms}, {"heads", s.heads}, {"mode_hash", s.mode_hash}, {"n_inconsistent", s.n_inconsistent}});
    return {
        {"scenario", scenario_to_json(scenario)},
        {"committed_tx_count", committed_tx_count},
        {"throughput_tps", throughput_tps},
        {"write_latency_ms", {{"p50", write_latency_ms.p50}, {"p95", write_latency_ms.p95}, {"max", write_latency_ms.max}}},
        {"read_latency_ms", {{"p50", read_latency_ms.p50}, {"p95", read_latency_ms.p95}}},
        {"consistency",
         {{"n_total", consistency.n_total},
          {"n_inconsistent", consistency.n_inconsistent},
          {"c", opt(consistency.c)},
          {"post_heal_c", opt(consistency.post_heal_c)},
          {"final_c", opt(consistency.final_c)},
          {"samples", samples}}},
        {"fork_count", fork_count},
        {"max_reorg_depth", max_reorg_depth},
        {"rejected_invalid_blocks", rejected_invalid_blocks},
        {"malicious_nodes", malicious_nodes},
        {"final",
         {{"heads_equal", heads_equal},
          {"head", final_head},
          {"chain_length", final_chain_length},
          {"cumulative_work", final_work},
          {"max_work_seen", max_work_seen},
          {"chain_valid", final_chain_valid},
          {"malicious_blocks_in_chain", malicious_blocks_in_chain},
          {"malicious_blocks_emitted", malicious_blocks_emitted}}},
    };
}

std::string MetricsReport::samples_csv() const
{
    std::ostringstream out;
    out << "t_ms,mode_hash,n_inconsistent,n_nodes\n";
    for (const auto& s : consistency.samples)
        out << s.t_ms << "," << s.mode_hash << "," << s.n_inconsistent << "," << s.heads.size() << "\n";
    return out.str();
}

namespace {

class EventQueue
{
public:
    std::int64_t now() const { return now_; }

    void at(std::int64_t t, std::function<void()> fn)
    {
        events_.push(Event{std::max(t, now_), seq_++, std::move(fn)});
    }

    bool empty() const { return events_.empty(); }
    std::int64_t next_time() const { return events_.top().t; }

    void step()
    {
        auto ev = events_.top();
        events_.pop();
        now_ = ev.t;
        ev.fn();
    }

private:
    struct Event {
        std::int64_t t;
        std::uint64_t seq;
        std::function<void()> fn;
        bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
    };
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::int64_t now_ = 0;
    std::uint64_t seq_ = 0;
};

class SimRuntime : public Runtime
{
public:
    explicit SimRuntime(EventQueue& q) : q_(q) {}
    std::int64_t now_ms() const override { return q_.now(); }
    void schedule(std::int64_t delay_ms, std::function<void()> fn) override { q_.at(q_.now() + delay_ms, std::move(fn)); }

private:
    EventQueue& q_;
};

// Real nonce search; completion lands after attempts / hash_rate virtual ms.
class SimMiner : public Miner
{
public:
    SimMiner(EventQueue& q, std::int64_t hash_rate) : q_(q), rate_(hash_rate) {}

    void start(Block candidate, Done done) override
    {
        auto flag = std::make_shared<bool>(false);
        current_ = flag;
        auto first = candidate.nonce;
        auto mined = mine_block(std::move(candidate));
        auto attempts = static_cast<std::int64_t>(mined->nonce - first + 1);
        auto delay = std::max<std::int64_t>(1, (attempts + rate_ - 1) / rate_);
        q_.at(q_.now() + delay, [flag, done = std::move(done), mined = std::move(mined)] {
            done(*flag ? std::nullopt : mined);
        });
    }

    void cancel() override
    {
        if (current_) *current_ = true;
    }

private:
    EventQueue& q_;
    std::int64_t rate_;
    std::shared_ptr<bool> current_;
};

std::string sim_addr(int i)
{
    return "sim:" + std::to_string(i);
}

class Simulation;

class SimTransport : public Transport
{
public:
    SimTransport(Simulation& sim, int self) : sim_(sim), self_(self) {}
    std::optional<ConnId> dial(const std::string& addr) override;
    bool send(ConnId conn, const MessageEnvelope& env) override;
    void close(ConnId) override {}

private:
    Simulation& sim_;
    int self_;
};

class Tracker : public NodeObserver
{
public:
    Tracker(Simulation& sim, int idx) : sim_(sim), idx_(idx) {}
    void block_appended(const Block& b) override;

private:
    Simulation& sim_;
    int idx_;
};

class Simulation
{
public:
    explicit Simulation(const ScenarioConfig& c) : cfg_(c), runtime_(q_), link_rng_(c.seed ^ 0x6c696e6bULL)
    {
        build_nodes();
    }

    MetricsReport run();

    // Network
    void send_bytes(int from, int to, std::string bytes)
    {
        if (to < 0 || to >= cfg_.node_count || blocked(from, to)) return;
        if (cfg_.loss_rate > 0 && unit(link_rng_) < cfg_.loss_rate) return;
        q_.at(q_.now() + cfg_.latency_ms, [this, from, to, bytes = std::move(bytes)] {
            if (blocked(from, to)) return;
            auto& node = *nodes_[static_cast<std::size_t>(to)];
            MessageEnvelope env;
            try {
                env = decode_verified_envelope(bytes);
            } catch (const ProtocolError&) {
                node.on_bad_envelope(static_cast<ConnId>(from) + 1);
                return;
            }
            node.on_message(static_cast<ConnId>(from) + 1, env);
        });
    }

    int node_count() const { return cfg_.node_count; }

    void on_append(int idx, const Block& b)
    {
        heights_[b.index].insert(b.hash);
        auto& acc = accepted_[b.hash];
        if (acc.insert(idx).second && acc.size() == majority_) {
            auto it = submitted_.find(b.data);
            if (it != submitted_.end()) write_latencies_.push_back(static_cast<double>(q_.now() - it->second));
        }
        auto work = cumulative_work(nodes_[static_cast<std::size_t>(idx)]->store().get_all_blocks());
        max_work_ = std::max(max_work_, work);
    }

private:
    static double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

    bool blocked(int a, int b) const
    {
        return !group_of_.empty() && group_of_[static_cast<std::size_t>(a)] != group_of_[static_cast<std::size_t>(b)];
    }

    void build_nodes();
    void apply_partition(const PartitionWindow& w);
    void heal();
    void schedule_write(std::int64_t t, std::uint64_t k);
    void schedule_read(std::int64_t t);
    void schedule_attack(std::int64_t t, int idx, MaliciousBehavior b);
    void attack(int idx, MaliciousBehavior b);
    std::vector<std::string> honest_heads() const;

    ScenarioConfig cfg_;
    EventQueue q_;
    SimRuntime runtime_;
    std::mt19937_64 link_rng_;
    std::vector<int> group_of_;

    std::vector<std::unique_ptr<BlockStore>> stores_;
    std::vector<std::unique_ptr<SimTransport>> transports_;
    std::vector<std::unique_ptr<SimMiner>> miners_;
    std::vector<std::unique_ptr<Tracker>> trackers_;
    std::vector<std::unique_ptr<Node>> nodes_;
    std::vector<int> honest_;
    std::vector<int> malicious_;
    std::map<int, MaliciousBehavior> behavior_of_;
    std::mt19937_64 attack_rng_{0};

    std::size_t majority_ = 1;
    std::map<std::uint64_t, std::set<std::string>> heights_;
    std::map<std::string, std::set<int>> accepted_;
    std::map<std::string, std::int64_t> submitted_; // block data -> submit time
    std::vector<double> write_latencies_;
    std::uint64_t max_work_ = 0;
    std::set<std::string> malicious_hashes_;
    std::int64_t last_heal_ms_ = -1;

    ConsistencyReport consistency_;
};

std::optional<ConnId> SimTransport::dial(const std::string& addr)
{
    if (addr.rfind("sim:", 0) != 0) return std::nullopt;
    int j = 0;
    try {
        j = std::stoi(addr.substr(4));
    } catch (const std::exception&) {
        return std::nullopt;
    }
    if (j < 0 || j >= sim_.node_count() || j == self_) return std::nullopt;
    return static_cast<ConnId>(j) + 1;
}

bool SimTransport::send(ConnId conn, const MessageEnvelope& env)
{
    sim_.send_bytes(self_, static_cast<int>(conn) - 1, encode_envelope(env));
    return true;
}

void Tracker::block_appended(const Block& b)
{
    sim_.on_append(idx_, b);
}

void Simulation::build_nodes()
{
    auto n = cfg_.node_count;
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 pick(cfg_.seed ^ 0x6d616c6963ULL);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[pick() % i]);
    std::set<int> bad(order.begin(), order.begin() + cfg_.malicious_count());
    int k = 0;
    for (int i : bad) behavior_of_[i] = cfg_.behaviors[static_cast<std::size_t>(k++) % cfg_.behaviors.size()];
    attack_rng_.seed(cfg_.seed ^ 0x61747461636bULL);

    for (int i = 0; i < n; ++i) {
        std::string material = "dadb-sim-node/" + std::to_string(cfg_.seed) + "/" + std::to_string(i);
        auto digest = sha256(as_bytes(material));
        NodeIdentity::Seed seed{};
        std::copy(digest.begin(), digest.end(), seed.begin());

        NodeOptions opts;
        opts.listen_addr = sim_addr(i);
        opts.params = cfg_.params;
        opts.handshake_timeout_ms = cfg_.handshake_timeout_ms;
        stores_.push_back(std::make_unique<BlockStore>(":memory:"));
        transports_.push_back(std::make_unique<SimTransport>(*this, i));
        miners_.push_back(std::make_unique<SimMiner>(q_, cfg_.hash_rate_per_ms));
        nodes_.push_back(std::make_unique<Node>(NodeIdentity::from_seed(seed), opts, *stores_.back(),
                                                *transports_.back(), runtime_, *miners_.back()));
        if (bad.count(i)) {
            malicious_.push_back(i);
        } else {
            honest_.push_back(i);
            trackers_.push_back(std::make_unique<Tracker>(*this, i));
            nodes_.back()->set_observer(trackers_.back().get());
        }
    }
    majority_ = honest_.size() / 2 + 1;
}

void Simulation::apply_partition(const PartitionWindow& w)
{
    group_of_.assign(static_cast<std::size_t>(cfg_.node_count), -1);
    for (std::size_t g = 0; g < w.groups.size(); ++g)
        for (int n : w.groups[g]) group_of_[static_cast<std::size_t>(n)] = static_cast<int>(g);
}

void Simulation::heal()
{
    group_of_.clear();
    last_heal_ms_ = q_.now();
    for (auto& node : nodes_) node->request_sync_all();
}

void Simulation::schedule_write(std::int64_t t, std::uint64_t k)
{
    if (t >= cfg_.duration_ms) return;
    q_.at(t, [this, t, k] {
        auto target = honest_[static_cast<std::size_t>((k - 1) % honest_.size())];
        auto tx = TxPayload::raw("w" + std::to_string(k));
        submitted_[tx_block_data(tx)] = q_.now();
        nodes_[static_cast<std::size_t>(target)]->submit(tx, [](const SubmitResult&) {});
        schedule_write(t + cfg_.write_interval_ms, k + 1);
    });
}

std::vector<std::string> Simulation::honest_heads() const
{
    std::vector<std::string> heads;
    for (int i : honest_) heads.push_back(nodes_[static_cast<std::size_t>(i)]->store().get_latest_block_hash());
    return heads;
}

void Simulation::schedule_read(std::int64_t t)
{
    if (t >= cfg_.duration_ms) return;
    q_.at(t, [this, t] {
        ConsistencySample s;
        s.t_ms = t;
        s.heads = honest_heads();
        s.mode_hash = mode_head(s.heads);
        for (const auto& h : s.heads) s.n_inconsistent += h != s.mode_hash;
        consistency_.n_total += s.heads.size();
        consistency_.n_inconsistent += s.n_inconsistent;
        consistency_.samples.push_back(std::move(s));
        schedule_read(t + cfg_.read_interval_ms);
    });
}

void Simulation::schedule_attack(std::int64_t t, int idx, MaliciousBehavior b)
{
    if (t >= cfg_.duration_ms) return;
    q_.at(t, [this, t, idx, b] {
        attack(idx, b);
        schedule_attack(t + cfg_.write_interval_ms, idx, b);
    });
}

void Simulation::attack(int idx, MaliciousBehavior b)
{
    auto& node = *nodes_[static_cast<std::size_t>(idx)];
    auto tip = node.store().tip();
    auto ts = static_cast<std::uint64_t>(q_.now() / 1000);
    auto data = tx_block_data(TxPayload::raw("evil" + std::to_string(attack_rng_())));
    Block block;
    switch (b) {
    case MaliciousBehavior::InvalidPow: {
        // Honest hash, but it does not meet the declared difficulty.
        block = create_new_block(data, tip, cfg_.params.max_difficulty, ts);
        block.hash = block_hash(block);
        while (meets_difficulty(block.hash, block.difficulty)) {
            ++block.nonce;
            block.hash = block_hash(block);
        }
        break;
    }
    case MaliciousBehavior::BadPrevHash: {
        block = create_new_block(data, tip, node.current_bits(), ts);
        Bytes parent(32);
        for (auto& byte : parent) byte = static_cast<std::uint8_t>(attack_rng_());
        block.prev_hash = to_hex(parent);
        block = *mine_block(block);
        break;
    }
    case MaliciousBehavior::TamperedSignature:
        block = *mine_block(create_new_block(data, tip, node.current_bits(), ts));
        break;
    }
    malicious_hashes_.insert(block.hash);

    MessageEnvelope env;
    env.kind = MessageKind::NewBlock;
    env.timestamp = q_.now();
    env.payload = {{"block", block}};
    env = sign_envelope(std::move(env), node.identity());
    if (b == MaliciousBehavior::TamperedSignature) env.signature[0] = env.signature[0] == '0' ? '1' : '0';
    auto bytes = encode_envelope(env);
    for (int j = 0; j < cfg_.node_count; ++j)
        if (j != idx) send_bytes(idx, j, bytes);
}

MetricsReport Simulation::run()
{
    // Node i dials every lower index, so the mesh is complete after the handshakes.
    for (int i = 0; i < cfg_.node_count; ++i) {
        std::vector<std::string> boot;
        for (int j = 0; j < i; ++j) boot.push_back(sim_addr(j));
        nodes_[static_cast<std::size_t>(i)]->start(boot);
    }
    for (const auto& w : cfg_.partitions) {
        q_.at(w.start_ms, [this, &w] { apply_partition(w); });
        q_.at(w.end_ms, [this] { heal(); });
    }
    schedule_write(cfg_.write_interval_ms, 1);
    schedule_read(cfg_.read_interval_ms);
    for (int i : malicious_)
        schedule_attack(cfg_.write_interval_ms + cfg_.write_interval_ms / 2, i, behavior_of_[i]);

    while (!q_.empty() && q_.next_time() < cfg_.duration_ms) q_.step();
    consistency_.c = consistency_level(consistency_.n_inconsistent, consistency_.n_total);

    // End of run: reconnect everyone, one sync round, then drain.
    q_.at(cfg_.duration_ms, [this] {
        group_of_.clear();
        for (auto& node : nodes_) node->request_sync_all();
    });
    auto drain_limit = cfg_.duration_ms + 600000;
    while (!q_.empty() && q_.next_time() <= drain_limit) q_.step();

    MetricsReport r;
    r.scenario = cfg_;
    r.malicious_nodes = malicious_;

    auto heads = honest_heads();
    auto mode = mode_head(heads);
    std::uint64_t final_inc = 0;
    for (const auto& h : heads) final_inc += h != mode;
    consistency_.final_c = consistency_level(final_inc, heads.size());
    if (last_heal_ms_ >= 0) {
        std::uint64_t n = 0, inc = 0;
        for (const auto& s : consistency_.samples) {
            if (s.t_ms < last_heal_ms_ + 2 * cfg_.write_interval_ms) continue;
            n += s.heads.size();
            inc += s.n_inconsistent;
        }
        consistency_.post_heal_c = consistency_level(inc, n);
    }
    r.consistency = consistency_;

    r.heads_equal = final_inc == 0;
    r.final_head = mode;
    Chain chain;
    for (int i : honest_) {
        auto& st = nodes_[static_cast<std::size_t>(i)]->store();
        if (st.get_latest_block_hash() == mode) {
            chain = st.get_all_blocks();
            break;
        }
    }
    r.final_chain_length = chain.size();
    r.final_work = cumulative_work(chain);
    r.max_work_seen = max_work_;
    r.final_chain_valid = !verify_chain(chain, cfg_.params).has_value();
    for (const auto& b : chain) {
        r.malicious_blocks_in_chain += malicious_hashes_.count(b.hash);
        if (b.index == 0) continue;
        try {
            tx_from_json(json::parse(b.data));
            ++r.committed_tx_count;
        } catch (const std::exception&) {
        }
    }
    r.malicious_blocks_emitted = malicious_hashes_.size();
    r.throughput_tps = static_cast<double>(r.committed_tx_count) / (static_cast<double>(cfg_.duration_ms) / 1000.0);
    r.write_latency_ms = {percentile(write_latencies_, 50), percentile(write_latencies_, 95),
                          write_latencies_.empty() ? 0.0 : *std::max_element(write_latencies_.begin(), write_latencies_.end())};
    auto rtt = static_cast<double>(2 * cfg_.latency_ms);
    r.read_latency_ms = {rtt, rtt, rtt};

    for (int i : honest_) {
        const auto& c = nodes_[static_cast<std::size_t>(i)]->counters();
        r.rejected_invalid_blocks += c.rejected_total();
        r.max_reorg_depth = std::max(r.max_reorg_depth, c.max_reorg_depth);
    }
    for (const auto& [_, hashes] : heights_) r.fork_count += hashes.size() > 1;
    return r;
}

} // namespace

MetricsReport run_scenario(const ScenarioConfig& config)
{
    config.validate();
    Simulation sim(config);
    return sim.run();
}

} // namespace dadb
