#include <dadb/errors.hpp>
#include <dadb/node.hpp>

namespace dadb {

using nlohmann::json;

namespace {

// Contract state for one contract id, backed by the enclosing store transaction.
class ContractStateView : public StateView
{
public:
    ContractStateView(EffectsWriter& w, std::string id) : w_(w), id_(std::move(id)) {}
    std::optional<std::int64_t> get(const std::string& key) const override { return w_.get_state(id_, key); }
    void put(const std::string& key, std::int64_t value) override { w_.put_state(id_, key, value); }

private:
    EffectsWriter& w_;
    std::string id_;
};

json response(const std::string& what, bool ok, json body)
{
    json p = {{"what", what}, {"ok", ok}};
    p[ok ? "result" : "error"] = std::move(body);
    return p;
}

} // namespace

TxPayload TxPayload::raw(std::string data)
{
    TxPayload t;
    t.kind = Kind::Raw;
    t.data = std::move(data);
    return t;
}

TxPayload TxPayload::deploy(json source)
{
    TxPayload t;
    t.kind = Kind::Deploy;
    t.contract = std::move(source);
    return t;
}

TxPayload TxPayload::call(std::string contract_id, std::vector<std::int64_t> args)
{
    TxPayload t;
    t.kind = Kind::Call;
    t.contract_id = std::move(contract_id);
    t.args = std::move(args);
    return t;
}

json tx_to_json(const TxPayload& tx)
{
    switch (tx.kind) {
    case TxPayload::Kind::Raw: return {{"kind", "raw"}, {"data", tx.data}};
    case TxPayload::Kind::Deploy: return {{"kind", "deploy"}, {"contract", tx.contract}};
    case TxPayload::Kind::Call: return {{"kind", "call"}, {"contract_id", tx.contract_id}, {"args", tx.args}};
    }
    throw InputError("tx: unknown kind");
}

TxPayload tx_from_json(const json& j)
{
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) throw InputError("tx: missing kind");
    auto kind = j["kind"].get<std::string>();
    if (kind == "raw") {
        if (!j.contains("data") || !j["data"].is_string()) throw InputError("tx: raw needs a string data field");
        return TxPayload::raw(j["data"].get<std::string>());
    }
    if (kind == "deploy") {
        if (!j.contains("contract")) throw InputError("tx: deploy needs a contract field");
        return TxPayload::deploy(j["contract"]);
    }
    if (kind == "call") {
        if (!j.contains("contract_id") || !j["contract_id"].is_string() ||
            !is_lower_hex(j["contract_id"].get<std::string>(), 64))
            throw InputError("tx: call needs a 64-hex contract_id");
        std::vector<std::int64_t> args;
        if (j.contains("args")) {
            if (!j["args"].is_array()) throw InputError("tx: args must be an array");
            for (const auto& a : j["args"]) {
                if (!a.is_number_integer() || (a.is_number_unsigned() && a.get<std::uint64_t>() > INT64_MAX))
                    throw InputError("tx: args must be 64-bit integers");
                args.push_back(a.get<std::int64_t>());
            }
        }
        return TxPayload::call(j["contract_id"].get<std::string>(), std::move(args));
    }
    throw InputError("tx: unknown kind " + kind);
}

std::string tx_block_data(const TxPayload& tx)
{
    return canonical_json(tx_to_json(tx));
}

std::uint64_t NodeCounters::rejected_total() const
{
    std::uint64_t n = bad_envelopes;
    for (const auto& [_, c] : rejected) n += c;
    return n;
}

Node::Node(NodeIdentity identity, NodeOptions options, BlockStore& store, Transport& transport, Runtime& runtime,
           Miner& miner)
    : identity_(std::move(identity)),
      options_(std::move(options)),
      store_(store),
      transport_(transport),
      runtime_(runtime),
      miner_(miner),
      peers_(options_.listen_addr)
{
    options_.params.validate();
}

void Node::start(const std::vector<std::string>& bootstrap)
{
    if (store_.get_block_count() == 0) store_.add_block(genesis_block());
    auto count = store_.get_block_count();
    for (auto i = store_.effects_height().value_or(0) + 1; i < count; ++i)
        store_.commit_effects(store_.get_block(i), [this](const Block& b, EffectsWriter& w) { apply_effects(b, w); });
    difficulty_ = difficulty_after(store_.get_all_blocks(), options_.params);
    refresh_stats();
    for (const auto& addr : bootstrap) {
        peers_.add_peer(addr);
        dial(addr);
    }
}

void Node::refresh_stats()
{
    connected_peers_ = peers_.count(PeerState::Connected);
    bits_ = current_bits();
}

void Node::log_step(const char* name)
{
    if (step_log_) step_log_->emplace_back(name);
}

void Node::send(ConnId conn, MessageKind kind, json payload)
{
    MessageEnvelope env;
    env.kind = kind;
    env.timestamp = runtime_.now_ms();
    env.payload = std::move(payload);
    transport_.send(conn, sign_envelope(std::move(env), identity_));
}

void Node::dial(const std::string& addr)
{
    if (addr.empty() || addr == options_.listen_addr) return;
    auto conn = transport_.dial(addr);
    auto* rec = peers_.find(addr);
    if (!conn) {
        if (rec) rec->state = PeerState::Failed;
        refresh_stats();
        return;
    }
    send_hello(*conn);
    runtime_.schedule(options_.handshake_timeout_ms, [this, addr] {
        auto* r = peers_.find(addr);
        if (r && r->state != PeerState::Connected) {
            r->state = PeerState::Failed;
            refresh_stats();
        }
    });
}

void Node::send_hello(ConnId conn)
{
    hello_sent_[conn] = true;
    send(conn, MessageKind::Hello, {{"listen_addr", options_.listen_addr}, {"node_id", node_id()}});
}

void Node::on_bad_envelope(ConnId from)
{
    ++counters_.bad_envelopes;
    (void)from;
}

void Node::on_disconnect(ConnId conn)
{
    auto it = conn_addr_.find(conn);
    if (it != conn_addr_.end()) {
        if (auto* r = peers_.find(it->second); r && addr_conn_[it->second] == conn) {
            r->state = PeerState::Failed;
            addr_conn_.erase(it->second);
        }
        conn_addr_.erase(it);
    }
    hello_sent_.erase(conn);
    refresh_stats();
}

void Node::on_message(ConnId from, const MessageEnvelope& env)
{
    try {
        switch (env.kind) {
        case MessageKind::Hello: on_hello(from, env); break;
        case MessageKind::Peers: on_peers(env.payload); break;
        case MessageKind::NewBlock: handle_new_block(from, env.payload.at("block").get<Block>()); break;
        case MessageKind::GetBlocks: {
            json blocks = json::array();
            for (const auto& b : store_.get_all_blocks()) blocks.push_back(b);
            try {
                send(from, MessageKind::Blocks, {{"blocks", std::move(blocks)}});
            } catch (const ProtocolError&) {
                // Chain too large for one frame; the requester keeps its chain.
            }
            break;
        }
        case MessageKind::Blocks: {
            Chain cand;
            for (const auto& b : env.payload.at("blocks")) cand.push_back(b.get<Block>());
            handle_blocks(cand);
            break;
        }
        case MessageKind::Tx: on_tx(from, env); break;
        case MessageKind::Query: on_query(from, env); break;
        case MessageKind::Ping: send(from, MessageKind::Pong, json::object()); break;
        case MessageKind::Response:
        case MessageKind::Pong: break;
        }
    } catch (const json::exception&) {
        on_bad_envelope(from);
    } catch (const InputError&) {
        on_bad_envelope(from);
    }
}

void Node::on_hello(ConnId from, const MessageEnvelope& env)
{
    auto addr = env.payload.at("listen_addr").get<std::string>();
    auto id = env.payload.at("node_id").get<std::string>();
    if (id != env.sender || addr == options_.listen_addr || addr.empty()) {
        on_bad_envelope(from);
        return;
    }
    peers_.add_peer(addr);
    auto* rec = peers_.find(addr);
    rec->node_id = id;
    rec->state = PeerState::Connected;
    rec->last_seen_ms = runtime_.now_ms();
    conn_addr_[from] = addr;
    addr_conn_[addr] = from;
    if (!hello_sent_[from]) send_hello(from);

    std::vector<std::string> known;
    for (const auto& a : peers_.addrs())
        if (a != addr) known.push_back(a);
    send(from, MessageKind::Peers, {{"addrs", known}});
    refresh_stats();
    request_sync(from);
}

void Node::on_peers(const json& payload)
{
    for (const auto& a : payload.at("addrs")) peers_.add_peer(a.get<std::string>());
    refresh_stats();
}

void Node::on_tx(ConnId from, const MessageEnvelope& env)
{
    TxPayload tx;
    try {
        tx = tx_from_json(env.payload.at("tx"));
    } catch (const InputError& e) {
        send(from, MessageKind::Response, response("tx", false, e.what()));
        return;
    }
    submit(tx, [this, from](const SubmitResult& r) {
        if (r.ok)
            send(from, MessageKind::Response,
                 response("tx", true, {{"block_index", r.block_index}, {"block_hash", r.block_hash}}));
        else
            send(from, MessageKind::Response, response("tx", false, r.error));
    });
}

void Node::on_query(ConnId from, const MessageEnvelope& env)
{
    auto what = env.payload.value("what", std::string());
    auto params = env.payload.value("params", json::object());
    send(from, MessageKind::Response, answer_query(what, params));
}

json Node::answer_query(const std::string& what, const json& params) const
{
    try {
        if (what == "chain") {
            json blocks = json::array();
            for (const auto& b : store_.get_all_blocks()) blocks.push_back(b);
            return response(what, true, {{"blocks", std::move(blocks)}});
        }
        if (what == "block") {
            if (!params.contains("index") || !params["index"].is_number_integer() || params["index"].get<std::int64_t>() < 0)
                return response(what, false, "block query needs a non-negative index");
            return response(what, true, store_.get_block(params["index"].get<std::uint64_t>()));
        }
        if (what == "state") {
            auto id = params.value("contract_id", std::string());
            auto key = params.value("key", std::string());
            auto v = store_.get_state(id, key);
            if (!v) return response(what, false, "not found");
            return response(what, true, {{"contract_id", id}, {"key", key}, {"value", *v}});
        }
        if (what == "stats") {
            auto c = cache_.counters();
            return response(what, true,
                            {{"count", store_.get_block_count()},
                             {"tip", store_.get_latest_block_hash()},
                             {"peers", connected_peers_.load()},
                             {"difficulty", bits_.load()},
                             {"cache", {{"hits", c.hits}, {"misses", c.misses}, {"compiles", c.compiles}}}});
        }
    } catch (const NotFoundError&) {
        return response(what, false, "not found");
    }
    return response(what, false, "unknown query: " + what);
}

void Node::apply_effects(const Block& block, EffectsWriter& w)
{
    json j = json::parse(block.data, nullptr, false);
    TxPayload tx;
    try {
        if (j.is_discarded()) throw InputError("not a tx");
        tx = tx_from_json(j);
    } catch (const InputError&) {
        w.record_execution("raw");
        return;
    }
    switch (tx.kind) {
    case TxPayload::Kind::Raw: w.record_execution("ok"); return;
    case TxPayload::Kind::Deploy:
        try {
            auto c = compile(tx.contract);
            w.put_contract(c.contract_id, c.source);
            w.record_execution("deployed " + c.contract_id);
        } catch (const ContractError& e) {
            w.record_execution(std::string("fault ") + std::string(to_string(e.reason)));
        }
        return;
    case TxPayload::Kind::Call: {
        std::shared_ptr<const CompiledContract> c;
        try {
            c = cache_.lookup(tx.contract_id, [&w](const std::string& id) { return w.get_contract(id); });
        } catch (const NotFoundError&) {
            w.record_execution("fault NotFound");
            return;
        }
        ContractStateView view(w, tx.contract_id);
        auto fault = execute(*c, tx.args, view);
        w.record_execution(fault ? std::string("fault ") + std::string(to_string(*fault)) : "ok");
        return;
    }
    }
}

void Node::submit(const TxPayload& tx, SubmitDone done)
{
    SubmitResult fail;
    std::string data;
    try {
        data = tx_block_data(tx);
        if (contains_separator(data)) throw InputError("tx data contains the 0x1F separator");
        if (tx.kind == TxPayload::Kind::Deploy) compile(tx.contract);
        if (tx.kind == TxPayload::Kind::Call && !store_.get_contract(tx.contract_id)) {
            bool pending = false;
            for (const auto& j : queue_)
                pending |= j.tx.kind == TxPayload::Kind::Deploy && contract_id_of(j.tx.contract) == tx.contract_id;
            if (!pending) throw InputError("unknown contract " + tx.contract_id);
        }
    } catch (const ContractError& e) {
        fail.error = std::string("contract rejected: ") + e.what();
        done(fail);
        return;
    } catch (const InputError& e) {
        fail.error = e.what();
        done(fail);
        return;
    }
    if (!options_.mining) {
        fail.error = "mining disabled on this node";
        done(fail);
        return;
    }
    queue_.push_back(Job{tx, std::move(data), std::move(done), 0});
    pump();
}

void Node::pump()
{
    if (mining_ || queue_.empty()) return;
    auto head = store_.tip();
    auto ts = static_cast<std::uint64_t>(std::max<std::int64_t>(runtime_.now_ms(), 0) / 1000);
    auto block = create_new_block(queue_.front().data, head, current_bits(), ts);
    log_step("create");
    mining_ = true;
    miner_.start(std::move(block), [this](std::optional<Block> b) { on_mined(std::move(b)); });
}

void Node::on_mined(std::optional<Block> block)
{
    mining_ = false;
    if (queue_.empty()) return;
    auto& job = queue_.front();
    std::optional<VerifyError> err;
    if (block) {
        log_step("mine");
        err = verify_block(*block, store_.tip(), options_.params);
        log_step("verify");
    }
    if (!block || err) {
        if (++job.cancellations > 1) {
            SubmitResult r;
            r.error = "mining lost to competing blocks twice; resubmit";
            r.retriable = true;
            auto done = std::move(job.done);
            queue_.pop_front();
            done(r);
        }
        pump();
        return;
    }
    append_block(*block, std::nullopt);
    SubmitResult r;
    r.ok = true;
    r.block_index = block->index;
    r.block_hash = block->hash;
    auto done = std::move(job.done);
    queue_.pop_front();
    done(r);
    pump();
}

void Node::append_block(const Block& block, std::optional<ConnId> from)
{
    store_.add_block(block);
    log_step("add_block");
    seen_.insert(block.hash);
    broadcast_block(block, from);
    log_step("broadcast");
    store_.commit_effects(block, [this](const Block& b, EffectsWriter& w) {
        log_step("execute");
        apply_effects(b, w);
    });
    log_step("persist");
    auto prev = store_.get_block(block.index - 1);
    difficulty_.t_actual_last_ms =
        block.timestamp > prev.timestamp ? static_cast<std::int64_t>(block.timestamp - prev.timestamp) * 1000 : 0;
    difficulty_ = adjust_difficulty(difficulty_, options_.params);
    refresh_stats();
    if (observer_) observer_->block_appended(block);
}

std::size_t Node::broadcast_block(const Block& block, std::optional<ConnId> except)
{
    if (!broadcasted_.insert(block.hash)) return 0;
    MessageEnvelope env;
    env.kind = MessageKind::NewBlock;
    env.timestamp = runtime_.now_ms();
    env.payload = {{"block", block}};
    auto signed_env = sign_envelope(std::move(env), identity_);
    std::size_t sent = 0;
    for (auto [addr, conn] : std::map<std::string, ConnId>(addr_conn_)) {
        if (except && conn == *except) continue;
        auto* rec = peers_.find(addr);
        if (!rec || rec->state != PeerState::Connected) continue;
        if (transport_.send(conn, signed_env)) {
            ++sent;
        } else {
            rec->state = PeerState::Failed;
        }
    }
    refresh_stats();
    return sent;
}

void Node::reject(VerifyError e)
{
    ++counters_.rejected[std::string(to_string(e))];
    if (observer_) observer_->block_rejected(e);
}

BlockOutcome Node::handle_new_block(ConnId from, const Block& block)
{
    if (seen_.contains(block.hash)) return BlockOutcome::Ignored;
    auto tip = store_.tip();
    auto err = verify_block(block, tip, options_.params);
    if (!err) {
        if (mining_) miner_.cancel();
        append_block(block, from);
        return BlockOutcome::Appended;
    }
    if (*err == VerifyError::WrongIndex && block.index > tip.index + 1) {
        request_sync(from);
        return BlockOutcome::SyncTriggered;
    }
    if (*err == VerifyError::WrongIndex) return BlockOutcome::Ignored;
    reject(*err);
    if (block_hash(block) == block.hash) seen_.insert(block.hash);
    if (*err == VerifyError::PrevHashMismatch) {
        request_sync(from);
        return BlockOutcome::SyncTriggered;
    }
    return BlockOutcome::Ignored;
}

void Node::request_sync(ConnId conn)
{
    ++counters_.syncs_requested;
    send(conn, MessageKind::GetBlocks, {{"from_index", 0}});
}

void Node::request_sync_all()
{
    for (auto [addr, conn] : std::map<std::string, ConnId>(addr_conn_)) {
        auto* rec = peers_.find(addr);
        if (rec && rec->state == PeerState::Connected) request_sync(conn);
    }
}

bool Node::handle_blocks(const Chain& candidate)
{
    auto local = store_.get_all_blocks();
    auto choice = choose_chain(local, candidate, options_.params);
    if (choice.outcome == ChainChoice::Outcome::Rejected) {
        if (choice.fault) reject(choice.fault->error);
        return false;
    }
    if (choice.outcome == ChainChoice::Outcome::KeepLocal) return false;

    std::size_t common = 0;
    while (common < local.size() && common < candidate.size() && local[common] == candidate[common]) ++common;
    if (mining_) miner_.cancel();
    store_.replace_chain(candidate, [this](const Block& b, EffectsWriter& w) { apply_effects(b, w); });
    difficulty_ = difficulty_after(candidate, options_.params);
    auto depth = static_cast<std::uint64_t>(local.size() - common);
    if (depth > 0) {
        ++counters_.reorgs;
        counters_.max_reorg_depth = std::max(counters_.max_reorg_depth, depth);
    }
    for (std::size_t i = common; i < candidate.size(); ++i) seen_.insert(candidate[i].hash);
    refresh_stats();
    if (observer_) {
        observer_->chain_replaced(depth, std::span<const Block>(candidate).subspan(common));
        for (std::size_t i = common; i < candidate.size(); ++i) observer_->block_appended(candidate[i]);
    }
    return true;
}

} // namespace dadb
