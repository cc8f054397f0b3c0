#include <dadb/errors.hpp>
#include <dadb/runtime.hpp>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <unistd.h>

#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>

namespace dadb {

using nlohmann::json;

std::int64_t EventLoop::now_ms() const
{
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void EventLoop::schedule(std::int64_t delay_ms, std::function<void()> fn)
{
    {
        std::lock_guard lock(mutex_);
        timers_.emplace(Clock::now() + std::chrono::milliseconds(delay_ms), std::move(fn));
    }
    cv_.notify_one();
}

void EventLoop::post(std::function<void()> fn)
{
    {
        std::lock_guard lock(mutex_);
        tasks_.push_back(std::move(fn));
    }
    cv_.notify_one();
}

void EventLoop::stop()
{
    {
        std::lock_guard lock(mutex_);
        stopped_ = true;
    }
    cv_.notify_all();
}

void EventLoop::run(const std::atomic<bool>* interrupted)
{
    std::unique_lock lock(mutex_);
    while (!stopped_ && !(interrupted && *interrupted)) {
        auto now = Clock::now();
        while (!timers_.empty() && timers_.begin()->first <= now) {
            tasks_.push_back(std::move(timers_.begin()->second));
            timers_.erase(timers_.begin());
        }
        if (tasks_.empty()) {
            auto wake = now + std::chrono::milliseconds(100);
            if (!timers_.empty()) wake = std::min(wake, timers_.begin()->first);
            cv_.wait_until(lock, wake);
            continue;
        }
        auto task = std::move(tasks_.front());
        tasks_.pop_front();
        lock.unlock();
        task();
        lock.lock();
    }
}

ThreadMiner::~ThreadMiner()
{
    cancel();
    if (worker_.joinable()) worker_.join();
}

void ThreadMiner::start(Block candidate, Done done)
{
    if (worker_.joinable()) worker_.join();
    cancel_ = std::make_shared<std::atomic<bool>>(false);
    worker_ = std::thread([this, flag = cancel_, candidate = std::move(candidate), done = std::move(done)]() mutable {
        std::optional<Block> mined;
        try {
            mined = mine_block(std::move(candidate), flag.get());
        } catch (const std::exception&) {
        }
        loop_.post([done = std::move(done), mined = std::move(mined)] { done(mined); });
    });
}

void ThreadMiner::cancel()
{
    if (cancel_) *cancel_ = true;
}

std::pair<std::string, std::uint16_t> split_addr(const std::string& addr)
{
    auto colon = addr.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size())
        throw InputError("address must be host:port: " + addr);
    auto port_text = addr.substr(colon + 1);
    unsigned long port = 0;
    try {
        std::size_t used = 0;
        port = std::stoul(port_text, &used);
        if (used != port_text.size()) throw InputError("bad port");
    } catch (const std::exception&) {
        throw InputError("bad port in address: " + addr);
    }
    if (port > 65535) throw InputError("port out of range: " + addr);
    return {addr.substr(0, colon), static_cast<std::uint16_t>(port)};
}

namespace {

int connect_to(const std::string& addr, std::chrono::milliseconds timeout)
{
    auto [host, port] = split_addr(addr);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) return -1;
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        timeval tv{static_cast<time_t>(timeout.count() / 1000), static_cast<suseconds_t>(timeout.count() % 1000 * 1000)};
        setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd >= 0) {
        int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    return fd;
}

bool write_all(int fd, const Bytes& data)
{
    std::size_t off = 0;
    while (off < data.size()) {
        auto n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        off += static_cast<std::size_t>(n);
    }
    return true;
}

} // namespace

TcpTransport::~TcpTransport()
{
    shutdown();
}

void TcpTransport::listen(const std::string& addr)
{
    auto [host, port] = split_addr(addr);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0)
        throw NetworkError("cannot resolve listen address " + addr);
    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    int one = 1;
    if (fd >= 0) setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    bool ok = fd >= 0 && ::bind(fd, res->ai_addr, res->ai_addrlen) == 0 && ::listen(fd, 64) == 0;
    freeaddrinfo(res);
    if (!ok) {
        auto err = std::string(std::strerror(errno));
        if (fd >= 0) ::close(fd);
        throw NetworkError("cannot listen on " + addr + ": " + err);
    }
    listen_fd_ = fd;
    acceptor_ = std::thread([this] {
        while (!stopping_) {
            pollfd p{listen_fd_, POLLIN, 0};
            if (::poll(&p, 1, 100) <= 0) continue;
            int c = ::accept(listen_fd_, nullptr, nullptr);
            if (c < 0) continue;
            int yes = 1;
            setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &yes, sizeof yes);
            adopt(c);
        }
    });
}

std::uint16_t TcpTransport::local_port() const
{
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    if (listen_fd_ < 0 || getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&ss), &len) != 0) return 0;
    if (ss.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
    return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
}

void TcpTransport::shutdown()
{
    if (stopping_.exchange(true)) return;
    if (acceptor_.joinable()) acceptor_.join();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    std::map<ConnId, std::shared_ptr<Conn>> conns;
    {
        std::lock_guard lock(mutex_);
        conns.swap(conns_);
    }
    for (auto& [_, c] : conns) ::shutdown(c->fd, SHUT_RDWR);
    for (auto& [_, c] : conns) {
        if (c->reader.joinable()) c->reader.join();
        ::close(c->fd);
    }
}

ConnId TcpTransport::adopt(int fd)
{
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    std::lock_guard lock(mutex_);
    auto id = next_id_++;
    conns_[id] = conn;
    conn->reader = std::thread([this, id, conn] { read_loop(id, conn); });
    return id;
}

std::shared_ptr<TcpTransport::Conn> TcpTransport::find(ConnId id)
{
    std::lock_guard lock(mutex_);
    auto it = conns_.find(id);
    return it == conns_.end() ? nullptr : it->second;
}

void TcpTransport::read_loop(ConnId id, std::shared_ptr<Conn> conn)
{
    FrameDecoder decoder;
    std::vector<std::uint8_t> buf(64 * 1024);
    bool bad = false;
    while (!stopping_ && !bad) {
        auto n = ::recv(conn->fd, buf.data(), buf.size(), 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        try {
            for (auto& msg : decoder.feed(std::span(buf.data(), static_cast<std::size_t>(n)))) {
                handlers_.message(id, decode_verified_envelope(std::string(msg.begin(), msg.end())));
            }
        } catch (const ProtocolError&) {
            handlers_.bad_envelope(id);
            bad = true;
        }
    }
    ::shutdown(conn->fd, SHUT_RDWR);
    if (!stopping_) handlers_.closed(id);
}

std::optional<ConnId> TcpTransport::dial(const std::string& addr)
{
    int fd = -1;
    try {
        fd = connect_to(addr, std::chrono::seconds(5));
    } catch (const InputError&) {
        return std::nullopt;
    }
    if (fd < 0) return std::nullopt;
    return adopt(fd);
}

bool TcpTransport::send(ConnId id, const MessageEnvelope& env)
{
    auto conn = find(id);
    if (!conn) return false;
    auto bytes = frame(encode_envelope(env));
    std::lock_guard lock(conn->write_mutex);
    return write_all(conn->fd, bytes);
}

void TcpTransport::close(ConnId id)
{
    if (auto conn = find(id)) ::shutdown(conn->fd, SHUT_RDWR);
}

NodeIdentity load_or_create_identity(const std::string& path)
{
    std::ifstream in(path);
    if (in) {
        std::string hex;
        in >> hex;
        auto bytes = from_hex(hex);
        if (!bytes || bytes->size() != 32 || !is_lower_hex(hex, 64))
            throw InputError("key file " + path + " does not hold a 64-hex-char seed");
        NodeIdentity::Seed seed{};
        std::copy(bytes->begin(), bytes->end(), seed.begin());
        return NodeIdentity::from_seed(seed);
    }
    auto id = NodeIdentity::generate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InputError("cannot write key file " + path);
    out << to_hex(id.seed()) << "\n";
    out.close();
    ::chmod(path.c_str(), 0600);
    return id;
}

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int)
{
    g_interrupted = true;
}

} // namespace

int run_node(const NodeConfig& config)
{
    NodeIdentity identity = [&] {
        try {
            config.params.validate();
            split_addr(config.listen);
            for (const auto& p : config.peers) split_addr(p);
            return load_or_create_identity(config.key_path);
        } catch (const InputError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            std::exit(kExitConfig);
        }
    }();

    std::unique_ptr<BlockStore> store;
    try {
        store = std::make_unique<BlockStore>(config.db_path);
    } catch (const StoreError& e) {
        std::cerr << "store error: " << e.what() << "\n";
        return kExitStore;
    }

    EventLoop loop;
    ThreadMiner miner(loop);
    Node* node_ptr = nullptr;
    TcpTransport transport({
        [&](ConnId c, MessageEnvelope env) {
            if (env.kind == MessageKind::Query) {
                // Reads go straight to the store so they never wait on the command loop.
                auto what = env.payload.value("what", std::string());
                MessageEnvelope out;
                out.kind = MessageKind::Response;
                out.timestamp = loop.now_ms();
                out.payload = node_ptr->answer_query(what, env.payload.value("params", json::object()));
                transport.send(c, sign_envelope(std::move(out), node_ptr->identity()));
                return;
            }
            loop.post([&, c, env = std::move(env)] { node_ptr->on_message(c, env); });
        },
        [&](ConnId c) { loop.post([&, c] { node_ptr->on_bad_envelope(c); }); },
        [&](ConnId c) { loop.post([&, c] { node_ptr->on_disconnect(c); }); },
    });

    NodeOptions opts;
    opts.listen_addr = config.listen;
    opts.params = config.params;
    opts.mining = config.mining;
    Node node(identity, opts, *store, transport, loop, miner);
    node_ptr = &node;

    try {
        transport.listen(config.listen);
    } catch (const NetworkError& e) {
        std::cerr << "network error: " << e.what() << "\n";
        return kExitNetwork;
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    int rc = kExitOk;
    loop.post([&] {
        try {
            node.start(config.peers);
            std::cout << "node " << node.node_id() << " listening on " << config.listen << " tip "
                      << store->get_latest_block_hash() << std::endl;
        } catch (const StoreError& e) {
            std::cerr << "store error: " << e.what() << "\n";
            rc = kExitStore;
            loop.stop();
        }
    });
    try {
        loop.run(&g_interrupted);
    } catch (const StoreError& e) {
        std::cerr << "store error: " << e.what() << "\n";
        rc = kExitStore;
    }
    miner.cancel();
    transport.shutdown();
    return rc;
}

MessageEnvelope client_request(const std::string& node_addr, MessageKind kind, const json& payload,
                               std::chrono::milliseconds timeout)
{
    int fd = connect_to(node_addr, std::chrono::seconds(5));
    if (fd < 0) throw NetworkError("cannot connect to " + node_addr);
    auto identity = NodeIdentity::generate();
    MessageEnvelope req;
    req.kind = kind;
    req.timestamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count();
    req.payload = payload;
    if (!write_all(fd, frame(encode_envelope(sign_envelope(req, identity))))) {
        ::close(fd);
        throw NetworkError("send to " + node_addr + " failed");
    }
    FrameDecoder decoder;
    std::vector<std::uint8_t> buf(64 * 1024);
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) break;
        pollfd p{fd, POLLIN, 0};
        if (::poll(&p, 1, static_cast<int>(std::min<std::int64_t>(left.count(), 1000))) <= 0) continue;
        auto n = ::recv(fd, buf.data(), buf.size(), 0);
        if (n <= 0) break;
        try {
            for (auto& msg : decoder.feed(std::span(buf.data(), static_cast<std::size_t>(n)))) {
                auto env = decode_verified_envelope(std::string(msg.begin(), msg.end()));
                if (env.kind == MessageKind::Response) {
                    ::close(fd);
                    return env;
                }
            }
        } catch (const ProtocolError& e) {
            ::close(fd);
            throw NetworkError(std::string("bad response: ") + e.what());
        }
    }
    ::close(fd);
    throw NetworkError("no response from " + node_addr);
}

} // namespace dadb
