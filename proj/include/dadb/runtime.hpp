#pragma once

#include <dadb/node.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dadb {

/// Single-threaded command loop. post and schedule may be called from any thread.
class EventLoop : public Runtime
{
public:
    std::int64_t now_ms() const override;
    void schedule(std::int64_t delay_ms, std::function<void()> fn) override;
    void post(std::function<void()> fn);

    /// Runs tasks until stop() or until `interrupted` (if given) becomes true.
    void run(const std::atomic<bool>* interrupted = nullptr);
    void stop();

private:
    using Clock = std::chrono::steady_clock;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<std::function<void()>> tasks_;
    std::multimap<Clock::time_point, std::function<void()>> timers_;
    bool stopped_ = false;
};

/// Mines on a background thread and reports back through the loop.
class ThreadMiner : public Miner
{
public:
    explicit ThreadMiner(EventLoop& loop) : loop_(loop) {}
    ~ThreadMiner() override;
    void start(Block candidate, Done done) override;
    void cancel() override;

private:
    EventLoop& loop_;
    std::thread worker_;
    std::shared_ptr<std::atomic<bool>> cancel_;
};

/// Splits "host:port"; throws InputError on a malformed address.
std::pair<std::string, std::uint16_t> split_addr(const std::string& addr);

/**
 * Length-prefixed TCP transport. One reader thread per connection decodes and
 * verifies envelopes; anything that fails verification drops the connection.
 */
class TcpTransport : public Transport
{
public:
    struct Handlers {
        std::function<void(ConnId, MessageEnvelope)> message;
        std::function<void(ConnId)> bad_envelope;
        std::function<void(ConnId)> closed;
    };

    explicit TcpTransport(Handlers handlers) : handlers_(std::move(handlers)) {}
    ~TcpTransport() override;

    /// Binds and starts accepting. Throws NetworkError on failure.
    void listen(const std::string& addr);
    /// Bound port after listen(); useful when listening on port 0.
    std::uint16_t local_port() const;
    void shutdown();

    std::optional<ConnId> dial(const std::string& addr) override;
    bool send(ConnId conn, const MessageEnvelope& env) override;
    void close(ConnId conn) override;

private:
    struct Conn {
        int fd = -1;
        std::mutex write_mutex;
        std::thread reader;
    };

    ConnId adopt(int fd);
    void read_loop(ConnId id, std::shared_ptr<Conn> conn);
    std::shared_ptr<Conn> find(ConnId id);

    Handlers handlers_;
    int listen_fd_ = -1;
    std::thread acceptor_;
    std::atomic<bool> stopping_{false};
    std::mutex mutex_;
    std::map<ConnId, std::shared_ptr<Conn>> conns_;
    ConnId next_id_ = 1;
};

struct NodeConfig {
    std::string key_path;
    std::string listen;
    std::vector<std::string> peers;
    std::string db_path;
    ChainParams params;
    bool mining = true;
};

/// Loads the identity seed (64 hex chars) or generates and writes a new one.
NodeIdentity load_or_create_identity(const std::string& path);

enum ExitCode { kExitOk = 0, kExitFailed = 1, kExitConfig = 2, kExitNetwork = 3, kExitStore = 4 };

/// Runs a node until SIGINT/SIGTERM. Returns an ExitCode.
int run_node(const NodeConfig& config);

/// Sends one signed request and waits for the RESPONSE. Throws NetworkError.
MessageEnvelope client_request(const std::string& node_addr, MessageKind kind, const nlohmann::json& payload,
                               std::chrono::milliseconds timeout = std::chrono::seconds(120));

} // namespace dadb
