#pragma once

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dadb {

// Contract sources are JSON arrays of statements:
//   stmt = ["set"|"add"|"sub", key, expr] | ["if", cond, [stmt...], [stmt...]]
//   expr = integer | ["get", key] | ["arg", i] | ["add"|"sub"|"mul", expr, expr]
//   cond = ["eq"|"lt", expr, expr]

inline constexpr int kMaxContractDepth = 32;
inline constexpr std::size_t kMaxContractStatements = 1024;
inline constexpr std::uint64_t kContractStepBudget = 100000;

enum class ContractFault { Overflow, DepthExceeded, StepLimit, BadArgIndex, MalformedSource };

std::string_view to_string(ContractFault f);

/// Compile-time rejection. `position` is a JSON pointer into the source.
struct ContractError : std::runtime_error {
    ContractError(ContractFault reason, std::string position, const std::string& what);
    ContractFault reason;
    std::string position;
};

enum class OpCode : std::uint8_t {
    Const,
    Get,
    Arg,
    Add,
    Sub,
    Mul,
    Eq,
    Lt,
    Set,
    AddTo,
    SubFrom,
    BranchIfFalse, // the `if` statement itself; counts one step
    Jump,          // free
};

struct Instruction {
    OpCode op;
    std::int64_t operand; // constant, key slot, arg index or jump target
};

struct CompiledContract {
    std::string contract_id; // SHA-256 of canonical_json(source)
    std::size_t arg_count = 0;
    std::vector<Instruction> code;
    std::vector<std::string> keys;
    nlohmann::json source;
};

/// Throws ContractError (MalformedSource or DepthExceeded).
CompiledContract compile(const nlohmann::json& source);

std::string contract_id_of(const nlohmann::json& source);

class StateView
{
public:
    virtual ~StateView() = default;
    virtual std::optional<std::int64_t> get(const std::string& key) const = 0;
    virtual void put(const std::string& key, std::int64_t value) = 0;
};

/// Plain in-memory state, used by tests and as a scratch view.
class MapStateView : public StateView
{
public:
    std::optional<std::int64_t> get(const std::string& key) const override;
    void put(const std::string& key, std::int64_t value) override { values_[key] = value; }
    const std::map<std::string, std::int64_t>& values() const { return values_; }

private:
    std::map<std::string, std::int64_t> values_;
};

struct ExecStats {
    std::uint64_t steps = 0;
};

/**
 * Runs the contract against `state`. Writes are buffered and applied only if
 * every statement succeeds, so a fault leaves `state` untouched. Absent keys
 * read as 0; all arithmetic is checked 64-bit signed.
 */
std::optional<ContractFault> execute(const CompiledContract& contract, std::span<const std::int64_t> args,
                                     StateView& state, ExecStats* stats = nullptr);

using SourceProvider = std::function<std::optional<nlohmann::json>(const std::string& contract_id)>;

class ContractCache
{
public:
    struct Counters {
        std::uint64_t hits = 0;
        std::uint64_t misses = 0;
        std::uint64_t compiles = 0;
    };

    /// Hit returns the cached form; miss compiles the provider's source. Throws NotFoundError if unavailable.
    std::shared_ptr<const CompiledContract> lookup(const std::string& contract_id, const SourceProvider& provider);

    void clear();
    Counters counters() const;
    std::size_t size() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<const CompiledContract>> entries_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
    std::atomic<std::uint64_t> compiles_{0};
};

} // namespace dadb
