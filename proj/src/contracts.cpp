#include <dadb/chain.hpp>
#include <dadb/contracts.hpp>
#include <dadb/errors.hpp>
#include <dadb/wire.hpp>

#include <limits>
#include <mutex>

namespace dadb {

std::string_view to_string(ContractFault f)
{
    switch (f) {
    case ContractFault::Overflow: return "Overflow";
    case ContractFault::DepthExceeded: return "DepthExceeded";
    case ContractFault::StepLimit: return "StepLimit";
    case ContractFault::BadArgIndex: return "BadArgIndex";
    case ContractFault::MalformedSource: return "MalformedSource";
    }
    return "Unknown";
}

ContractError::ContractError(ContractFault r, std::string pos, const std::string& what)
    : std::runtime_error(std::string(to_string(r)) + " at " + (pos.empty() ? "/" : pos) + ": " + what),
      reason(r),
      position(std::move(pos))
{
}

namespace {

class Compiler
{
public:
    CompiledContract run(const nlohmann::json& source)
    {
        if (!source.is_array()) fail("", "contract source must be an array of statements");
        statements("", source, 1);
        CompiledContract out;
        out.arg_count = arg_count_;
        out.code = std::move(code_);
        out.keys = std::move(keys_);
        out.source = source;
        try {
            out.contract_id = contract_id_of(source);
        } catch (const InputError& e) {
            fail("", e.what());
        }
        return out;
    }

private:
    [[noreturn]] static void fail(const std::string& pos, const std::string& what)
    {
        throw ContractError(ContractFault::MalformedSource, pos, what);
    }

    static void check_depth(const std::string& pos, int depth)
    {
        if (depth > kMaxContractDepth)
            throw ContractError(ContractFault::DepthExceeded, pos, "nesting deeper than 32");
    }

    static std::string child(const std::string& pos, std::size_t i) { return pos + "/" + std::to_string(i); }

    std::int64_t key_slot(const std::string& pos, const nlohmann::json& key)
    {
        if (!key.is_string()) fail(pos, "key must be a string");
        const auto& k = key.get_ref<const std::string&>();
        if (contains_separator(k)) fail(pos, "key contains 0x1F");
        for (std::size_t i = 0; i < keys_.size(); ++i)
            if (keys_[i] == k) return static_cast<std::int64_t>(i);
        keys_.push_back(k);
        return static_cast<std::int64_t>(keys_.size() - 1);
    }

    void emit(OpCode op, std::int64_t operand = 0) { code_.push_back({op, operand}); }

    void statements(const std::string& pos, const nlohmann::json& list, int depth)
    {
        if (!list.is_array()) fail(pos, "statement list must be an array");
        for (std::size_t i = 0; i < list.size(); ++i) statement(child(pos, i), list[i], depth);
    }

    void statement(const std::string& pos, const nlohmann::json& s, int depth)
    {
        check_depth(pos, depth);
        if (++statement_count_ > kMaxContractStatements) fail(pos, "more than 1024 statements");
        if (!s.is_array() || s.empty() || !s[0].is_string()) fail(pos, "statement must be [op, ...]");
        const auto& op = s[0].get_ref<const std::string&>();
        if (op == "set" || op == "add" || op == "sub") {
            if (s.size() != 3) fail(pos, op + " takes a key and an expression");
            auto slot = key_slot(child(pos, 1), s[1]);
            expression(child(pos, 2), s[2], depth + 1);
            emit(op == "set" ? OpCode::Set : op == "add" ? OpCode::AddTo : OpCode::SubFrom, slot);
        } else if (op == "if") {
            if (s.size() != 4) fail(pos, "if takes a condition and two statement lists");
            condition(child(pos, 1), s[1], depth + 1);
            auto branch_at = code_.size();
            emit(OpCode::BranchIfFalse);
            statements(child(pos, 2), s[2], depth + 1);
            auto jump_at = code_.size();
            emit(OpCode::Jump);
            code_[branch_at].operand = static_cast<std::int64_t>(code_.size());
            statements(child(pos, 3), s[3], depth + 1);
            code_[jump_at].operand = static_cast<std::int64_t>(code_.size());
        } else {
            fail(pos, "unknown statement '" + op + "'");
        }
    }

    void condition(const std::string& pos, const nlohmann::json& c, int depth)
    {
        check_depth(pos, depth);
        if (!c.is_array() || c.size() != 3 || !c[0].is_string()) fail(pos, "condition must be [eq|lt, expr, expr]");
        const auto& op = c[0].get_ref<const std::string&>();
        if (op != "eq" && op != "lt") fail(pos, "unknown condition '" + op + "'");
        expression(child(pos, 1), c[1], depth + 1);
        expression(child(pos, 2), c[2], depth + 1);
        emit(op == "eq" ? OpCode::Eq : OpCode::Lt);
    }

    void expression(const std::string& pos, const nlohmann::json& e, int depth)
    {
        check_depth(pos, depth);
        if (e.is_number_integer()) {
            if (e.is_number_unsigned() && e.get<std::uint64_t>() > std::numeric_limits<std::int64_t>::max())
                fail(pos, "integer literal outside the signed 64-bit range");
            emit(OpCode::Const, e.get<std::int64_t>());
            return;
        }
        if (!e.is_array() || e.empty() || !e[0].is_string()) fail(pos, "expression must be an integer or [op, ...]");
        const auto& op = e[0].get_ref<const std::string&>();
        if (op == "get") {
            if (e.size() != 2) fail(pos, "get takes one key");
            emit(OpCode::Get, key_slot(child(pos, 1), e[1]));
        } else if (op == "arg") {
            if (e.size() != 2 || !e[1].is_number_integer() || e[1].get<std::int64_t>() < 0 ||
                e[1].get<std::int64_t>() >= static_cast<std::int64_t>(kContractStepBudget))
                fail(pos, "arg takes a non-negative integer index");
            auto i = e[1].get<std::int64_t>();
            arg_count_ = std::max(arg_count_, static_cast<std::size_t>(i) + 1);
            emit(OpCode::Arg, i);
        } else if (op == "add" || op == "sub" || op == "mul") {
            if (e.size() != 3) fail(pos, op + " takes two expressions");
            expression(child(pos, 1), e[1], depth + 1);
            expression(child(pos, 2), e[2], depth + 1);
            emit(op == "add" ? OpCode::Add : op == "sub" ? OpCode::Sub : OpCode::Mul);
        } else {
            fail(pos, "unknown expression '" + op + "'");
        }
    }

    std::vector<Instruction> code_;
    std::vector<std::string> keys_;
    std::size_t arg_count_ = 0;
    std::size_t statement_count_ = 0;
};

// Reads fall through the pending writes to the underlying view.
class Overlay
{
public:
    explicit Overlay(StateView& base) : base_(base) {}

    std::int64_t get(const std::string& key) const
    {
        if (auto it = pending_.find(key); it != pending_.end()) return it->second;
        return base_.get(key).value_or(0);
    }
    void put(const std::string& key, std::int64_t v) { pending_[key] = v; }
    void commit()
    {
        for (const auto& [k, v] : pending_) base_.put(k, v);
    }

private:
    StateView& base_;
    std::map<std::string, std::int64_t> pending_;
};

} // namespace

std::string contract_id_of(const nlohmann::json& source)
{
    return sha256_hex(canonical_json(source));
}

CompiledContract compile(const nlohmann::json& source)
{
    return Compiler{}.run(source);
}

std::optional<std::int64_t> MapStateView::get(const std::string& key) const
{
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    return std::nullopt;
}

std::optional<ContractFault> execute(const CompiledContract& contract, std::span<const std::int64_t> args,
                                     StateView& state, ExecStats* stats)
{
    if (args.size() < contract.arg_count) return ContractFault::BadArgIndex;
    Overlay view(state);
    std::vector<std::int64_t> stack;
    std::uint64_t steps = 0;
    const auto& code = contract.code;
    auto pop = [&stack] {
        auto v = stack.back();
        stack.pop_back();
        return v;
    };
    auto report = [&](std::optional<ContractFault> f) {
        if (stats) stats->steps = steps;
        return f;
    };

    for (std::size_t pc = 0; pc < code.size();) {
        const auto& ins = code[pc];
        if (ins.op == OpCode::Jump) {
            pc = static_cast<std::size_t>(ins.operand);
            continue;
        }
        if (++steps > kContractStepBudget) return report(ContractFault::StepLimit);
        std::int64_t r = 0;
        switch (ins.op) {
        case OpCode::Const: stack.push_back(ins.operand); break;
        case OpCode::Get: stack.push_back(view.get(contract.keys[static_cast<std::size_t>(ins.operand)])); break;
        case OpCode::Arg: stack.push_back(args[static_cast<std::size_t>(ins.operand)]); break;
        case OpCode::Add:
        case OpCode::Sub:
        case OpCode::Mul: {
            auto b = pop();
            auto a = pop();
            bool overflow = ins.op == OpCode::Add   ? __builtin_add_overflow(a, b, &r)
                            : ins.op == OpCode::Sub ? __builtin_sub_overflow(a, b, &r)
                                                    : __builtin_mul_overflow(a, b, &r);
            if (overflow) return report(ContractFault::Overflow);
            stack.push_back(r);
            break;
        }
        case OpCode::Eq:
        case OpCode::Lt: {
            auto b = pop();
            auto a = pop();
            stack.push_back(ins.op == OpCode::Eq ? a == b : a < b);
            break;
        }
        case OpCode::Set: view.put(contract.keys[static_cast<std::size_t>(ins.operand)], pop()); break;
        case OpCode::AddTo:
        case OpCode::SubFrom: {
            const auto& key = contract.keys[static_cast<std::size_t>(ins.operand)];
            auto rhs = pop();
            auto cur = view.get(key);
            bool overflow = ins.op == OpCode::AddTo ? __builtin_add_overflow(cur, rhs, &r)
                                                    : __builtin_sub_overflow(cur, rhs, &r);
            if (overflow) return report(ContractFault::Overflow);
            view.put(key, r);
            break;
        }
        case OpCode::BranchIfFalse:
            if (pop() == 0) {
                pc = static_cast<std::size_t>(ins.operand);
                continue;
            }
            break;
        case OpCode::Jump: break;
        }
        ++pc;
    }
    view.commit();
    return report(std::nullopt);
}

std::shared_ptr<const CompiledContract> ContractCache::lookup(const std::string& contract_id,
                                                              const SourceProvider& provider)
{
    {
        std::shared_lock lock(mutex_);
        if (auto it = entries_.find(contract_id); it != entries_.end()) {
            hits_.fetch_add(1);
            return it->second;
        }
    }
    std::unique_lock lock(mutex_);
    if (auto it = entries_.find(contract_id); it != entries_.end()) {
        hits_.fetch_add(1);
        return it->second;
    }
    misses_.fetch_add(1);
    auto source = provider ? provider(contract_id) : std::nullopt;
    if (!source) throw NotFoundError("contract not found: " + contract_id);
    compiles_.fetch_add(1);
    auto compiled = std::make_shared<const CompiledContract>(compile(*source));
    if (compiled->contract_id != contract_id) throw NotFoundError("stored source does not hash to " + contract_id);
    entries_.emplace(contract_id, compiled);
    return compiled;
}

void ContractCache::clear()
{
    std::unique_lock lock(mutex_);
    entries_.clear();
}

ContractCache::Counters ContractCache::counters() const
{
    return {hits_.load(), misses_.load(), compiles_.load()};
}

std::size_t ContractCache::size() const
{
    std::shared_lock lock(mutex_);
    return entries_.size();
}

} // namespace dadb
