#pragma once

// Direct tree-walking evaluator over contract JSON, plus a random contract
// generator. Shares nothing with the library's compiler or bytecode VM.

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

struct RefOutcome {
    std::optional<std::string> fault; // "Overflow", "StepLimit", "BadArgIndex"
    std::map<std::string, std::int64_t> state;
};

class ReferenceEvaluator
{
public:
    RefOutcome run(const nlohmann::json& source, const std::vector<std::int64_t>& args,
                   std::map<std::string, std::int64_t> state)
    {
        base_ = state;
        pending_.clear();
        args_ = args;
        steps_ = 0;
        RefOutcome out{std::nullopt, state};
        if (max_arg(source) > static_cast<std::int64_t>(args.size())) {
            out.fault = "BadArgIndex";
            return out;
        }
        try {
            for (const auto& s : source) stmt(s);
        } catch (const Fault& f) {
            out.fault = f.name;
            return out;
        }
        for (const auto& [k, v] : pending_) out.state[k] = v;
        return out;
    }

private:
    struct Fault {
        std::string name;
    };

    static std::int64_t max_arg(const nlohmann::json& j)
    {
        std::int64_t m = 0;
        if (j.is_array()) {
            if (j.size() == 2 && j[0] == "arg") return j[1].get<std::int64_t>() + 1;
            for (const auto& e : j) m = std::max(m, max_arg(e));
        }
        return m;
    }

    void step()
    {
        if (++steps_ > 100000) throw Fault{"StepLimit"};
    }

    std::int64_t read(const std::string& k) const
    {
        if (auto it = pending_.find(k); it != pending_.end()) return it->second;
        if (auto it = base_.find(k); it != base_.end()) return it->second;
        return 0;
    }

    static std::int64_t arith(const std::string& op, std::int64_t a, std::int64_t b)
    {
        // Widen to 128 bits and range-check.
        __int128 r = op == "add" ? (__int128)a + b : op == "sub" ? (__int128)a - b : (__int128)a * b;
        if (r > INT64_MAX || r < INT64_MIN) throw Fault{"Overflow"};
        return static_cast<std::int64_t>(r);
    }

    std::int64_t expr(const nlohmann::json& e)
    {
        if (e.is_number_integer()) {
            step();
            return e.get<std::int64_t>();
        }
        const auto op = e[0].get<std::string>();
        if (op == "get") {
            step();
            return read(e[1].get<std::string>());
        }
        if (op == "arg") {
            step();
            return args_[e[1].get<std::size_t>()];
        }
        auto a = expr(e[1]);
        auto b = expr(e[2]);
        step();
        return arith(op, a, b);
    }

    void stmt(const nlohmann::json& s)
    {
        const auto op = s[0].get<std::string>();
        if (op == "if") {
            auto a = expr(s[1][1]);
            auto b = expr(s[1][2]);
            step();
            bool c = s[1][0] == "eq" ? a == b : a < b;
            step();
            for (const auto& inner : (c ? s[2] : s[3])) stmt(inner);
            return;
        }
        auto key = s[1].get<std::string>();
        auto v = expr(s[2]);
        step();
        if (op == "set")
            pending_[key] = v;
        else
            pending_[key] = arith(op, read(key), v);
    }

    std::map<std::string, std::int64_t> base_;
    std::map<std::string, std::int64_t> pending_;
    std::vector<std::int64_t> args_;
    std::uint64_t steps_ = 0;
};

class ContractFuzzer
{
public:
    explicit ContractFuzzer(std::uint64_t seed) : rng_(seed) {}

    nlohmann::json contract()
    {
        nlohmann::json c = nlohmann::json::array();
        for (int i = 1 + static_cast<int>(rng_() % 6); i > 0; --i) c.push_back(statement(3));
        if (rng_() % 25 == 0) c.push_back({"set", "heavy", balanced_tree(17)});
        return c;
    }

    std::vector<std::int64_t> args(std::size_t n)
    {
        std::vector<std::int64_t> a(n);
        for (auto& v : a) v = literal();
        return a;
    }

    std::map<std::string, std::int64_t> state()
    {
        std::map<std::string, std::int64_t> s;
        for (const auto& k : keys_)
            if (rng_() % 2) s[k] = literal();
        return s;
    }

private:
    std::int64_t literal()
    {
        switch (rng_() % 6) {
        case 0: return INT64_MAX - static_cast<std::int64_t>(rng_() % 3);
        case 1: return INT64_MIN + static_cast<std::int64_t>(rng_() % 3);
        case 2: return static_cast<std::int64_t>(rng_() % 4000000000ull) - 2000000000;
        default: return static_cast<std::int64_t>(rng_() % 21) - 10;
        }
    }

    std::string key() { return keys_[rng_() % keys_.size()]; }

    nlohmann::json expression(int depth)
    {
        auto pick = depth <= 0 ? rng_() % 3 : rng_() % 6;
        switch (pick) {
        case 0: return literal();
        case 1: return {"get", key()};
        case 2: return {"arg", static_cast<int>(rng_() % 3)};
        default: {
            static const char* ops[] = {"add", "sub", "mul"};
            return {ops[rng_() % 3], expression(depth - 1), expression(depth - 1)};
        }
        }
    }

    nlohmann::json statement(int depth)
    {
        auto pick = depth <= 0 ? rng_() % 3 : rng_() % 4;
        if (pick < 3) {
            static const char* ops[] = {"set", "add", "sub"};
            return {ops[pick], key(), expression(2)};
        }
        nlohmann::json then_branch = nlohmann::json::array(), else_branch = nlohmann::json::array();
        for (int i = static_cast<int>(rng_() % 3); i > 0; --i) then_branch.push_back(statement(depth - 1));
        for (int i = static_cast<int>(rng_() % 3); i > 0; --i) else_branch.push_back(statement(depth - 1));
        return {"if", {rng_() % 2 ? "eq" : "lt", expression(1), expression(1)}, then_branch, else_branch};
    }

    nlohmann::json balanced_tree(int depth)
    {
        if (depth == 0) return 1;
        auto sub = balanced_tree(depth - 1);
        return {"add", sub, sub};
    }

    std::mt19937_64 rng_;
    std::vector<std::string> keys_{"a", "b", "c", "d"};
};

} // namespace oracle
