#include <dadb/net.hpp>

namespace dadb {

std::string_view to_string(PeerState s)
{
    switch (s) {
    case PeerState::Known: return "known";
    case PeerState::Connected: return "connected";
    case PeerState::Failed: return "failed";
    }
    return "unknown";
}

bool PeerTable::add_peer(const std::string& addr)
{
    if (addr.empty() || addr == self_) return false;
    auto [it, inserted] = peers_.try_emplace(addr);
    if (inserted) it->second.addr = addr;
    return inserted;
}

PeerRecord* PeerTable::find(const std::string& addr)
{
    auto it = peers_.find(addr);
    return it == peers_.end() ? nullptr : &it->second;
}

const PeerRecord* PeerTable::find(const std::string& addr) const
{
    auto it = peers_.find(addr);
    return it == peers_.end() ? nullptr : &it->second;
}

std::vector<PeerRecord> PeerTable::records() const
{
    std::vector<PeerRecord> out;
    out.reserve(peers_.size());
    for (const auto& [_, r] : peers_) out.push_back(r);
    return out;
}

std::vector<std::string> PeerTable::addrs() const
{
    std::vector<std::string> out;
    out.reserve(peers_.size());
    for (const auto& [a, _] : peers_) out.push_back(a);
    return out;
}

std::size_t PeerTable::count(PeerState s) const
{
    std::size_t n = 0;
    for (const auto& [_, r] : peers_) n += r.state == s;
    return n;
}

bool SeenCache::insert(const std::string& hash)
{
    if (!set_.insert(hash).second) return false;
    order_.push_back(hash);
    if (order_.size() > capacity_) {
        set_.erase(order_.front());
        order_.pop_front();
    }
    return true;
}

} // namespace dadb
