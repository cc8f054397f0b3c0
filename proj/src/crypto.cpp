#include <dadb/crypto.hpp>

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <memory>
#include <stdexcept>

namespace dadb {

namespace {

struct PkeyDeleter {
    void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

int hex_value(char c)
{
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

} // namespace

std::string to_hex(std::span<const std::uint8_t> bytes)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

std::optional<Bytes> from_hex(std::string_view hex)
{
    if (hex.size() % 2 != 0) return std::nullopt;
    Bytes out(hex.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        int hi = hex_value(hex[2 * i]);
        int lo = hex_value(hex[2 * i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    return out;
}

bool is_lower_hex(std::string_view s, std::size_t expected_len)
{
    if (s.size() != expected_len) return false;
    for (char c : s) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

Digest sha256(std::span<const std::uint8_t> data)
{
    // Fetching the algorithm is costly in OpenSSL 3; keep one per thread.
    struct Hasher {
        EVP_MD* md = EVP_MD_fetch(nullptr, "SHA256", nullptr);
        MdCtxPtr ctx{EVP_MD_CTX_new()};
        ~Hasher() { EVP_MD_free(md); }
    };
    thread_local Hasher h;
    Digest out{};
    unsigned int len = 0;
    if (!h.md || !h.ctx || EVP_DigestInit_ex(h.ctx.get(), h.md, nullptr) != 1 ||
        EVP_DigestUpdate(h.ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(h.ctx.get(), out.data(), &len) != 1 || len != out.size())
        throw std::runtime_error("sha256: digest failed");
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data)
{
    auto d = sha256(data);
    return to_hex(d);
}

NodeIdentity::NodeIdentity(const Seed& seed) : seed_(seed)
{
    PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed_.data(), seed_.size()));
    if (!key) throw std::runtime_error("ed25519: cannot load private key");
    std::size_t len = public_key_.size();
    if (EVP_PKEY_get_raw_public_key(key.get(), public_key_.data(), &len) != 1 || len != public_key_.size())
        throw std::runtime_error("ed25519: cannot derive public key");
    node_id_ = to_hex(public_key_);
}

NodeIdentity NodeIdentity::generate()
{
    Seed seed{};
    if (RAND_bytes(seed.data(), static_cast<int>(seed.size())) != 1)
        throw std::runtime_error("ed25519: RNG failure");
    return NodeIdentity(seed);
}

NodeIdentity NodeIdentity::from_seed(const Seed& seed)
{
    return NodeIdentity(seed);
}

NodeIdentity::Signature NodeIdentity::sign(std::span<const std::uint8_t> message) const
{
    PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed_.data(), seed_.size()));
    MdCtxPtr ctx(EVP_MD_CTX_new());
    if (!key || !ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, key.get()) != 1)
        throw std::runtime_error("ed25519: sign init failed");
    Signature sig{};
    std::size_t len = sig.size();
    if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.data(), message.size()) != 1 || len != sig.size())
        throw std::runtime_error("ed25519: sign failed");
    return sig;
}

bool ed25519_verify(std::span<const std::uint8_t> public_key,
                    std::span<const std::uint8_t> message,
                    std::span<const std::uint8_t> signature)
{
    if (public_key.size() != 32 || signature.size() != 64) return false;
    PkeyPtr key(EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, public_key.data(), public_key.size()));
    MdCtxPtr ctx(EVP_MD_CTX_new());
    if (!key || !ctx) return false;
    if (EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, key.get()) != 1) return false;
    return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(), message.data(), message.size()) == 1;
}

} // namespace dadb
