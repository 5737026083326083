#include "dfb/digest.hpp"

#include <openssl/evp.h>

#include <stdexcept>

namespace dfb {

struct Sha256::Impl {
    EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>())
{
    impl_->ctx = EVP_MD_CTX_new();
    if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: EVP init failed");
    }
}

Sha256::~Sha256()
{
    EVP_MD_CTX_free(impl_->ctx);
}

void Sha256::update(const void* data, std::size_t size)
{
    if (size && EVP_DigestUpdate(impl_->ctx, data, size) != 1) {
        throw std::runtime_error("sha256: update failed");
    }
}

void Sha256::update(std::span<const std::uint8_t> bytes)
{
    update(bytes.data(), bytes.size());
}

void Sha256::update(std::string_view text)
{
    update(text.data(), text.size());
}

std::array<std::uint8_t, 32> Sha256::finish()
{
    std::array<std::uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(impl_->ctx, out.data(), &len) != 1 || len != out.size()) {
        throw std::runtime_error("sha256: final failed");
    }
    return out;
}

std::string Sha256::finish_hex()
{
    const auto d = finish();
    return to_hex(d);
}

std::string to_hex(std::span<const std::uint8_t> bytes)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

std::string sha256_hex(std::string_view bytes)
{
    Sha256 h;
    h.update(bytes);
    return h.finish_hex();
}

}  // namespace dfb
