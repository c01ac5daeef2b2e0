#include "flex/hashing.hpp"

#include <openssl/evp.h>

#include <array>

namespace flex {
namespace {

template <std::size_t N>
std::string to_hex(const std::array<unsigned char, N>& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * N);
  for (unsigned char b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

template <std::size_t N>
std::array<unsigned char, N> evp_digest(const EVP_MD* type, std::string_view a, std::string_view b = {}) {
  std::array<unsigned char, N> md{};
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, type, nullptr);
  EVP_DigestUpdate(ctx, a.data(), a.size());
  if (!b.empty()) EVP_DigestUpdate(ctx, b.data(), b.size());
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  return md;
}

std::array<unsigned char, 32> sha256_raw(std::string_view data) {
  return evp_digest<32>(EVP_sha256(), data);
}

}  // namespace

std::string sha256_hex(std::string_view data) { return to_hex(sha256_raw(data)); }

std::string git_blob_hash(std::string_view content) {
  std::string header = "blob " + std::to_string(content.size());
  header.push_back('\0');
  return to_hex(evp_digest<20>(EVP_sha1(), header, content));
}

std::uint64_t digest64(std::string_view data) {
  const auto md = sha256_raw(data);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | md[i];
  return v;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t state = a ^ (b * 0xD1B54A32D192ED03ULL);
  return splitmix64(state);
}

}  // namespace flex
