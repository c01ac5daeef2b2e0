#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace flex {

std::string sha256_hex(std::string_view data);

// Git blob object id: sha1("blob <size>\0" + content).
std::string git_blob_hash(std::string_view content);

// First eight bytes of sha256(data), big-endian.
std::uint64_t digest64(std::string_view data);

// SplitMix64 step; advances state and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace flex
