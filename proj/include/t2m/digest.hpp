#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace t2m {

// FNV-1a over a byte sequence; stable across platforms, used for config
// hashes and input-file digests in run manifests (provenance, not security).
std::uint64_t fnv1a64(std::string_view bytes);

std::string fnv1a64_hex(std::string_view bytes);

// Digest of the exact bytes of a file.
std::string file_digest(const std::string& path);

}  // namespace t2m
