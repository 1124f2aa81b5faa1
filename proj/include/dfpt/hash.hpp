#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dfpt {

// SHA-256 as lowercase hex; used to content-address run inputs.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

}  // namespace dfpt
