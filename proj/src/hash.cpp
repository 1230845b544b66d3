// Copyright (c) 2026 The hyperlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "hyperlab/hash.hpp"

#include <array>
#include <memory>
#include <stdexcept>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace hyperlab {

namespace {

std::string digest(std::initializer_list<std::string_view> parts) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                                &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest init failed");
    }
    for (std::string_view part : parts) {
        EVP_DigestUpdate(ctx.get(), part.data(), part.size());
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), out.data(), &len);
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        hex += fmt::format("{:02x}", out[i]);
    }
    return hex;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) { return digest({bytes}); }

std::string sha256_hex(std::span<const double> values) {
    // Host byte order; every supported target is little-endian.
    return digest({std::string_view(reinterpret_cast<const char*>(values.data()),
                                    values.size_bytes())});
}

std::string content_hash(std::string_view content) {
    const std::string header = fmt::format("blob {}", content.size());
    return digest({header, std::string_view("\0", 1), content});
}

}  // namespace hyperlab
