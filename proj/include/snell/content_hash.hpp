#pragma once

#include "snell/error.hpp"

#include <openssl/evp.h>

#include <memory>
#include <string>

namespace snell {

/// SHA-1 of "blob <size>\0<bytes>", i.e. the id git gives the file.
/// Needs libcrypto at link time.
inline std::string git_blob_hash(const std::string& bytes) {
    const std::string data = "blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    require(ctx != nullptr, ErrorKind::precondition, "cannot allocate a digest context");
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    const bool ok = EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx.get(), data.data(), data.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx.get(), md, &len) == 1;
    require(ok, ErrorKind::precondition, "SHA-1 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

}  // namespace snell
