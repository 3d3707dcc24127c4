#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "core/error.hpp"

namespace hsflow {

using Digest = std::array<uint8_t, 32>;

// Incremental SHA-256 over whatever gets appended.
class DigestBuilder {
  public:
    DigestBuilder() : ctx_(EVP_MD_CTX_new()) {
        EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr);
    }
    ~DigestBuilder() { EVP_MD_CTX_free(ctx_); }
    DigestBuilder(const DigestBuilder&) = delete;
    DigestBuilder& operator=(const DigestBuilder&) = delete;

    void update(const void* data, size_t len) { EVP_DigestUpdate(ctx_, data, len); }

    template <typename T>
    void update_pod(const T& v) {
        update(&v, sizeof(T));
    }

    template <typename T>
    void update_vec(const std::vector<T>& v) {
        update(v.data(), v.size() * sizeof(T));
    }

    Digest finish() {
        Digest d{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_, d.data(), &len);
        return d;
    }

  private:
    EVP_MD_CTX* ctx_;
};

inline Digest sha256_bytes(const void* data, size_t len) {
    DigestBuilder b;
    b.update(data, len);
    return b.finish();
}

inline std::string digest_hex(const Digest& d) {
    static const char* hex = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t byte : d) {
        s.push_back(hex[byte >> 4]);
        s.push_back(hex[byte & 0xf]);
    }
    return s;
}

inline Digest sha256_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw Error::usage("cannot open file for hashing: " + path);
    DigestBuilder b;
    char buf[1 << 16];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) b.update(buf, n);
    std::fclose(f);
    return b.finish();
}

}  // namespace hsflow
