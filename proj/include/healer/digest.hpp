#pragma once

#include <openssl/evp.h>

#include <cstdio>
#include <string>
#include <string_view>

namespace healer {

inline std::string sha256_hex(std::string_view data) {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int out_len = 0;
    EVP_Digest(data.data(), data.size(), out, &out_len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string result;
    result.reserve(out_len * 2);
    for (unsigned int i = 0; i < out_len; ++i) {
        result.push_back(hex[out[i] >> 4]);
        result.push_back(hex[out[i] & 0xf]);
    }
    return result;
}

// Stable across process restarts; any change to model, temperature, or either
// prompt text changes the digest.
inline std::string prompt_digest(const std::string& model_name,
                                 double temperature,
                                 const std::string& system_text,
                                 const std::string& user_text) {
    char temp_buf[32];
    std::snprintf(temp_buf, sizeof(temp_buf), "%.6g", temperature);
    std::string material;
    material.reserve(64 + model_name.size() + system_text.size() +
                     user_text.size());
    material.append("v1");
    material.push_back('\0');
    material.append(model_name);
    material.push_back('\0');
    material.append(temp_buf);
    material.push_back('\0');
    material.append(system_text);
    material.push_back('\0');
    material.append(user_text);
    return sha256_hex(material);
}

}  // namespace healer
