#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "ktan/network.hpp"

namespace ktan {

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

template <typename T>
uint64_t tensor_hash(const Tensor<T>& t, uint64_t h = 0xcbf29ce484222325ULL) {
    for (int64_t e : t.shape()) h = fnv1a64(&e, sizeof(e), h);
    return fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(T), h);
}

// Order-stable digest of all parameters; used to assert freeze and
// update-isolation contracts without copying states around.
template <typename T>
uint64_t state_hash(const NetworkState<T>& state) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, g] : state.groups) {
        h = fnv1a64(name, h);
        h = tensor_hash(g.weight, h);
        h = tensor_hash(g.bias, h);
    }
    return h;
}

}  // namespace ktan
