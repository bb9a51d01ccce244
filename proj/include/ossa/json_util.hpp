#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <initializer_list>
#include <string>
#include <string_view>

#include "ossa/error.hpp"

namespace ossa {

using json = nlohmann::json;

namespace detail {

inline std::string join_path(std::string_view ctx, std::string_view key) {
    if (ctx.empty()) return std::string(key);
    return std::string(ctx) + "." + std::string(key);
}

/// Compact decimal text for tables.
inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void require_object(const json &j, std::string_view ctx) {
    if (!j.is_object()) throw ValidationError(std::string(ctx.empty() ? "document" : ctx) + ": expected an object");
}

/// Rejects any key of `j` that is not in `allowed`.
inline void reject_unknown_keys(const json &j, std::initializer_list<std::string_view> allowed, std::string_view ctx) {
    require_object(j, ctx);
    for (const auto &[key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || key == a;
        if (!known) throw ValidationError(join_path(ctx, key) + ": unknown key");
    }
}

template <typename V>
V get_required(const json &j, std::string_view key, std::string_view ctx) {
    const auto it = j.find(std::string(key));
    if (it == j.end()) throw ValidationError(join_path(ctx, key) + ": missing required field");
    try {
        return it->template get<V>();
    } catch (const json::exception &e) {
        throw ValidationError(join_path(ctx, key) + ": wrong type (" + e.what() + ")");
    }
}

template <typename V>
V get_or(const json &j, std::string_view key, V fallback, std::string_view ctx) {
    const auto it = j.find(std::string(key));
    if (it == j.end()) return fallback;
    try {
        return it->template get<V>();
    } catch (const json::exception &e) {
        throw ValidationError(join_path(ctx, key) + ": wrong type (" + e.what() + ")");
    }
}

} // namespace detail
} // namespace ossa
