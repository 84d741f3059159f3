#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "bmgan/nets.hpp"

namespace bmgan {

/// Rejects keys of `j` outside `allowed`. `context` prefixes the reported field.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        const std::string& context);

/// Reads j[key] into `out` when present; type errors become ConfigError(context.key).
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out, const std::string& context) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context.empty() ? key : context + "." + key, e.what());
  }
}

}  // namespace bmgan
