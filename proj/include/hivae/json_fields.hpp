#pragma once

// Helpers for reading config objects with field-path error messages.

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "hivae/error.hpp"

namespace hivae {

// Throws ConfigError if `obj` is not an object or holds a key outside `allowed`.
inline void require_keys(const nlohmann::json& obj, const std::string& path,
                         std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) known = known || it.key() == k;
    if (!known) throw ConfigError(path + "." + it.key() + ": unknown field");
  }
}

// Reads obj[key] into out when present, converting type errors to ConfigError.
template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type (" + std::string(it->type_name()) + ")");
  }
}

}  // namespace hivae
