#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace aedit {

// Invalid user configuration; the message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace config {

// Throws ConfigError for keys of `j` not in `allowed`, or when `j` is not an object.
void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

// Reads j[key] into `out` when present; ConfigError on a type mismatch.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type (" + j.at(key).dump() + ")");
  }
}

}  // namespace config
}  // namespace aedit
