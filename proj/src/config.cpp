#include "aedit/config.hpp"

namespace aedit::config {

void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError("config section '" + (where.empty() ? std::string("<root>") : where) + "' must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

}  // namespace aedit::config
