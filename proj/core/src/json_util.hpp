#pragma once

// Internal helpers for strict JSON config parsing: every object is checked
// against its known key set so typos surface as ConfigError, not silence.

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "fpformant/error.hpp"

namespace fpf::jsonutil {

using nlohmann::json;

inline json parse_object(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw ConfigError(std::string(what) + ": malformed JSON");
  }
  if (!j.is_object()) {
    throw ConfigError(std::string(what) + ": expected a JSON object");
  }
  return j;
}

inline void check_known_keys(const json& obj,
                             std::initializer_list<const char*> keys,
                             const char* what) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : keys) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError(std::string(what) + ": unknown key '" + item.key() +
                        "'");
    }
  }
}

template <typename T>
void get_to_if(const json& obj, const char* key, T& out, const char* what) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + ": key '" + key +
                      "' has the wrong type");
  }
}

}  // namespace fpf::jsonutil
