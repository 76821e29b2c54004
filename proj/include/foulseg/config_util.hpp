#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "foulseg/error.hpp"

namespace foulseg {

/// Throws ConfigError when `j` is not an object or carries a key outside `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                               std::string_view section) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, std::string(section) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw Error(ErrorCode::ConfigError, std::string(section) + ": unknown key '" + key + "'");
  }
}

/// Reads j[key] into `out` when present; type errors become ConfigError.
template <typename T>
void read_key(const nlohmann::json& j, std::string_view key, T& out, std::string_view section) {
  const std::string k(key);
  if (!j.contains(k)) return;
  try {
    out = j.at(k).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string(section) + "." + k + ": " + e.what());
  }
}

}  // namespace foulseg

#include <filesystem>
#include <fstream>

namespace foulseg {

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::ifstream in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
}

}  // namespace foulseg
