// Copyright (c) 2026 nartts authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "nartts/error.hpp"

namespace nartts {

// key=value text, one pair per line, keys sorted on write. The same format is
// embedded verbatim into checkpoints and accepted by the CLI's --config.
using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": missing '='");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

inline std::string config_to_text(const ConfigMap& cfg) {
  std::ostringstream os;
  for (const auto& [k, v] : cfg) os << k << "=" << v << "\n";
  return os.str();
}

namespace cfg {

inline std::string get_str(const ConfigMap& m, const std::string& key, const std::string& dflt) {
  auto it = m.find(key);
  return it == m.end() ? dflt : it->second;
}

inline int get_int(const ConfigMap& m, const std::string& key, int dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw ParseError("config key " + key + ": not an integer: " + it->second);
  }
}

inline std::uint64_t get_u64(const ConfigMap& m, const std::string& key, std::uint64_t dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ParseError("config key " + key + ": not an integer: " + it->second);
  }
}

inline double get_double(const ConfigMap& m, const std::string& key, double dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ParseError("config key " + key + ": not a number: " + it->second);
  }
}

inline bool get_bool(const ConfigMap& m, const std::string& key, bool dflt) {
  auto it = m.find(key);
  if (it == m.end()) return dflt;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ParseError("config key " + key + ": not a boolean: " + it->second);
}

}  // namespace cfg

}  // namespace nartts
