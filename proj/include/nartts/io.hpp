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

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nartts/config.hpp"
#include "nartts/error.hpp"
#include "nartts/nn.hpp"
#include "nartts/tensor.hpp"

namespace nartts {

// ---------------------------------------------------------------------------
// Little-endian byte plumbing
// ---------------------------------------------------------------------------

namespace io_detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

inline void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

// Cursor over a fully loaded file; every under-read reports the byte offset.
class Reader {
 public:
  Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n) {
    if (remaining() < n)
      throw FormatError(what_ + ": truncated at offset " + std::to_string(pos_));
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
      v |= static_cast<std::uint16_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void expect_exhausted() {
    if (remaining() != 0)
      throw FormatError(what_ + ": trailing garbage at offset " + std::to_string(pos_));
  }

 private:
  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(what + ": cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("short write to " + path);
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Feature files: magic "NHDR", u32 version=1, u32 T, u32 dim, then T*dim
// little-endian f32 row-major. 32-bit on disk halves the size; the loss is
// far below every tolerance in use.
// ---------------------------------------------------------------------------

inline void write_features(const std::string& path, const Tensor& frames) {
  if (frames.rank() != 2) throw ContractError("write_features: frames must be rank-2");
  std::string buf;
  buf += "NHDR";
  io_detail::put_u32(buf, 1);
  io_detail::put_u32(buf, static_cast<std::uint32_t>(frames.dim(0)));
  io_detail::put_u32(buf, static_cast<std::uint32_t>(frames.dim(1)));
  for (double v : frames.values()) io_detail::put_f32(buf, static_cast<float>(v));
  io_detail::write_file(path, buf);
}

inline Tensor read_features(const std::string& path) {
  io_detail::Reader r(io_detail::read_file(path, "feature file"), "feature file " + path);
  if (r.take(4) != "NHDR")
    throw FormatError("feature file " + path + ": bad magic at offset 0");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("feature file " + path + ": unknown version " + std::to_string(version));
  const std::uint32_t t = r.u32();
  const std::uint32_t dim = r.u32();
  if (t == 0 || dim == 0) throw FormatError("feature file " + path + ": empty dimensions");
  std::vector<double> values(static_cast<std::size_t>(t) * dim);
  for (double& v : values) v = static_cast<double>(r.f32());
  r.expect_exhausted();
  return Tensor::from({static_cast<int>(t), static_cast<int>(dim)}, std::move(values));
}

// ---------------------------------------------------------------------------
// Duration files: one line per utterance, `id<TAB>d1 d2 ... dT`.
// ---------------------------------------------------------------------------

using DurationEntries = std::vector<std::pair<std::string, std::vector<int>>>;

inline void write_durations(const std::string& path, const DurationEntries& entries) {
  std::string buf;
  for (const auto& [id, frames] : entries) {
    buf += id;
    buf += '\t';
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (i) buf += ' ';
      buf += std::to_string(frames[i]);
    }
    buf += '\n';
  }
  io_detail::write_file(path, buf);
}

inline DurationEntries read_durations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("duration file: cannot open " + path);
  DurationEntries out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("duration file " + path + " line " + std::to_string(lineno) +
                       ": missing tab separator");
    std::pair<std::string, std::vector<int>> entry;
    entry.first = line.substr(0, tab);
    std::istringstream fields(line.substr(tab + 1));
    std::string tok;
    while (fields >> tok) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0)
        throw ParseError("duration file " + path + " line " + std::to_string(lineno) +
                         ": bad duration field '" + tok + "'");
      entry.second.push_back(v);
    }
    if (entry.second.empty())
      throw ParseError("duration file " + path + " line " + std::to_string(lineno) +
                       ": no durations");
    out.push_back(std::move(entry));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests: `id<TAB>tok1 tok2 ...<TAB>feature-path` per line. Paths are
// stored as written; relative paths resolve against the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::vector<int> tokens;
  std::string feature_path;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::string buf;
  for (const auto& e : entries) {
    buf += e.id;
    buf += '\t';
    for (std::size_t i = 0; i < e.tokens.size(); ++i) {
      if (i) buf += ' ';
      buf += std::to_string(e.tokens[i]);
    }
    buf += '\t';
    buf += e.feature_path;
    buf += '\n';
  }
  io_detail::write_file(path, buf);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos)
      throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                       ": expected id<TAB>tokens<TAB>path");
    ManifestEntry e;
    e.id = line.substr(0, tab1);
    std::istringstream fields(line.substr(tab1 + 1, tab2 - tab1 - 1));
    std::string tok;
    while (fields >> tok) {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v < 0)
        throw ParseError("manifest " + path + " line " + std::to_string(lineno) +
                         ": bad token id '" + tok + "'");
      e.tokens.push_back(v);
    }
    e.feature_path = line.substr(tab2 + 1);
    if (e.tokens.empty())
      throw ParseError("manifest " + path + " line " + std::to_string(lineno) + ": no tokens");
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "NHCK", u32 version=1, u32 entry count, then entries
// sorted by name. Per entry: u16 name length, UTF-8 name, u8 rank, rank*u32
// dims, payload of little-endian f64 values. The reserved entry "__config__"
// carries the config text instead: rank 1, dims = [byte count], payload raw
// UTF-8 bytes. Canonical ordering makes save -> load -> resave byte-stable.
// ---------------------------------------------------------------------------

constexpr const char* kConfigEntryName = "__config__";

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> params;
  ConfigMap config;
};

inline void save_checkpoint(const std::string& path, const ParamMap& params,
                            const ConfigMap& config) {
  std::vector<std::pair<std::string, Tensor>> sorted(params.begin(), params.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].first == sorted[i - 1].first)
      throw FormatError("checkpoint: duplicate parameter name " + sorted[i].first);
  }
  for (const auto& [name, t] : sorted) {
    if (name == kConfigEntryName)
      throw FormatError(std::string("checkpoint: parameter name collides with ") +
                        kConfigEntryName);
  }

  std::string buf;
  buf += "NHCK";
  io_detail::put_u32(buf, 1);
  io_detail::put_u32(buf, static_cast<std::uint32_t>(sorted.size() + 1));

  const std::string cfg_text = config_to_text(config);
  // The config entry sorts with everything else to keep the file canonical.
  bool config_written = false;
  auto write_config = [&] {
    io_detail::put_u16(buf, static_cast<std::uint16_t>(std::strlen(kConfigEntryName)));
    buf += kConfigEntryName;
    buf.push_back(static_cast<char>(1));
    io_detail::put_u32(buf, static_cast<std::uint32_t>(cfg_text.size()));
    buf += cfg_text;
    config_written = true;
  };
  for (const auto& [name, t] : sorted) {
    if (!config_written && name > kConfigEntryName) write_config();
    if (name.size() > 0xFFFF) throw FormatError("checkpoint: parameter name too long");
    io_detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      io_detail::put_u32(buf, static_cast<std::uint32_t>(t.dim(i)));
    for (double v : t.values()) io_detail::put_f64(buf, v);
  }
  if (!config_written) write_config();
  io_detail::write_file(path, buf);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  io_detail::Reader r(io_detail::read_file(path, "checkpoint"), "checkpoint " + path);
  if (r.take(4) != "NHCK") throw FormatError("checkpoint " + path + ": bad magic at offset 0");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("checkpoint " + path + ": unknown version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  bool saw_config = false;
  std::string prev_name;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.take(name_len);
    if (e > 0 && name <= prev_name)
      throw FormatError("checkpoint " + path + ": entries not in canonical order (" + name + ")");
    prev_name = name;
    const std::uint8_t rank = r.u8();
    if (name == kConfigEntryName) {
      if (rank != 1) throw FormatError("checkpoint " + path + ": malformed config entry");
      const std::uint32_t nbytes = r.u32();
      ck.config = parse_config_text(r.take(nbytes));
      saw_config = true;
      continue;
    }
    Shape shape(rank);
    std::int64_t numel = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<int>(r.u32());
      numel *= shape[i];
    }
    if (rank == 0 || numel < 1)
      throw FormatError("checkpoint " + path + ": bad shape for " + name);
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (double& v : values) v = r.f64();
    ck.params.emplace_back(name, Tensor::from(std::move(shape), std::move(values)));
  }
  r.expect_exhausted();
  if (!saw_config) throw FormatError("checkpoint " + path + ": missing config entry");
  return ck;
}

// Restores values bitwise into an existing parameter map (names and shapes
// must match exactly).
inline void load_into(ParamMap& params, const Checkpoint& ck) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ck.params) by_name[name] = &t;
  if (by_name.size() != params.size())
    throw FormatError("checkpoint: has " + std::to_string(by_name.size()) + " parameters, model " +
                      std::to_string(params.size()));
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing parameter " + name);
    if (it->second->shape() != t.shape())
      throw FormatError("checkpoint: shape mismatch for " + name);
    t.mutable_values() = it->second->values();
  }
}

}  // namespace nartts
