// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmf/errors.hpp"
#include "egmf/tensor.hpp"

namespace egmf {

// Layout: 8-byte magic, u64 LE header length, JSON header, then every
// parameter as little-endian f64 in header order.
inline constexpr std::string_view kCheckpointMagic = "EGMFCKPT";
inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointHeader {
  std::string kind;         // "lm" or "model"
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

inline void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                            const std::vector<Parameter*>& params) {
  nlohmann::ordered_json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = header.kind;
  j["seed"] = header.seed;
  j["config_hash"] = header.config_hash;
  j["extra"] = header.extra;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const Parameter* p : params) {
    list.push_back({{"name", p->name}, {"shape", p->tensor.shape()}, {"frozen", p->frozen}});
  }
  j["params"] = list;
  const std::string head = j.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  const std::uint64_t len = head.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const Parameter* p : params) {
    const auto d = p->tensor.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed for checkpoint " + path.string());
}

inline CheckpointHeader read_checkpoint_header(std::ifstream& in, const std::string& where, nlohmann::json& raw) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string_view(magic, 8) != kCheckpointMagic) throw ParseError(where + ": not an EGMF checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 26)) throw ParseError(where + ": corrupt header length");
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(where + ": truncated header");
  try {
    raw = nlohmann::json::parse(head);
    if (raw.at("format_version").get<int>() != kCheckpointVersion) throw SchemaError(where + ": unsupported format_version");
    CheckpointHeader h;
    h.kind = raw.at("kind").get<std::string>();
    h.seed = raw.at("seed").get<std::uint64_t>();
    h.config_hash = raw.at("config_hash").get<std::string>();
    h.extra = raw.value("extra", nlohmann::json::object());
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": bad header: " + e.what());
  }
}

inline CheckpointHeader peek_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json raw;
  return read_checkpoint_header(in, path.string(), raw);
}

// Fills params (matched by name, in the order stored) from path. Every
// stored entry must exist with the same shape and every target must be
// covered. A non-empty expected_hash must match the stored one.
inline CheckpointHeader load_checkpoint(const std::filesystem::path& path, const std::vector<Parameter*>& params,
                                        std::string_view expected_kind, std::string_view expected_hash = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json raw;
  CheckpointHeader h = read_checkpoint_header(in, path.string(), raw);
  if (h.kind != expected_kind) {
    throw ConfigError(path.string() + " is a '" + h.kind + "' checkpoint, expected '" + std::string(expected_kind) + "'");
  }
  if (!expected_hash.empty() && h.config_hash != expected_hash) {
    throw ConfigError(path.string() + " was written for config hash " + h.config_hash + " but the current config hashes to " +
                      std::string(expected_hash));
  }
  const auto& list = raw.at("params");
  if (list.size() != params.size()) {
    throw SchemaError(path.string() + " stores " + std::to_string(list.size()) + " parameters, expected " +
                      std::to_string(params.size()));
  }
  for (const auto& entry : list) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    Parameter* target = nullptr;
    for (Parameter* p : params) {
      if (p->name == name) target = p;
    }
    if (!target) throw SchemaError(path.string() + ": unexpected parameter '" + name + "'");
    if (target->tensor.shape() != shape) {
      throw SchemaError(path.string() + ": parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                        shape_string(target->tensor.shape()));
    }
    auto d = target->tensor.data();
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!in) throw ParseError(path.string() + ": truncated data for '" + name + "'");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path.string() + ": trailing bytes after data");
  return h;
}

// FNV-1a, 64 bit, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace egmf
