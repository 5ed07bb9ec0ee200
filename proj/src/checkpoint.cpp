// SPDX-License-Identifier: Apache-2.0
#include "hialign/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hialign/errors.hpp"
#include "hialign/hfat.hpp"

namespace hialign {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'C', 'K'};

template <class T>
void put(std::ostream& os, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& origin) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw LoadError(origin + ": truncated checkpoint header");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json h;
  h["phase"] = ckpt.phase;
  h["epoch"] = ckpt.epoch;
  if (std::isfinite(ckpt.best_value)) h["best_value"] = ckpt.best_value;
  else h["best_value"] = nullptr;
  h["config_hash"] = ckpt.config_hash;
  h["config"] = nlohmann::ordered_json::parse(ckpt.config.to_json());
  h["tokens"] = ckpt.tokens.tokens();
  h["glosses"] = ckpt.glosses.lemmas();
  auto params = nlohmann::ordered_json::array();
  for (const auto& name : ckpt.params.names()) {
    const auto& p = ckpt.params.get(name);
    params.push_back({{"name", name}, {"trainable", p.trainable}, {"frozen", p.frozen}});
  }
  h["params"] = std::move(params);
  auto moments = nlohmann::ordered_json::array();
  for (const auto& [name, m] : ckpt.optimizer.m) {
    const auto it = ckpt.optimizer.steps.find(name);
    moments.push_back({{"name", name}, {"steps", it == ckpt.optimizer.steps.end() ? 0 : it->second}});
  }
  h["moments"] = std::move(moments);
  const std::string header = h.dump();

  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  put<std::uint32_t>(os, Checkpoint::kFormatVersion);
  put<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& name : ckpt.params.names()) hfat::write(os, ckpt.params.value(name));
  for (const auto& [name, m] : ckpt.optimizer.m) {
    hfat::write(os, m);
    hfat::write(os, ckpt.optimizer.v.at(name));
  }
  return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  std::istringstream is(bytes, std::ios::binary);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw LoadError(origin + ": not a checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(is, origin);
  if (version != Checkpoint::kFormatVersion) {
    throw LoadError(origin + ": unsupported checkpoint format version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(is, origin);
  if (len > bytes.size()) throw LoadError(origin + ": header length exceeds file size");
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));

  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(header);
    c.phase = h.at("phase").get<std::string>();
    c.epoch = h.at("epoch").get<std::size_t>();
    c.best_value = h.at("best_value").is_null() ? std::nan("") : h.at("best_value").get<double>();
    c.config_hash = h.at("config_hash").get<std::uint64_t>();
    c.config = config_from_json(h.at("config").dump());
    c.tokens = TokenVocab(h.at("tokens").get<std::vector<std::string>>());
    c.glosses = PseudoGlossVocab(h.at("glosses").get<std::vector<std::string>>());
    for (const auto& p : h.at("params")) {
      const auto name = p.at("name").get<std::string>();
      auto& param = c.params.add(name, hfat::read(is, origin + ":" + name), p.at("trainable").get<bool>());
      param.frozen = p.at("frozen").get<bool>();
    }
    for (const auto& m : h.at("moments")) {
      const auto name = m.at("name").get<std::string>();
      c.optimizer.m.emplace(name, hfat::read(is, origin + ":" + name + ".m"));
      c.optimizer.v.emplace(name, hfat::read(is, origin + ":" + name + ".v"));
      c.optimizer.steps.emplace(name, m.at("steps").get<std::uint64_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(origin + ": malformed checkpoint header: " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(origin + ": " + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw LoadError(origin + ": trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os || !os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("cannot write checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace hialign
