#include "mdcpc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mdcpc/error.hpp"

namespace mdcpc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

bool Checkpoint::has_param(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return true;
  }
  return false;
}

const Tensor& Checkpoint::param(const std::string& name) const {
  for (const auto& [n, t] : params) {
    if (n == name) return t;
  }
  throw ConfigError("checkpoint has no parameter " + name);
}

Checkpoint make_checkpoint(const std::string& kind, json config, const ParamSet& params) {
  Checkpoint c;
  c.kind = kind;
  c.config = std::move(config);
  c.metrics = json::object();
  c.extra = json::object();
  for (std::size_t i = 0; i < params.names().size(); ++i) {
    c.params.emplace_back(params.names()[i], params.vars()[i]->value);
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const json header{{"kind", ckpt.kind},         {"config", ckpt.config}, {"metrics", ckpt.metrics},
                    {"extra", ckpt.extra},       {"rng_state", ckpt.rng_state},
                    {"params", index},           {"value_count", offset}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(kCheckpointTag, sizeof kCheckpointTag);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.params) {
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    if (!out) throw IngestionError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  char tag[sizeof kCheckpointTag];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(tag, sizeof tag);
  if (!in || std::memcmp(tag, kCheckpointTag, sizeof tag) != 0) {
    throw FormatError(path.string() + " is not a checkpoint (bad format tag)");
  }
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw FormatError("truncated checkpoint header in " + path.string());

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  Checkpoint c;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.config = header.at("config");
    c.metrics = header.at("metrics");
    c.extra = header.value("extra", json::object());
    c.rng_state = header.at("rng_state").get<std::string>();
    for (const auto& entry : header.at("params")) {
      Tensor t(entry.at("shape").get<std::vector<int>>());
      in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
      if (!in) throw FormatError("truncated parameter data in " + path.string());
      c.params.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  in.peek();
  if (!in.eof()) throw FormatError("trailing bytes after parameter data in " + path.string());
  return c;
}

int restore_params(ParamSet& params, const Checkpoint& ckpt, bool allow_missing) {
  int copied = 0;
  for (std::size_t i = 0; i < params.names().size(); ++i) {
    const auto& name = params.names()[i];
    if (!ckpt.has_param(name)) {
      if (allow_missing) continue;
      throw ConfigError("checkpoint is missing parameter " + name);
    }
    const Tensor& src = ckpt.param(name);
    auto& dst = params.vars()[i]->value;
    if (src.shape() != dst.shape()) {
      throw ConfigError("shape mismatch for " + name + ": checkpoint " + src.shape_string() + " vs model " +
                        dst.shape_string());
    }
    dst = src;
    ++copied;
  }
  return copied;
}

ParamSet checkpoint_params(const Checkpoint& ckpt) {
  ParamSet p;
  for (const auto& [name, t] : ckpt.params) p.add(name, t);
  return p;
}

}  // namespace mdcpc
