#include "i2i/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "i2i/errors.hpp"

namespace fs = std::filesystem;

namespace i2i {

namespace {

constexpr const char* kMagic = "i2i-checkpoint";

std::string shape_token(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

Shape parse_shape(const std::string& token, const std::string& name) {
  Shape shape;
  std::istringstream in(token);
  std::string part;
  while (std::getline(in, part, 'x')) {
    try {
      std::size_t used = 0;
      shape.push_back(std::stoull(part, &used));
      if (used != part.size() || shape.back() == 0) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw CheckpointError("checkpoint: tensor '" + name + "' has malformed shape '" + token + "'");
    }
  }
  if (shape.empty()) throw CheckpointError("checkpoint: tensor '" + name + "' has an empty shape");
  return shape;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checksum(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

}  // namespace

const Tensor<float>& CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint: missing tensor '" + name + "'");
}

void write_checkpoint(const CheckpointData& data, const fs::path& path) {
  std::string payload;
  std::string manifest;
  std::size_t offset = 0;
  for (const auto& [name, t] : data.tensors) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw ContractError("checkpoint tensor names must be non-empty without whitespace: '" + name + "'");
    }
    manifest += "tensor " + name + " " + shape_token(t.shape()) + " " + std::to_string(offset) + " " +
                std::to_string(t.numel()) + "\n";
    for (const float v : t.values()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    offset += t.numel();
  }
  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", checksum(payload));

  std::string header = std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  header += data.header.to_string();
  header += manifest;
  header += "payload " + std::to_string(payload.size()) + " " + crc + "\n";
  header += "end\n";

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  // Write to a sibling file first so an interrupted save never leaves a
  // half-written checkpoint under the final name.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  const std::string where = "checkpoint " + path.string();

  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError(where + ": truncated header");
    line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
  };

  std::string line;
  next_line(line);
  {
    std::istringstream first(line);
    std::string magic;
    int version = -1;
    first >> magic >> version;
    if (magic != kMagic) throw CheckpointError(where + ": not a checkpoint file (bad magic)");
    if (version != kCheckpointVersion) {
      throw CheckpointError(where + ": unsupported version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
  }

  std::string kv_text;
  std::vector<ManifestEntry> manifest;
  std::size_t payload_size = 0;
  std::string crc_text;
  bool have_payload = false;
  for (;;) {
    next_line(line);
    if (line == "end") break;
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream ls(line.substr(7));
      ManifestEntry e;
      std::string shape;
      ls >> e.name >> shape >> e.offset >> e.count;
      if (ls.fail()) throw CheckpointError(where + ": malformed tensor entry '" + line + "'");
      e.shape = parse_shape(shape, e.name);
      if (shape_numel(e.shape) != e.count) {
        throw CheckpointError(where + ": tensor '" + e.name + "' count does not match its shape");
      }
      manifest.push_back(std::move(e));
    } else if (line.rfind("payload ", 0) == 0) {
      std::istringstream ls(line.substr(8));
      ls >> payload_size >> crc_text;
      if (ls.fail()) throw CheckpointError(where + ": malformed payload field");
      have_payload = true;
    } else {
      kv_text += line + "\n";
    }
  }
  if (!have_payload) throw CheckpointError(where + ": missing payload field");

  const std::size_t available = bytes.size() - pos;
  if (available < payload_size) {
    throw CheckpointError(where + ": truncated payload (" + std::to_string(available) + " of " +
                          std::to_string(payload_size) + " bytes)");
  }
  if (available > payload_size) {
    throw CheckpointError(where + ": " + std::to_string(available - payload_size) +
                          " unexpected bytes after the payload");
  }
  const std::string payload = bytes.substr(pos);
  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", checksum(payload));
  if (crc_text != crc) throw CheckpointError(where + ": payload checksum mismatch (file corrupted)");

  CheckpointData data;
  try {
    data.header = KvConfig::parse(kv_text, where);
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(payload.data());
  for (const auto& e : manifest) {
    if ((e.offset + e.count) * 4 > payload.size()) {
      throw CheckpointError(where + ": tensor '" + e.name + "' extends past the payload");
    }
    std::vector<float> values(e.count);
    for (std::size_t i = 0; i < e.count; ++i) values[i] = std::bit_cast<float>(get_u32(raw + 4 * (e.offset + i)));
    data.tensors.emplace_back(e.name, Tensor<float>(e.shape, std::move(values)));
  }
  return data;
}

}  // namespace i2i
