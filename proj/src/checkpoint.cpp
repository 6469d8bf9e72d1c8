#include "dadet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dadet/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace dadet {

namespace {

constexpr char kMagic[8] = {'D', 'D', 'C', 'K', 'P', 'T', '0', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw CheckpointError("checkpoint truncated: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const ParamMap& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);

  auto entries = params.entries();
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  out.write(kMagic, sizeof kMagic);
  write_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError("bad checkpoint header (expected DDCKPT01): " + path);

  const std::uint32_t count = read_u32(in, path);
  std::map<std::string, Tensor> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw CheckpointError("checkpoint truncated: " + path);
    const std::uint32_t ndim = read_u32(in, path);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(in, path));
    std::vector<float> data(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float))))
      throw CheckpointError("checkpoint truncated: " + path);
    out.emplace(name, Tensor::from_values(shape, std::move(data)));
  }
  return out;
}

void restore_into(const ParamMap& params,
                  const std::map<std::string, Tensor>& loaded) {
  std::string missing, unexpected, mismatched;
  std::map<std::string, bool> used;
  for (const auto& [name, _] : loaded) used[name] = false;

  for (const auto& [name, t] : params.entries()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) {
      missing += (missing.empty() ? "" : ", ") + name;
      continue;
    }
    used[name] = true;
    if (it->second.shape() != t.shape()) {
      mismatched += (mismatched.empty() ? "" : ", ") + name;
      continue;
    }
  }
  for (const auto& [name, u] : used)
    if (!u) unexpected += (unexpected.empty() ? "" : ", ") + name;

  if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
    std::string msg = "checkpoint does not match model architecture.";
    if (!missing.empty()) msg += " missing: [" + missing + "]";
    if (!unexpected.empty()) msg += " unexpected: [" + unexpected + "]";
    if (!mismatched.empty()) msg += " shape mismatch: [" + mismatched + "]";
    throw CheckpointError(msg);
  }

  for (const auto& [name, t] : params.entries()) {
    const Tensor& src = loaded.at(name);
    Tensor dst = t;
    dst.values() = src.values();
  }
}

}  // namespace dadet
