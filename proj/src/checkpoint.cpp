#include "ltrp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ltrp {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename U>
void put(std::ofstream& out, U value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U get(std::ifstream& in, const std::filesystem::path& path) {
  U value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(U)))
    throw InvalidInput("truncated checkpoint: " + path.string());
  return value;
}

std::string get_string(std::ifstream& in, std::size_t len, const std::filesystem::path& path) {
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw InvalidInput("truncated checkpoint: " + path.string());
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = checkpoint.config.dump();
  put<std::uint64_t>(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put<std::uint64_t>(out, checkpoint.arrays.size());
  for (const auto& a : checkpoint.arrays) {
    if (a.data.size() != static_cast<std::size_t>(a.rows) * a.cols)
      throw InvalidInput("array '" + a.name + "' size does not match its shape");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint32_t>(out, a.rows);
    put<std::uint32_t>(out, a.cols);
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint: " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw InvalidInput("not an ltrp checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw InvalidInput("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto config_len = get<std::uint64_t>(in, path);
  ck.config = nlohmann::json::parse(get_string(in, config_len, path));
  const auto count = get<std::uint64_t>(in, path);
  ck.arrays.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = get_string(in, get<std::uint32_t>(in, path), path);
    a.rows = get<std::uint32_t>(in, path);
    a.cols = get<std::uint32_t>(in, path);
    a.data.resize(static_cast<std::size_t>(a.rows) * a.cols);
    if (!a.data.empty() &&
        !in.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(float))))
      throw InvalidInput("truncated checkpoint: " + path.string());
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const nlohmann::json& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.config != expected)
    throw InvalidInput("checkpoint config mismatch in " + path.string() + ": stored " + ck.config.dump() +
                       ", expected " + expected.dump());
  return ck;
}

}  // namespace ltrp
