#include "platoon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "platoon/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace platoon {

namespace {

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint " + path.string());
  return value;
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const auto len = get<std::uint32_t>(in, path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw CheckpointError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace

const Matrix& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : blocks) {
    if (n == name) return m;
  }
  throw CheckpointError("checkpoint has no block named " + name);
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(out, kCheckpointVersion);
  put(out, checkpoint.step);
  put(out, static_cast<std::uint32_t>(checkpoint.metadata.size()));
  out.write(checkpoint.metadata.data(), static_cast<std::streamsize>(checkpoint.metadata.size()));
  put(out, static_cast<std::uint32_t>(checkpoint.blocks.size()));
  for (const auto& [name, m] : checkpoint.blocks) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint64_t>(m.rows()));
    put(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.step = get<std::uint64_t>(in, path);
  cp.metadata = get_string(in, path);
  const auto n_blocks = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    std::string name = get_string(in, path);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (cols != 0 && rows > std::numeric_limits<std::uint32_t>::max() / cols) {
      throw CheckpointError("implausible block shape in " + path.string());
    }
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint " + path.string());
    cp.blocks.emplace_back(std::move(name), std::move(m));
  }
  return cp;
}

}  // namespace platoon
