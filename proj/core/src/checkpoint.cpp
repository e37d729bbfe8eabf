#include "ctcycle/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "binary_io.hpp"

namespace ctcycle {

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;

std::int64_t extent_product(const std::vector<std::uint32_t>& extents) {
  std::int64_t n = 1;
  for (const auto e : extents) n *= static_cast<std::int64_t>(e);
  return n;
}
}  // namespace

std::int64_t CheckpointEntry::count() const { return extent_product(extents); }

void CheckpointFile::add_entry(CheckpointEntry entry) {
  if (entry.name.empty() || entry.name.size() > 0xffff) {
    throw ValidationError("checkpoint entry name must be 1..65535 bytes");
  }
  if (index_.count(entry.name)) {
    throw ValidationError("duplicate checkpoint entry \"" + entry.name + "\"");
  }
  index_[entry.name] = entries_.size();
  entries_.push_back(std::move(entry));
}

void CheckpointFile::add_f32(const std::string& name, std::vector<std::uint32_t> extents,
                             std::span<const float> values) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::F32;
  e.extents = std::move(extents);
  if (extent_product(e.extents) != static_cast<std::int64_t>(values.size())) {
    throw ValidationError("checkpoint entry \"" + name + "\": extents do not match value count");
  }
  e.f32.assign(values.begin(), values.end());
  add_entry(std::move(e));
}

void CheckpointFile::add_f64(const std::string& name, std::vector<std::uint32_t> extents,
                             std::span<const double> values) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::F64;
  e.extents = std::move(extents);
  if (extent_product(e.extents) != static_cast<std::int64_t>(values.size())) {
    throw ValidationError("checkpoint entry \"" + name + "\": extents do not match value count");
  }
  e.f64.assign(values.begin(), values.end());
  add_entry(std::move(e));
}

void CheckpointFile::add_u64(const std::string& name, std::vector<std::uint32_t> extents,
                             std::span<const std::uint64_t> values) {
  CheckpointEntry e;
  e.name = name;
  e.type = EntryType::U64;
  e.extents = std::move(extents);
  if (extent_product(e.extents) != static_cast<std::int64_t>(values.size())) {
    throw ValidationError("checkpoint entry \"" + name + "\": extents do not match value count");
  }
  e.u64.assign(values.begin(), values.end());
  add_entry(std::move(e));
}

void CheckpointFile::add_scalar_u64(const std::string& name, std::uint64_t value) {
  add_u64(name, {1}, std::span<const std::uint64_t>(&value, 1));
}

bool CheckpointFile::contains(const std::string& name) const { return index_.count(name) > 0; }

const CheckpointEntry& CheckpointFile::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) {
    throw FormatError("checkpoint is missing entry \"" + name + "\"");
  }
  return entries_[it->second];
}

std::uint64_t CheckpointFile::get_scalar_u64(const std::string& name) const {
  const auto& e = get(name);
  if (e.type != EntryType::U64 || e.count() != 1) {
    throw FormatError("checkpoint entry \"" + name + "\" is not a u64 scalar");
  }
  return e.u64[0];
}

void CheckpointFile::save(const std::filesystem::path& path) const {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot open " + path.string() + " for writing");
  io::Writer w(file);
  w.write_bytes("CYCK", 4);
  w.write_u32(kCheckpointVersion);
  w.write_u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.write_u16(static_cast<std::uint16_t>(e.name.size()));
    w.write_bytes(e.name.data(), e.name.size());
    w.write_u8(static_cast<std::uint8_t>(e.type));
    w.write_u8(static_cast<std::uint8_t>(e.extents.size()));
    for (const auto ext : e.extents) w.write_u32(ext);
    switch (e.type) {
      case EntryType::F32:
        io::write_f32_span(w, e.f32.data(), e.f32.size());
        break;
      case EntryType::F64:
        for (const double v : e.f64) {
          std::uint64_t bits;
          std::memcpy(&bits, &v, 8);
          w.write_u64(bits);
        }
        break;
      case EntryType::U64:
        for (const auto v : e.u64) w.write_u64(v);
        break;
    }
  }
  if (!file) throw FormatError("write failed for " + path.string());
}

CheckpointFile CheckpointFile::load(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open checkpoint file " + path.string());
  io::Reader r(file, path.string());
  r.expect_magic("CYCK");
  const auto version = r.read_u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported CYCK version " + std::to_string(version) +
                      " at byte offset 4");
  }
  const auto count = r.read_u32("entry count");
  CheckpointFile ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.read_u16("entry name length");
    e.name.resize(name_len);
    r.read_bytes(e.name.data(), name_len, "entry name");
    const auto tag = r.read_u8("dtype tag");
    if (tag > 2) {
      throw FormatError(path.string() + ": invalid dtype tag " + std::to_string(tag) +
                        " in entry \"" + e.name + "\" at byte offset " +
                        std::to_string(r.offset() - 1));
    }
    e.type = static_cast<EntryType>(tag);
    const auto rank = r.read_u8("rank");
    e.extents.resize(rank);
    for (auto& ext : e.extents) ext = r.read_u32("extent");
    const auto n = extent_product(e.extents);
    switch (e.type) {
      case EntryType::F32:
        e.f32.resize(static_cast<std::size_t>(n));
        io::read_f32_span(r, e.f32.data(), e.f32.size(), "f32 payload");
        break;
      case EntryType::F64:
        e.f64.resize(static_cast<std::size_t>(n));
        for (auto& v : e.f64) {
          const auto bits = r.read_u64("f64 payload");
          std::memcpy(&v, &bits, 8);
        }
        break;
      case EntryType::U64:
        e.u64.resize(static_cast<std::size_t>(n));
        for (auto& v : e.u64) v = r.read_u64("u64 payload");
        break;
    }
    ck.add_entry(std::move(e));
  }
  r.expect_eof();
  return ck;
}

}  // namespace ctcycle
