#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctcycle/errors.hpp"

namespace ctcycle {

enum class EntryType : std::uint8_t { F32 = 0, F64 = 1, U64 = 2 };

struct CheckpointEntry {
  std::string name;
  EntryType type = EntryType::F32;
  std::vector<std::uint32_t> extents;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<std::uint64_t> u64;

  std::int64_t count() const;
};

/// CYCK named-entry container, bit-exact: magic "CYCK", format version u32
/// LE, entry count u32 LE; each entry is name length u16 LE + UTF-8 name +
/// dtype tag u8 (0=f32, 1=f64, 2=u64) + rank u8 + extents u32 LE each + raw
/// LE payload. Entry order is preserved, so save -> load -> save is
/// byte-identical.
class CheckpointFile {
 public:
  void add_f32(const std::string& name, std::vector<std::uint32_t> extents,
               std::span<const float> values);
  void add_f64(const std::string& name, std::vector<std::uint32_t> extents,
               std::span<const double> values);
  void add_u64(const std::string& name, std::vector<std::uint32_t> extents,
               std::span<const std::uint64_t> values);
  void add_scalar_u64(const std::string& name, std::uint64_t value);

  bool contains(const std::string& name) const;
  /// Throws FormatError when the entry is missing.
  const CheckpointEntry& get(const std::string& name) const;
  std::uint64_t get_scalar_u64(const std::string& name) const;

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void save(const std::filesystem::path& path) const;
  static CheckpointFile load(const std::filesystem::path& path);

 private:
  void add_entry(CheckpointEntry entry);

  std::vector<CheckpointEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ctcycle
