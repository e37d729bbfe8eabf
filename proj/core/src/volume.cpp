#include "ctcycle/volume.hpp"

#include <cmath>
#include <fstream>

#include "binary_io.hpp"

namespace ctcycle {

namespace {
constexpr std::uint32_t kVolumeVersion = 1;
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Native: return "native";
    case Phase::Venous: return "venous";
    case Phase::Arterial: return "arterial";
  }
  return "unknown";
}

Phase phase_from_name(const std::string& name) {
  if (name == "native") return Phase::Native;
  if (name == "venous") return Phase::Venous;
  if (name == "arterial") return Phase::Arterial;
  throw ValidationError("unknown phase name \"" + name + "\" (native|venous|arterial)");
}

Volume Volume::zeros(std::int64_t depth, std::int64_t height, std::int64_t width) {
  Volume v;
  v.depth = depth;
  v.height = height;
  v.width = width;
  v.voxels.assign(static_cast<std::size_t>(depth * height * width), 0.0f);
  v.validate();
  return v;
}

void Volume::validate() const {
  if (depth < 1 || height < 1 || width < 1) {
    throw ValidationError("volume extents must be positive");
  }
  if (height != width) {
    throw ValidationError("volume slices must be square, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
  if (static_cast<std::int64_t>(voxels.size()) != voxel_count()) {
    throw ValidationError("voxel buffer size does not match extents");
  }
  for (const float v : voxels) {
    if (!std::isfinite(v)) throw NumericError("volume contains non-finite voxels");
  }
}

std::span<float> Volume::slice(std::int64_t z) {
  return std::span<float>(voxels.data() + z * slice_size(), static_cast<std::size_t>(slice_size()));
}

std::span<const float> Volume::slice(std::int64_t z) const {
  return std::span<const float>(voxels.data() + z * slice_size(),
                                static_cast<std::size_t>(slice_size()));
}

double preprocess_value(double raw, double intercept) { return (raw - intercept) / 1000.0; }

Volume preprocess(const Volume& raw, double intercept) {
  Volume out = raw;
  out.intercept = static_cast<float>(intercept);
  for (auto& v : out.voxels) {
    v = static_cast<float>(preprocess_value(static_cast<double>(v), intercept));
  }
  return out;
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot open volume file " + path.string());
  io::Reader r(file, path.string());
  r.expect_magic("CYTV");
  const auto version = r.read_u32("version");
  if (version != kVolumeVersion) {
    throw FormatError(path.string() + ": unsupported CYTV version " + std::to_string(version) +
                      " at byte offset 4");
  }
  Volume v;
  v.depth = r.read_u32("depth");
  v.height = r.read_u32("height");
  v.width = r.read_u32("width");
  const auto tag = r.read_u8("phase tag");
  if (tag > 2) {
    throw FormatError(path.string() + ": invalid phase tag " + std::to_string(tag) +
                      " at byte offset 16");
  }
  v.phase = static_cast<Phase>(tag);
  v.intercept = r.read_f32("intercept");
  v.slice_thickness_mm = r.read_f32("slice thickness");
  if (v.depth < 1 || v.height < 1 || v.width < 1) {
    throw FormatError(path.string() + ": non-positive extents in header");
  }
  v.voxels.resize(static_cast<std::size_t>(v.voxel_count()));
  io::read_f32_span(r, v.voxels.data(), v.voxels.size(), "voxel payload");
  r.expect_eof();
  v.validate();
  return v;
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  volume.validate();
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot open " + path.string() + " for writing");
  io::Writer w(file);
  w.write_bytes("CYTV", 4);
  w.write_u32(kVolumeVersion);
  w.write_u32(static_cast<std::uint32_t>(volume.depth));
  w.write_u32(static_cast<std::uint32_t>(volume.height));
  w.write_u32(static_cast<std::uint32_t>(volume.width));
  w.write_u8(static_cast<std::uint8_t>(volume.phase));
  w.write_f32(volume.intercept);
  w.write_f32(volume.slice_thickness_mm);
  io::write_f32_span(w, volume.voxels.data(), volume.voxels.size());
  if (!file) throw FormatError("write failed for " + path.string());
}

}  // namespace ctcycle
