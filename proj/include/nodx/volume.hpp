#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodx {

/// 3-d scalar field on a regular grid with physical spacing and origin.
/// Flat storage with x varying fastest: index = (z * ny + y) * nx + x.
template <class T>
struct Grid3 {
  std::array<int, 3> extents{0, 0, 0};          // nx, ny, nz
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
  std::array<double, 3> origin{0.0, 0.0, 0.0};   // mm
  std::vector<T> values;

  Grid3() = default;
  Grid3(std::array<int, 3> ext, std::array<double, 3> sp,
        std::array<double, 3> org = {0.0, 0.0, 0.0})
      : extents(ext), spacing(sp), origin(org) {
    validate();
    values.assign(numel(), T{});
  }

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (extents[i] <= 0) throw std::invalid_argument("Grid3: extents must be positive");
      if (!(spacing[i] > 0.0))
        throw std::invalid_argument("Grid3: spacing must be strictly positive");
    }
  }

  size_t numel() const {
    return static_cast<size_t>(extents[0]) * extents[1] * extents[2];
  }
  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(z) * extents[1] + y) * extents[0] + x;
  }
  T& at(int x, int y, int z) { return values[index(x, y, z)]; }
  T at(int x, int y, int z) const { return values[index(x, y, z)]; }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < extents[0] && y < extents[1] && z < extents[2];
  }
  bool same_extents(const Grid3& o) const { return extents == o.extents; }
};

using VolumeGrid = Grid3<double>;
using MaskGrid = Grid3<uint8_t>;

/// MetaImage (.mha, local uncompressed data) reader/writer. Readers for other
/// containers can be registered by extension.
VolumeGrid read_volume_mha(const std::filesystem::path& path);
MaskGrid read_mask_mha(const std::filesystem::path& path);
void write_volume_mha(const std::filesystem::path& path, const VolumeGrid& v);
void write_mask_mha(const std::filesystem::path& path, const MaskGrid& m);

using VolumeReader = std::function<VolumeGrid(const std::filesystem::path&)>;
void register_volume_reader(const std::string& extension, VolumeReader reader);
VolumeGrid read_volume(const std::filesystem::path& path);

}  // namespace nodx
