#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rnntrack/sphere.hpp"

namespace rnntrack {

using Dims = std::array<std::size_t, 3>;
using VoxelSize = std::array<float, 3>;

inline std::size_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

// Linear voxel index, x fastest.
inline std::size_t voxel_index(const Dims& d, std::size_t x, std::size_t y, std::size_t z) {
  return (z * d[1] + y) * d[0] + x;
}

// True when p lies in [0, dims) on every axis. Voxel (i, j, k) covers
// [i, i+1) x [j, j+1) x [k, k+1); its center is at (i+0.5, j+0.5, k+0.5).
bool inside(const Dims& d, const Vec3& p);

struct GradientTable {
  std::vector<Vec3> bvecs;
  std::vector<double> bvals;

  // b-values at or below this are treated as non-diffusion-weighted.
  static constexpr double kB0Threshold = 50.0;

  std::size_t size() const noexcept { return bvals.size(); }
  std::vector<std::size_t> b0_indices() const;
  std::vector<std::size_t> dwi_indices() const;

  // Throws InvalidData on length mismatch, missing b0, or non-unit bvecs.
  void validate() const;

  static GradientTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// 4-D grid of float samples, channel fastest, then x, y, z.
struct DwiVolume {
  Dims dims{0, 0, 0};
  VoxelSize voxel_size{1.0f, 1.0f, 1.0f};
  std::size_t channels = 0;
  std::vector<float> data;

  DwiVolume() = default;
  DwiVolume(Dims d, VoxelSize vs, std::size_t c)
      : dims(d), voxel_size(vs), channels(c), data(voxel_count(d) * c, 0.0f) {}

  float& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c) {
    return data[voxel_index(dims, x, y, z) * channels + c];
  }
  float at(std::size_t x, std::size_t y, std::size_t z, std::size_t c) const {
    return data[voxel_index(dims, x, y, z) * channels + c];
  }

  friend bool operator==(const DwiVolume&, const DwiVolume&) = default;
};

struct BrainMask {
  Dims dims{0, 0, 0};
  std::vector<std::uint8_t> occupied;

  BrainMask() = default;
  explicit BrainMask(Dims d) : dims(d), occupied(voxel_count(d), 0) {}

  bool at(std::size_t x, std::size_t y, std::size_t z) const { return occupied[voxel_index(dims, x, y, z)] != 0; }
  std::size_t count() const;

  friend bool operator==(const BrainMask&, const BrainMask&) = default;
};

// Diffusion signal resampled onto a fixed hemisphere direction set,
// b0-normalized and mean-centred per channel. Stored in double precision.
class PreprocessedDwi {
 public:
  PreprocessedDwi(Dims dims, VoxelSize voxel_size, DirectionSet targets, std::vector<double> data,
                  Eigen::VectorXd channel_means);

  const Dims& dims() const noexcept { return dims_; }
  const VoxelSize& voxel_size() const noexcept { return voxel_size_; }
  std::size_t channels() const noexcept { return targets_.size(); }
  const DirectionSet& targets() const noexcept { return targets_; }
  const Eigen::VectorXd& channel_means() const noexcept { return means_; }

  double value(std::size_t x, std::size_t y, std::size_t z, std::size_t c) const {
    return data_[voxel_index(dims_, x, y, z) * channels() + c];
  }
  std::span<const double> voxel(std::size_t x, std::size_t y, std::size_t z) const {
    return {data_.data() + voxel_index(dims_, x, y, z) * channels(), channels()};
  }

  bool contains(const Vec3& p) const { return inside(dims_, p); }

  // Trilinear interpolation between voxel centers, replicating edge voxels
  // over the outer half voxel. Throws OutOfBounds outside [0, dims).
  Eigen::VectorXd sample_at(const Vec3& p) const;
  void sample_at(const Vec3& p, Eigen::Ref<Eigen::VectorXd> out) const;

 private:
  Dims dims_;
  VoxelSize voxel_size_;
  DirectionSet targets_;
  std::vector<double> data_;
  Eigen::VectorXd means_;
};

struct PreprocessOptions {
  int sh_order = kDefaultShOrder;
  double sh_regularization = kDefaultShRegularization;
  double b0_floor = 1e-6;
  bool center = true;
};

// Per voxel: average the b0 channels, divide the diffusion channels by
// max(b0, floor), fit SH on the measured directions and evaluate on
// `targets`. Then subtract each resampled channel's mean over the mask
// (all voxels when `mask` is null).
PreprocessedDwi preprocess(const DwiVolume& raw, const GradientTable& gradients,
                           const DirectionSet& targets, const BrainMask* mask = nullptr,
                           const PreprocessOptions& options = {});

inline constexpr std::size_t kDefaultInputDirections = 100;

DwiVolume load_volume(const std::filesystem::path& path);
void save_volume(const DwiVolume& volume, const std::filesystem::path& path);
std::vector<char> encode_volume(const DwiVolume& volume);
DwiVolume decode_volume(std::span<const char> bytes);

BrainMask load_mask(const std::filesystem::path& path);
void save_mask(const BrainMask& mask, const std::filesystem::path& path, VoxelSize voxel_size = {1.0f, 1.0f, 1.0f});

}  // namespace rnntrack
