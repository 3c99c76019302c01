#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rnntrack/dwi.hpp"
#include "rnntrack/sphere.hpp"

namespace rnntrack {

// Ordered points in continuous voxel coordinates.
struct Streamline {
  std::vector<Vec3> points;

  std::size_t size() const noexcept { return points.size(); }
  double arc_length() const;
  // Arc length with each axis scaled by its voxel size.
  double length_mm(const VoxelSize& voxel_size) const;

  friend bool operator==(const Streamline&, const Streamline&) = default;
};

struct Tractogram {
  std::vector<Streamline> streamlines;

  std::size_t size() const noexcept { return streamlines.size(); }

  friend bool operator==(const Tractogram&, const Tractogram&) = default;
};

// Points at arc-length multiples of `step` along the polyline, followed by
// the original final point when the remainder exceeds a rounding margin.
// Throws TooShort when the path is shorter than one step.
Streamline resample_equidistant(const Streamline& s, double step);

// Label j is the class nearest to the direction p_{j+1} - p_j; the final
// label is the EoF class. Throws InvalidStreamline on < 2 points or
// coincident consecutive points.
std::vector<std::size_t> extract_labels(const Streamline& s, const DirectionSet& ds);

Streamline reversed(const Streamline& s);

// All input streamlines followed by their reversals, in input order.
Tractogram augment_reverse(const Tractogram& t);

struct TrainingSequence {
  Eigen::MatrixXd inputs;             // n x K, row j = signal at p_j
  std::vector<std::size_t> labels;    // n entries, last is EoF

  std::size_t length() const noexcept { return labels.size(); }
};

TrainingSequence make_sequence(const Streamline& s, const PreprocessedDwi& vol, const DirectionSet& ds);

struct Dataset {
  std::vector<TrainingSequence> train;
  std::vector<TrainingSequence> valid;
  std::size_t dropped = 0;        // streamlines with points outside the volume
  std::size_t train_streamlines = 0;  // before reversal augmentation
};

inline constexpr std::uint64_t kDefaultDatasetSeed = 42;

// Drops out-of-volume or degenerate streamlines, shuffles the rest under
// `seed`, splits round(split * N) into training, then reversal-augments the
// training part only.
Dataset build_dataset(const Tractogram& t, const PreprocessedDwi& vol, const DirectionSet& ds, double split,
                      std::uint64_t seed = kDefaultDatasetSeed);

std::vector<char> encode_tractogram(const Tractogram& t);
Tractogram decode_tractogram(std::span<const char> bytes);
Tractogram load_tractogram(const std::filesystem::path& path);
void save_tractogram(const Tractogram& t, const std::filesystem::path& path);

}  // namespace rnntrack
